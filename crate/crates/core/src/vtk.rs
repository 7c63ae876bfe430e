//! Legacy ASCII VTK output of reconstructed fields.
//!
//! Cell-based schemes are written as the mesh polygons with `CELL_DATA`
//! (the reconstruction is piecewise constant); the nodal scheme as its
//! triangulation with `POINT_DATA`.

use std::io::{self, Write};

use crate::gdm::{GradientDiscretisation, SchemeKind};

const VTK_TRIANGLE: u8 = 5;
const VTK_POLYGON: u8 = 7;

/// Writes the named lifted vectors of `gd` as one unstructured grid.
pub fn write_vtk(gd: &dyn GradientDiscretisation, title: &str, fields: &[(&str, &[f64])], out: &mut dyn Write) -> io::Result<()> {
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "{}", title.replace('\n', " "))?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    match gd.kind() {
        SchemeKind::Hmm => write_cells(gd, fields, out),
        SchemeKind::P1 => write_nodes(gd, fields, out),
    }
}

fn write_points(points: impl ExactSizeIterator<Item = (f64, f64)>, out: &mut dyn Write) -> io::Result<()> {
    writeln!(out, "POINTS {} double", points.len())?;
    for (x, y) in points {
        writeln!(out, "{x:.17e} {y:.17e} 0")?;
    }
    Ok(())
}

fn write_topology(cells: &[Vec<usize>], kind: u8, out: &mut dyn Write) -> io::Result<()> {
    let size: usize = cells.iter().map(|c| c.len() + 1).sum();
    writeln!(out, "CELLS {} {size}", cells.len())?;
    for c in cells {
        write!(out, "{}", c.len())?;
        for v in c {
            write!(out, " {v}")?;
        }
        writeln!(out)?;
    }
    writeln!(out, "CELL_TYPES {}", cells.len())?;
    for _ in cells {
        writeln!(out, "{kind}")?;
    }
    Ok(())
}

fn write_scalars(name: &str, values: impl Iterator<Item = f64>, out: &mut dyn Write) -> io::Result<()> {
    writeln!(out, "SCALARS {name} double 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for v in values {
        writeln!(out, "{v:.17e}")?;
    }
    Ok(())
}

fn write_cells(gd: &dyn GradientDiscretisation, fields: &[(&str, &[f64])], out: &mut dyn Write) -> io::Result<()> {
    let mesh = gd.mesh();
    write_points(mesh.vertices().iter().map(|p| (p.x, p.y)), out)?;
    let polys: Vec<Vec<usize>> = mesh.cells().iter().map(|c| c.vertices.clone()).collect();
    write_topology(&polys, VTK_POLYGON, out)?;
    // one piece per cell suffices: the value is constant on the cell
    let mut first = vec![usize::MAX; mesh.n_cells()];
    for (k, p) in gd.pieces().iter().enumerate() {
        if first[p.cell] == usize::MAX {
            first[p.cell] = k;
        }
    }
    writeln!(out, "CELL_DATA {}", mesh.n_cells())?;
    for (name, u) in fields {
        let values = first.iter().map(|&k| {
            let p = &gd.pieces()[k];
            p.value_at(u, &p.centroid())
        });
        write_scalars(name, values, out)?;
    }
    Ok(())
}

fn write_nodes(gd: &dyn GradientDiscretisation, fields: &[(&str, &[f64])], out: &mut dyn Write) -> io::Result<()> {
    write_points(gd.dof_points().iter().map(|p| (p.x, p.y)), out)?;
    let tris: Vec<Vec<usize>> = gd.pieces().iter().map(|p| p.dofs.clone()).collect();
    write_topology(&tris, VTK_TRIANGLE, out)?;
    writeln!(out, "POINT_DATA {}", gd.lifted_len())?;
    for (name, u) in fields {
        write_scalars(name, u.iter().copied(), out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::mesh::{generate_rect_mesh, DomainSpec};
    use crate::scheme::{build_scheme, SchemeOptions};

    fn render(kind: SchemeKind) -> String {
        let mesh = Arc::new(generate_rect_mesh(&DomainSpec::unit_square(), 2).unwrap());
        let gd = build_scheme(mesh, &SchemeOptions::new(kind)).unwrap();
        let u = gd.interpolate(&|x| x.x);
        let mut buf = Vec::new();
        write_vtk(gd.as_ref(), "t", &[("p", &u)], &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn hmm_writes_polygons_with_cell_data() {
        let s = render(SchemeKind::Hmm);
        assert!(s.contains("POINTS 9 double"));
        assert!(s.contains("CELLS 4 20"));
        assert!(s.contains("CELL_DATA 4"));
        assert!(!s.contains("POINT_DATA"));
    }

    #[test]
    fn p1_writes_triangles_with_point_data() {
        let s = render(SchemeKind::P1);
        // 9 vertices + 4 centroids, 4 fan triangles per square
        assert!(s.contains("POINTS 13 double"));
        assert!(s.contains("CELLS 16 64"));
        assert!(s.contains("POINT_DATA 13"));
    }
}
