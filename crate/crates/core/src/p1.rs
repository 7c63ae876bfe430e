//! Conforming piecewise linear scheme on the triangulation obtained by
//! joining every cell centroid to the cell vertices. Unknowns are nodal values
//! at the mesh vertices and the cell centroids; boundary vertices carry the
//! Dirichlet data.

use std::sync::Arc;

use thiserror::Error;

use crate::gdm::{assemble_mass, assemble_mass_lumped, Affine, GradientDiscretisation, Piece, SchemeKind};
use crate::mesh::{Mesh, Point, Vector};
use crate::sparse::CsrMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum P1Error {
    #[error("cell {cell}: sub-triangle {index} is degenerate (twice area {twice_area:e})")]
    DegenerateTriangle { cell: usize, index: usize, twice_area: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct P1Options {
    /// Use the row-sum lumped mass for the constrained equation.
    pub lumped_mass: bool,
}

impl Default for P1Options {
    fn default() -> Self {
        Self { lumped_mass: true }
    }
}

#[derive(Debug, Clone)]
pub struct P1 {
    mesh: Arc<Mesh>,
    options: P1Options,
    vertex_dof: Vec<usize>,
    n_free: usize,
    n_boundary: usize,
    pieces: Vec<Piece>,
    points: Vec<Point>,
}

/// Barycentric coordinate functions of a counter-clockwise triangle.
fn barycentric(tri: &[Point; 3]) -> Option<[Affine; 3]> {
    let (e1, e2) = (tri[1] - tri[0], tri[2] - tri[0]);
    let twice = e1.x * e2.y - e1.y * e2.x;
    if twice <= 0.0 {
        return None;
    }
    Some(std::array::from_fn(|i| {
        let (pj, pk) = (tri[(i + 1) % 3], tri[(i + 2) % 3]);
        let g = Vector::new(pj.y - pk.y, pk.x - pj.x) / twice;
        Affine { c: 1.0 - g.dot(&tri[i].coords), g }
    }))
}

pub fn build_p1(mesh: Arc<Mesh>, options: P1Options) -> Result<P1, P1Error> {
    let nv = mesh.n_vertices();
    let nc = mesh.n_cells();
    let on_boundary = mesh.boundary_vertex_mask();
    let mut vertex_dof = vec![usize::MAX; nv];
    let mut next = 0;
    for v in 0..nv {
        if !on_boundary[v] {
            vertex_dof[v] = next;
            next += 1;
        }
    }
    let centroid_base = next;
    next += nc;
    let n_free = next;
    for v in 0..nv {
        if on_boundary[v] {
            vertex_dof[v] = next;
            next += 1;
        }
    }
    let n_boundary = next - n_free;

    let mut points = vec![Point::origin(); next];
    for v in 0..nv {
        points[vertex_dof[v]] = mesh.vertices()[v];
    }
    for (c, cell) in mesh.cells().iter().enumerate() {
        points[centroid_base + c] = cell.barycenter;
    }

    let mut pieces = Vec::new();
    for (c, cell) in mesh.cells().iter().enumerate() {
        let m = cell.vertices.len();
        for i in 0..m {
            let tri = mesh.sub_triangle(c, i);
            let lambda = barycentric(&tri).ok_or_else(|| {
                let (e1, e2) = (tri[1] - tri[0], tri[2] - tri[0]);
                P1Error::DegenerateTriangle { cell: c, index: i, twice_area: e1.x * e2.y - e1.y * e2.x }
            })?;
            let dofs = vec![centroid_base + c, vertex_dof[cell.vertices[i]], vertex_dof[cell.vertices[(i + 1) % m]]];
            pieces.push(Piece {
                cell: c,
                triangle: tri,
                dofs,
                value: lambda.to_vec(),
                gradient: lambda.iter().map(|l| l.g).collect(),
            });
        }
    }
    Ok(P1 { mesh, options, vertex_dof, n_free, n_boundary, pieces, points })
}

impl P1 {
    pub fn options(&self) -> &P1Options {
        &self.options
    }

    pub fn mesh_arc(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn vertex_dof(&self, vertex: usize) -> usize {
        self.vertex_dof[vertex]
    }

    /// Values at the mesh vertices, in vertex order.
    pub fn vertex_values(&self, u: &[f64]) -> Vec<f64> {
        self.vertex_dof.iter().map(|&d| u[d]).collect()
    }

    fn nodal(&self, phi: &(dyn Fn(Point) -> f64 + Sync)) -> Vec<f64> {
        self.points.iter().map(|&x| phi(x)).collect()
    }
}

impl GradientDiscretisation for P1 {
    fn kind(&self) -> SchemeKind {
        SchemeKind::P1
    }

    fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    fn dof_count(&self) -> usize {
        self.n_free
    }

    fn boundary_dof_count(&self) -> usize {
        self.n_boundary
    }

    fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    fn dof_points(&self) -> &[Point] {
        &self.points
    }

    fn interpolate(&self, phi: &(dyn Fn(Point) -> f64 + Sync)) -> Vec<f64> {
        self.nodal(phi)
    }

    fn interpolate_mean(&self, phi: &(dyn Fn(Point) -> f64 + Sync), _refine: usize) -> Vec<f64> {
        self.nodal(phi)
    }

    fn boundary_values(&self, data: &(dyn Fn(Point) -> f64 + Sync)) -> Vec<f64> {
        self.points[self.n_free..].iter().map(|&x| data(x)).collect()
    }

    fn discrete_barrier(&self, chi: &(dyn Fn(Point) -> f64 + Sync)) -> Vec<f64> {
        self.points[..self.n_free].iter().map(|&x| chi(x)).collect()
    }

    fn obstacle_mass(&self) -> CsrMatrix {
        if self.options.lumped_mass {
            assemble_mass_lumped(self)
        } else {
            assemble_mass(self)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gdm::{assemble_diffusion, Coefficient};
    use crate::mesh::{generate_rect_mesh, DomainSpec};

    fn p1(n: usize) -> P1 {
        build_p1(Arc::new(generate_rect_mesh(&DomainSpec::unit_square(), n).unwrap()), P1Options::default()).unwrap()
    }

    #[test]
    fn barycentric_partition_of_unity() {
        let tri = [Point::new(0.1, 0.2), Point::new(1.5, -0.3), Point::new(0.4, 1.1)];
        let l = barycentric(&tri).unwrap();
        for (i, p) in tri.iter().enumerate() {
            for (j, lj) in l.iter().enumerate() {
                assert!((lj.eval(p) - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
        let x = Point::new(0.5, 0.3);
        assert!((l.iter().map(|a| a.eval(&x)).sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(barycentric(&[tri[0], tri[2], tri[1]]).is_none());
    }

    #[test]
    fn counts_on_two_by_two() {
        let s = p1(2);
        // free: centre vertex + 4 centroids; boundary: 8 vertices
        assert_eq!((s.dof_count(), s.boundary_dof_count()), (5, 8));
    }

    #[test]
    fn mass_integrates_to_area() {
        let s = p1(3);
        let m = assemble_mass(&s);
        let total: f64 = m.row_sums().iter().sum();
        assert!((total - 4.0).abs() < 1e-12);
        let lumped = s.obstacle_mass();
        assert!(lumped.nnz() == s.lifted_len());
    }

    #[test]
    fn stiffness_kernel_and_affine_exactness() {
        let s = p1(3);
        let k = assemble_diffusion(&s, &Coefficient::identity()).unwrap();
        assert!(k.mul_vec(&vec![1.0; s.lifted_len()]).iter().all(|v| v.abs() < 1e-12));
        let u = s.interpolate(&|x| 2.0 * x.x + 3.0 * x.y);
        for p in s.pieces() {
            assert!((p.gradient_of(&u) - Vector::new(2.0, 3.0)).norm() < 1e-12);
        }
    }
}
