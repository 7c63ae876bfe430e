//! Plain-text mesh format.
//!
//! ```text
//! polymesh 2d
//! <n_vertices>
//! x y                      (one line per vertex)
//! <n_faces>
//! v0 v1 cellL cellR        (cellR = -1 on the boundary)
//! <n_cells>
//! k f1 f2 ... fk           (face count, then face ids)
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::path::Path;

use super::{Mesh, MeshError, Point};

pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh, MeshError> {
    let text = std::fs::read_to_string(path)?;
    parse_mesh(&text)
}

pub fn write_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<(), MeshError> {
    std::fs::write(path, format_mesh(mesh))?;
    Ok(())
}

pub fn format_mesh(mesh: &Mesh) -> String {
    let mut s = String::from("polymesh 2d\n");
    let _ = writeln!(s, "{}", mesh.n_vertices());
    for v in mesh.vertices() {
        let _ = writeln!(s, "{:e} {:e}", v.x, v.y);
    }
    let _ = writeln!(s, "{}", mesh.n_faces());
    for f in mesh.faces() {
        let right = f.right.map_or(-1, |r| r as i64);
        let _ = writeln!(s, "{} {} {} {}", f.vertices[0], f.vertices[1], f.left, right);
    }
    let _ = writeln!(s, "{}", mesh.n_cells());
    for c in mesh.cells() {
        let _ = write!(s, "{}", c.faces.len());
        for f in &c.faces {
            let _ = write!(s, " {f}");
        }
        s.push('\n');
    }
    s
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next_record(&mut self) -> Result<(usize, Vec<&'a str>), MeshError> {
        for (i, line) in self.inner.by_ref() {
            let line = line.trim();
            self.last = i + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            return Ok((i + 1, line.split_whitespace().collect()));
        }
        Err(MeshError::Parse { line: self.last + 1, message: "unexpected end of file".into() })
    }

    fn count(&mut self, what: &str) -> Result<usize, MeshError> {
        let (line, tokens) = self.next_record()?;
        match tokens.as_slice() {
            [n] => n.parse().map_err(|_| MeshError::Parse { line, message: format!("expected {what} count") }),
            _ => Err(MeshError::Parse { line, message: format!("expected a single {what} count") }),
        }
    }
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize) -> Result<T, MeshError> {
    tok.parse().map_err(|_| MeshError::Parse { line, message: format!("invalid number `{tok}`") })
}

pub fn parse_mesh(text: &str) -> Result<Mesh, MeshError> {
    let mut lines = Lines { inner: text.lines().enumerate(), last: 0 };
    let (line, header) = lines.next_record()?;
    if header != ["polymesh", "2d"] {
        return Err(MeshError::Parse { line, message: "expected header `polymesh 2d`".into() });
    }
    let nv = lines.count("vertex")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (line, t) = lines.next_record()?;
        if t.len() != 2 {
            return Err(MeshError::Parse { line, message: "vertex record needs `x y`".into() });
        }
        let (x, y): (f64, f64) = (parse_num(t[0], line)?, parse_num(t[1], line)?);
        if !x.is_finite() || !y.is_finite() {
            return Err(MeshError::Parse { line, message: "non-finite coordinate".into() });
        }
        vertices.push(Point::new(x, y));
    }
    let nf = lines.count("face")?;
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (line, t) = lines.next_record()?;
        if t.len() != 4 {
            return Err(MeshError::Parse { line, message: "face record needs `v0 v1 cellL cellR`".into() });
        }
        let v0: usize = parse_num(t[0], line)?;
        let v1: usize = parse_num(t[1], line)?;
        let l: usize = parse_num(t[2], line)?;
        let r: i64 = parse_num(t[3], line)?;
        let r = match r {
            -1 => None,
            r if r >= 0 => Some(r as usize),
            _ => return Err(MeshError::Parse { line, message: "cellR must be -1 or a cell id".into() }),
        };
        faces.push((v0, v1, l, r));
    }
    let nc = lines.count("cell")?;
    let mut cells = Vec::with_capacity(nc);
    for _ in 0..nc {
        let (line, t) = lines.next_record()?;
        let k: usize = parse_num(t.first().copied().unwrap_or(""), line)?;
        if t.len() != k + 1 {
            return Err(MeshError::Parse { line, message: format!("cell record announces {k} faces, has {}", t.len() - 1) });
        }
        cells.push(t[1..].iter().map(|tok| parse_num(tok, line)).collect::<Result<Vec<usize>, _>>()?);
    }
    Mesh::from_faces(vertices, faces, cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_hex_mesh, DomainSpec};

    #[test]
    fn round_trip_preserves_connectivity() {
        let m = generate_hex_mesh(&DomainSpec::unit_square(), 5).unwrap();
        let back = parse_mesh(&format_mesh(&m)).unwrap();
        assert_eq!(back.n_cells(), m.n_cells());
        assert_eq!(back.n_faces(), m.n_faces());
        for (a, b) in m.faces().iter().zip(back.faces()) {
            assert_eq!((a.vertices, a.left, a.right), (b.vertices, b.left, b.right));
        }
        for (a, b) in m.cells().iter().zip(back.cells()) {
            let mut fa = a.faces.clone();
            let mut fb = b.faces.clone();
            fa.sort();
            fb.sort();
            assert_eq!(fa, fb);
            assert!((a.area - b.area).abs() < 1e-14);
        }
    }

    #[test]
    fn parse_error_reports_line() {
        let text = "polymesh 2d\n3\n0 0\n1 0\nbanana 1\n";
        match parse_mesh(text) {
            Err(MeshError::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_area_cell_is_an_invariant_error() {
        let text = "polymesh 2d\n3\n0 0\n1 0\n2 0\n3\n0 1 0 -1\n1 2 0 -1\n2 0 0 -1\n1\n3 0 1 2\n";
        match parse_mesh(text) {
            Err(MeshError::Cell { cell: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_header() {
        assert!(matches!(parse_mesh("trimesh\n"), Err(MeshError::Parse { line: 1, .. })));
    }
}
