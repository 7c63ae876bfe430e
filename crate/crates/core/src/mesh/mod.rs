//! Polygonal meshes of a square domain.
//!
//! A [`Mesh`] stores vertices, faces (edges) and convex-or-star-shaped
//! polygonal cells together with the geometric quantities both schemes need:
//! face midpoints, lengths and unit normals, cell centroids, areas and
//! diameters. Meshes are validated on construction and immutable afterwards.

mod generate;
mod io;

pub use generate::{generate_hex_mesh, generate_rect_mesh, MeshFamily};
pub use io::{load_mesh, parse_mesh, write_mesh};

use std::collections::HashMap;

use nalgebra::{Point2, Vector2};
use thiserror::Error;

pub type Point = Point2<f64>;
pub type Vector = Vector2<f64>;

/// Relative tolerance for area sums and closure checks.
pub const GEOMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid domain: lower bound {0} must be below upper bound {1}")]
    InvalidDomain(f64, f64),
    #[error("mesh resolution must be at least 1")]
    InvalidResolution,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cell {cell}: {message}")]
    Cell { cell: usize, message: String },
    #[error("face {face}: {message}")]
    Face { face: usize, message: String },
    #[error("mesh area {actual} does not match domain area {expected}")]
    AreaMismatch { actual: f64, expected: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The square domain `(min, max)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainSpec {
    min: f64,
    max: f64,
}

impl DomainSpec {
    pub fn new(min: f64, max: f64) -> Result<Self, MeshError> {
        if !(min < max) || !min.is_finite() || !max.is_finite() {
            return Err(MeshError::InvalidDomain(min, max));
        }
        Ok(Self { min, max })
    }

    /// `(-1, 1)^2`, the domain of both built-in problems.
    pub fn unit_square() -> Self {
        Self { min: -1.0, max: 1.0 }
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn side(&self) -> f64 {
        self.max - self.min
    }

    pub fn area(&self) -> f64 {
        self.side() * self.side()
    }

    pub fn on_boundary(&self, x: &Point, tol: f64) -> bool {
        let t = tol * self.side();
        (x.x - self.min).abs() <= t || (x.x - self.max).abs() <= t || (x.y - self.min).abs() <= t || (x.y - self.max).abs() <= t
    }
}

#[derive(Debug, Clone)]
pub struct Face {
    pub vertices: [usize; 2],
    /// The cell the normal points out of.
    pub left: usize,
    /// `None` on the boundary.
    pub right: Option<usize>,
    pub midpoint: Point,
    pub length: f64,
    /// Unit normal, outward from `left`.
    pub normal: Vector,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.right.is_none()
    }

    /// Unit normal pointing out of `cell`.
    pub fn normal_from(&self, cell: usize) -> Vector {
        if cell == self.left {
            self.normal
        } else {
            -self.normal
        }
    }
}

#[derive(Debug, Clone)]
pub struct Cell {
    /// Counter-clockwise vertex loop.
    pub vertices: Vec<usize>,
    /// `faces[i]` joins `vertices[i]` and `vertices[i + 1]`.
    pub faces: Vec<usize>,
    /// Area centroid.
    pub barycenter: Point,
    pub area: f64,
    pub diameter: f64,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Point>,
    faces: Vec<Face>,
    cells: Vec<Cell>,
    boundary_faces: Vec<usize>,
}

impl Mesh {
    /// Builds a mesh from a vertex list and polygonal cells given as vertex
    /// loops. Loops may be in either orientation; faces are created in order
    /// of first appearance.
    pub fn from_polygons(vertices: Vec<Point>, polygons: Vec<Vec<usize>>) -> Result<Self, MeshError> {
        let mut edge_to_face: HashMap<(usize, usize), usize> = HashMap::new();
        let mut faces: Vec<(usize, usize, usize, Option<usize>)> = Vec::new();
        let mut cells = Vec::with_capacity(polygons.len());
        for (c, mut poly) in polygons.into_iter().enumerate() {
            if poly.len() < 3 {
                return Err(MeshError::Cell { cell: c, message: "fewer than three vertices".into() });
            }
            if let Some(&bad) = poly.iter().find(|&&v| v >= vertices.len()) {
                return Err(MeshError::Cell { cell: c, message: format!("vertex {bad} out of range") });
            }
            if signed_area(&vertices, &poly) < 0.0 {
                poly.reverse();
            }
            let n = poly.len();
            let mut cell_faces = Vec::with_capacity(n);
            for i in 0..n {
                let (a, b) = (poly[i], poly[(i + 1) % n]);
                let key = (a.min(b), a.max(b));
                let id = match edge_to_face.get(&key) {
                    Some(&f) => {
                        let entry = &mut faces[f];
                        if entry.3.is_some() || entry.2 == c {
                            return Err(MeshError::Face { face: f, message: "shared by more than two cells".into() });
                        }
                        entry.3 = Some(c);
                        f
                    }
                    None => {
                        faces.push((a, b, c, None));
                        edge_to_face.insert(key, faces.len() - 1);
                        faces.len() - 1
                    }
                };
                cell_faces.push(id);
            }
            cells.push((poly, cell_faces));
        }
        Self::assemble(vertices, faces, cells)
    }

    /// Builds a mesh from explicit face records `(v0, v1, left, right)` and
    /// per-cell face lists (any order). Used by the file loader.
    pub fn from_faces(
        vertices: Vec<Point>,
        faces: Vec<(usize, usize, usize, Option<usize>)>,
        cell_faces: Vec<Vec<usize>>,
    ) -> Result<Self, MeshError> {
        for (f, &(v0, v1, l, r)) in faces.iter().enumerate() {
            if v0 >= vertices.len() || v1 >= vertices.len() || v0 == v1 {
                return Err(MeshError::Face { face: f, message: "bad vertex indices".into() });
            }
            if l >= cell_faces.len() || r.is_some_and(|r| r >= cell_faces.len() || r == l) {
                return Err(MeshError::Face { face: f, message: "bad adjacent cell indices".into() });
            }
        }
        // adjacency must be symmetric
        for (c, list) in cell_faces.iter().enumerate() {
            for &f in list {
                let Some(&(_, _, l, r)) = faces.get(f) else {
                    return Err(MeshError::Cell { cell: c, message: format!("face {f} out of range") });
                };
                if l != c && r != Some(c) {
                    return Err(MeshError::Face { face: f, message: format!("does not list cell {c}") });
                }
            }
        }
        for (f, &(_, _, l, r)) in faces.iter().enumerate() {
            for c in std::iter::once(l).chain(r) {
                if !cell_faces[c].contains(&f) {
                    return Err(MeshError::Face { face: f, message: format!("cell {c} does not list it") });
                }
            }
        }
        let mut cells = Vec::with_capacity(cell_faces.len());
        for (c, list) in cell_faces.into_iter().enumerate() {
            let (loop_vertices, ordered) = chain_faces(c, &faces, &list)?;
            let (loop_vertices, ordered) = if signed_area(&vertices, &loop_vertices) < 0.0 {
                // reverse the loop; faces[i] must join v[i] and v[i+1]
                let n = loop_vertices.len();
                let v: Vec<usize> = (0..n).map(|i| loop_vertices[(n - i) % n]).collect();
                let f: Vec<usize> = (0..n).map(|i| ordered[(2 * n - 1 - i) % n]).collect();
                (v, f)
            } else {
                (loop_vertices, ordered)
            };
            cells.push((loop_vertices, ordered));
        }
        Self::assemble(vertices, faces, cells)
    }

    fn assemble(
        vertices: Vec<Point>,
        raw_faces: Vec<(usize, usize, usize, Option<usize>)>,
        raw_cells: Vec<(Vec<usize>, Vec<usize>)>,
    ) -> Result<Self, MeshError> {
        let mut cells = Vec::with_capacity(raw_cells.len());
        for (c, (loop_vertices, faces)) in raw_cells.into_iter().enumerate() {
            let area = signed_area(&vertices, &loop_vertices);
            if !(area > 0.0) {
                return Err(MeshError::Cell { cell: c, message: format!("non-positive area {area:e}") });
            }
            let barycenter = polygon_centroid(&vertices, &loop_vertices, area);
            let mut diameter: f64 = 0.0;
            for (i, &a) in loop_vertices.iter().enumerate() {
                for &b in &loop_vertices[i + 1..] {
                    diameter = diameter.max((vertices[a] - vertices[b]).norm());
                }
            }
            cells.push(Cell { vertices: loop_vertices, faces, barycenter, area, diameter });
        }
        let mut faces = Vec::with_capacity(raw_faces.len());
        let mut boundary_faces = Vec::new();
        for (f, (v0, v1, left, right)) in raw_faces.into_iter().enumerate() {
            let (a, b) = (vertices[v0], vertices[v1]);
            let t = b - a;
            let length = t.norm();
            if !(length > 0.0) {
                return Err(MeshError::Face { face: f, message: "zero length".into() });
            }
            let mut normal = Vector::new(t.y, -t.x) / length;
            let midpoint = nalgebra::center(&a, &b);
            if normal.dot(&(midpoint - cells[left].barycenter)) < 0.0 {
                normal = -normal;
            }
            if right.is_none() {
                boundary_faces.push(f);
            }
            faces.push(Face { vertices: [v0, v1], left, right, midpoint, length, normal });
        }
        let mesh = Self { vertices, faces, cells, boundary_faces };
        mesh.check_invariants()?;
        Ok(mesh)
    }

    /// Checks positivity of areas, face-loop consistency and the closure
    /// identity `sum |s| n_{K,s} = 0` on every cell.
    pub fn check_invariants(&self) -> Result<(), MeshError> {
        for (c, cell) in self.cells.iter().enumerate() {
            if !(cell.area > 0.0) {
                return Err(MeshError::Cell { cell: c, message: "non-positive area".into() });
            }
            let n = cell.vertices.len();
            let mut closure = Vector::zeros();
            let mut perimeter = 0.0;
            for (i, &f) in cell.faces.iter().enumerate() {
                let face = &self.faces[f];
                let (a, b) = (cell.vertices[i], cell.vertices[(i + 1) % n]);
                if !((face.vertices == [a, b]) || (face.vertices == [b, a])) {
                    return Err(MeshError::Cell { cell: c, message: format!("face {f} breaks the vertex loop") });
                }
                if face.left != c && face.right != Some(c) {
                    return Err(MeshError::Face { face: f, message: format!("not adjacent to cell {c}") });
                }
                closure += face.length * face.normal_from(c);
                perimeter += face.length;
                // sub-triangle towards the centroid must be non-degenerate
                if face.normal_from(c).dot(&(face.midpoint - cell.barycenter)) <= 0.0 {
                    return Err(MeshError::Cell { cell: c, message: format!("not star-shaped about its centroid at face {f}") });
                }
            }
            if closure.norm() > GEOMETRY_TOL * perimeter.max(1.0) {
                return Err(MeshError::Cell { cell: c, message: format!("open polygon (closure {:e})", closure.norm()) });
            }
        }
        for (f, face) in self.faces.iter().enumerate() {
            if ((face.normal.norm()) - 1.0).abs() > 1e-14 {
                return Err(MeshError::Face { face: f, message: "normal not unit length".into() });
            }
            for c in std::iter::once(face.left).chain(face.right) {
                if !self.cells[c].faces.contains(&f) {
                    return Err(MeshError::Face { face: f, message: format!("cell {c} does not list it") });
                }
            }
        }
        Ok(())
    }

    /// Additionally checks that the cells tile `domain`.
    pub fn check_covers(&self, domain: &DomainSpec) -> Result<(), MeshError> {
        let actual = self.total_area();
        let expected = domain.area();
        if (actual - expected).abs() > GEOMETRY_TOL * expected * 10.0 {
            return Err(MeshError::AreaMismatch { actual, expected });
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn boundary_faces(&self) -> &[usize] {
        &self.boundary_faces
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn total_area(&self) -> f64 {
        self.cells.iter().map(|c| c.area).sum()
    }

    /// Geometric mesh size: the largest cell diameter.
    pub fn mesh_size(&self) -> f64 {
        self.cells.iter().map(|c| c.diameter).fold(0.0, f64::max)
    }

    /// Vertices lying on a boundary face, as a mask.
    pub fn boundary_vertex_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.vertices.len()];
        for &f in &self.boundary_faces {
            for &v in &self.faces[f].vertices {
                mask[v] = true;
            }
        }
        mask
    }

    /// Distance from the centroid of `cell` to the line through face `face`.
    pub fn face_distance(&self, cell: usize, face: usize) -> f64 {
        let f = &self.faces[face];
        (f.midpoint - self.cells[cell].barycenter).dot(&f.normal_from(cell))
    }

    /// Triangle `(centroid, a, b)` for the `i`-th face of `cell`, counter-clockwise.
    pub fn sub_triangle(&self, cell: usize, i: usize) -> [Point; 3] {
        let c = &self.cells[cell];
        let n = c.vertices.len();
        [c.barycenter, self.vertices[c.vertices[i]], self.vertices[c.vertices[(i + 1) % n]]]
    }
}

/// Free function form of [`Mesh::mesh_size`].
pub fn mesh_size(mesh: &Mesh) -> f64 {
    mesh.mesh_size()
}

fn signed_area(vertices: &[Point], poly: &[usize]) -> f64 {
    let n = poly.len();
    let mut a = 0.0;
    for i in 0..n {
        let p = vertices[poly[i]];
        let q = vertices[poly[(i + 1) % n]];
        a += p.x * q.y - q.x * p.y;
    }
    0.5 * a
}

fn polygon_centroid(vertices: &[Point], poly: &[usize], area: f64) -> Point {
    // shifted to the first vertex for accuracy on small cells far from the origin
    let o = vertices[poly[0]];
    let n = poly.len();
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        let p = vertices[poly[i]] - o;
        let q = vertices[poly[(i + 1) % n]] - o;
        let cross = p.x * q.y - q.x * p.y;
        cx += (p.x + q.x) * cross;
        cy += (p.y + q.y) * cross;
    }
    Point::new(o.x + cx / (6.0 * area), o.y + cy / (6.0 * area))
}

/// Orders an unordered face list of one cell into a closed vertex loop.
fn chain_faces(
    cell: usize,
    faces: &[(usize, usize, usize, Option<usize>)],
    list: &[usize],
) -> Result<(Vec<usize>, Vec<usize>), MeshError> {
    if list.len() < 3 {
        return Err(MeshError::Cell { cell, message: "fewer than three faces".into() });
    }
    let mut remaining: Vec<usize> = list.to_vec();
    let first = remaining.remove(0);
    let (start, mut current) = (faces[first].0, faces[first].1);
    let mut loop_vertices = vec![start];
    let mut ordered = vec![first];
    while !remaining.is_empty() {
        let pos = remaining
            .iter()
            .position(|&f| faces[f].0 == current || faces[f].1 == current)
            .ok_or_else(|| MeshError::Cell { cell, message: "faces do not form a closed loop".into() })?;
        let f = remaining.remove(pos);
        loop_vertices.push(current);
        ordered.push(f);
        current = if faces[f].0 == current { faces[f].1 } else { faces[f].0 };
    }
    if current != start {
        return Err(MeshError::Cell { cell, message: "faces do not form a closed loop".into() });
    }
    Ok((loop_vertices, ordered))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square_two_triangles() -> Mesh {
        let v = vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(1.0, 1.0), Point::new(0.0, 1.0)];
        Mesh::from_polygons(v, vec![vec![0, 1, 2], vec![0, 3, 2]]).unwrap()
    }

    #[test]
    fn polygons_are_reoriented_and_faces_shared() {
        let m = unit_square_two_triangles();
        assert_eq!(m.n_cells(), 2);
        assert_eq!(m.n_faces(), 5);
        assert_eq!(m.boundary_faces().len(), 4);
        assert!((m.total_area() - 1.0).abs() < 1e-15);
        let interior: Vec<_> = m.faces().iter().filter(|f| !f.is_boundary()).collect();
        assert_eq!(interior.len(), 1);
        let f = interior[0];
        let out = f.midpoint - m.cells()[f.left].barycenter;
        assert!(f.normal.dot(&out) > 0.0);
    }

    #[test]
    fn zero_area_cell_is_rejected() {
        let v = vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(2.0, 0.0)];
        let err = Mesh::from_polygons(v, vec![vec![0, 1, 2]]).unwrap_err();
        assert!(matches!(err, MeshError::Cell { cell: 0, .. }), "{err}");
    }

    #[test]
    fn from_faces_orders_loops() {
        let v = vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(1.0, 1.0), Point::new(0.0, 1.0)];
        let faces = vec![(2, 3, 0, None), (0, 1, 0, None), (3, 0, 0, None), (1, 2, 0, None)];
        let m = Mesh::from_faces(v, faces, vec![vec![0, 1, 2, 3]]).unwrap();
        assert_eq!(m.cells()[0].vertices.len(), 4);
        assert!((m.cells()[0].area - 1.0).abs() < 1e-15);
        assert!((m.cells()[0].barycenter - Point::new(0.5, 0.5)).norm() < 1e-15);
    }

    #[test]
    fn asymmetric_adjacency_is_rejected() {
        let m = unit_square_two_triangles();
        let faces: Vec<_> = m.faces().iter().map(|f| (f.vertices[0], f.vertices[1], f.left, f.right)).collect();
        let mut lists: Vec<Vec<usize>> = m.cells().iter().map(|c| c.faces.clone()).collect();
        let shared = m.faces().iter().position(|f| !f.is_boundary()).unwrap();
        lists[1].retain(|&f| f != shared);
        assert!(Mesh::from_faces(m.vertices().to_vec(), faces, lists).is_err());
    }

    #[test]
    fn domain_rejects_empty_interval() {
        assert!(DomainSpec::new(1.0, 1.0).is_err());
        assert!(DomainSpec::new(2.0, 1.0).is_err());
        assert_eq!(DomainSpec::unit_square().area(), 4.0);
    }
}
