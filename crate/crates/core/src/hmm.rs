//! Hybrid mimetic mixed scheme: one unknown per cell and per face.
//!
//! On the sub-triangle joining the cell centroid to face `s` the gradient is
//! the consistent cell gradient plus a stabilisation along the face normal,
//!
//! ```text
//! grad_K u   = (1/|K|) sum_s |s| (u_s - u_K) n_{K,s}
//! R_{K,s}(u) = u_s - u_K - grad_K u . (x_s - x_K)
//! grad_D u   = grad_K u + (stab / d_{K,s}) R_{K,s}(u) n_{K,s}
//! ```
//!
//! and the function reconstruction is piecewise constant on cells. Boundary
//! faces carry the Dirichlet data.

use std::sync::Arc;

use thiserror::Error;

use crate::gdm::{Affine, GradientDiscretisation, GramOperators, Piece, QualityError, SchemeKind};
use crate::mesh::{Mesh, Point, Vector, GEOMETRY_TOL};
use crate::quadrature::{integrate_segment, TriangleRule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HmmError {
    #[error("stabilisation parameter must be finite and non-negative, got {0}")]
    InvalidStabilisation(f64),
    #[error("cell {cell}: centroid is not strictly inside the half-plane of face {face} (distance {distance:e})")]
    DegenerateCell { cell: usize, face: usize, distance: f64 },
    #[error(transparent)]
    NotDefinite(#[from] QualityError),
}

/// How the Dirichlet value of a boundary face is taken from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FaceValue {
    #[default]
    Midpoint,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmmOptions {
    pub stab: f64,
    pub boundary_value: FaceValue,
}

impl Default for HmmOptions {
    fn default() -> Self {
        Self { stab: std::f64::consts::SQRT_2, boundary_value: FaceValue::Midpoint }
    }
}

#[derive(Debug, Clone)]
pub struct Hmm {
    mesh: Arc<Mesh>,
    options: HmmOptions,
    /// Lifted unknown of every face.
    face_dof: Vec<usize>,
    n_free: usize,
    n_boundary: usize,
    pieces: Vec<Piece>,
    points: Vec<Point>,
}

/// Gauss points per face for face means (exact up to degree 5).
const FACE_GAUSS: usize = 3;

pub fn build_hmm(mesh: Arc<Mesh>, options: HmmOptions) -> Result<Hmm, HmmError> {
    if !options.stab.is_finite() || options.stab < 0.0 {
        return Err(HmmError::InvalidStabilisation(options.stab));
    }
    let nc = mesh.n_cells();
    let mut face_dof = vec![usize::MAX; mesh.n_faces()];
    let mut next = nc;
    for (f, face) in mesh.faces().iter().enumerate() {
        if !face.is_boundary() {
            face_dof[f] = next;
            next += 1;
        }
    }
    let n_free = next;
    for (f, face) in mesh.faces().iter().enumerate() {
        if face.is_boundary() {
            face_dof[f] = next;
            next += 1;
        }
    }
    let n_boundary = next - n_free;

    let mut points = vec![Point::origin(); next];
    for (c, cell) in mesh.cells().iter().enumerate() {
        points[c] = cell.barycenter;
    }
    for (f, face) in mesh.faces().iter().enumerate() {
        points[face_dof[f]] = face.midpoint;
    }

    let mut pieces = Vec::with_capacity(mesh.cells().iter().map(|c| c.faces.len()).sum());
    for (c, cell) in mesh.cells().iter().enumerate() {
        let m = cell.faces.len();
        let mut dofs = Vec::with_capacity(m + 1);
        dofs.push(c);
        dofs.extend(cell.faces.iter().map(|&f| face_dof[f]));
        let mut value = vec![Affine::ZERO; m + 1];
        value[0] = Affine::ONE;

        // consistent gradient: coefficient of u_s (that of u_K vanishes by closure)
        let g: Vec<Vector> = cell
            .faces
            .iter()
            .map(|&f| {
                let face = &mesh.faces()[f];
                face.normal_from(c) * (face.length / cell.area)
            })
            .collect();

        for (i, &f) in cell.faces.iter().enumerate() {
            let face = &mesh.faces()[f];
            let d = mesh.face_distance(c, f);
            if d <= GEOMETRY_TOL * cell.diameter {
                return Err(HmmError::DegenerateCell { cell: c, face: f, distance: d });
            }
            let n = face.normal_from(c);
            let s = options.stab / d;
            let offset = face.midpoint - cell.barycenter;
            let mut gradient = vec![Vector::zeros(); m + 1];
            gradient[0] = -s * n;
            for j in 0..m {
                let r = if i == j { 1.0 } else { 0.0 } - offset.dot(&g[j]);
                gradient[j + 1] = g[j] + s * r * n;
            }
            pieces.push(Piece { cell: c, triangle: mesh.sub_triangle(c, i), dofs: dofs.clone(), value: value.clone(), gradient });
        }
    }

    let hmm = Hmm { mesh, options, face_dof, n_free, n_boundary, pieces, points };
    GramOperators::new(&hmm)?;
    Ok(hmm)
}

impl Hmm {
    pub fn options(&self) -> &HmmOptions {
        &self.options
    }

    pub fn mesh_arc(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn face_dof(&self, face: usize) -> usize {
        self.face_dof[face]
    }

    /// Cell unknowns come first, so cell values are `u[..n_cells]`.
    pub fn cell_values<'a>(&self, u: &'a [f64]) -> &'a [f64] {
        &u[..self.mesh.n_cells()]
    }

    fn cell_means(&self, phi: &(dyn Fn(Point) -> f64 + Sync), refine: usize) -> Vec<f64> {
        let rule = TriangleRule::degree5();
        let mesh = &*self.mesh;
        (0..mesh.n_cells())
            .map(|c| {
                let cell = &mesh.cells()[c];
                let total: f64 =
                    (0..cell.faces.len()).map(|i| rule.integrate_refined(&mesh.sub_triangle(c, i), refine, phi)).sum();
                total / cell.area
            })
            .collect()
    }

    fn face_mean(&self, face: usize, phi: &(dyn Fn(Point) -> f64 + Sync), refine: usize) -> f64 {
        let f = &self.mesh.faces()[face];
        let [a, b] = f.vertices.map(|v| self.mesh.vertices()[v]);
        let k = refine.max(1);
        let total: f64 = (0..k)
            .map(|j| {
                let s0 = a + (b - a) * (j as f64 / k as f64);
                let s1 = a + (b - a) * ((j + 1) as f64 / k as f64);
                integrate_segment(&s0, &s1, FACE_GAUSS, phi)
            })
            .sum();
        total / f.length
    }

    fn means(&self, phi: &(dyn Fn(Point) -> f64 + Sync), refine: usize) -> Vec<f64> {
        let mut u = vec![0.0; self.lifted_len()];
        u[..self.mesh.n_cells()].copy_from_slice(&self.cell_means(phi, refine));
        for f in 0..self.mesh.n_faces() {
            u[self.face_dof[f]] = self.face_mean(f, phi, refine);
        }
        u
    }
}

impl GradientDiscretisation for Hmm {
    fn kind(&self) -> SchemeKind {
        SchemeKind::Hmm
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
        self.means(phi, 1)
    }

    fn interpolate_mean(&self, phi: &(dyn Fn(Point) -> f64 + Sync), refine: usize) -> Vec<f64> {
        self.means(phi, refine)
    }

    fn boundary_values(&self, data: &(dyn Fn(Point) -> f64 + Sync)) -> Vec<f64> {
        let mut out = vec![0.0; self.n_boundary];
        for &f in self.mesh.boundary_faces() {
            out[self.face_dof[f] - self.n_free] = match self.options.boundary_value {
                FaceValue::Midpoint => data(self.mesh.faces()[f].midpoint),
                FaceValue::Mean => self.face_mean(f, data, 1),
            };
        }
        out
    }

    fn discrete_barrier(&self, chi: &(dyn Fn(Point) -> f64 + Sync)) -> Vec<f64> {
        let mut lower = vec![f64::NEG_INFINITY; self.n_free];
        lower[..self.mesh.n_cells()].copy_from_slice(&self.cell_means(chi, 1));
        lower
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gdm::{assemble_diffusion, Coefficient};
    use crate::mesh::{generate_hex_mesh, generate_rect_mesh, DomainSpec};

    fn rect(n: usize) -> Arc<Mesh> {
        Arc::new(generate_rect_mesh(&DomainSpec::unit_square(), n).unwrap())
    }

    #[test]
    fn dof_counts() {
        let h = build_hmm(rect(2), HmmOptions::default()).unwrap();
        // 4 cells + 4 interior faces free, 8 boundary faces
        assert_eq!((h.dof_count(), h.boundary_dof_count()), (8, 8));
        assert_eq!(h.pieces().len(), 16);
    }

    #[test]
    fn affine_functions_have_exact_gradients() {
        for mesh in [rect(3), Arc::new(generate_hex_mesh(&DomainSpec::unit_square(), 4).unwrap())] {
            let h = build_hmm(mesh, HmmOptions::default()).unwrap();
            let phi = |x: Point| 0.3 + 1.7 * x.x - 0.4 * x.y;
            let u = h.interpolate(&phi);
            for p in h.pieces() {
                let g = p.gradient_of(&u);
                assert!((g - Vector::new(1.7, -0.4)).norm() < 1e-12, "{g:?}");
            }
        }
    }

    #[test]
    fn constants_are_in_the_kernel() {
        let h = build_hmm(rect(4), HmmOptions { stab: 2.5, ..Default::default() }).unwrap();
        let k = assemble_diffusion(&h, &Coefficient::identity()).unwrap();
        let ones = vec![1.0; h.lifted_len()];
        let r = k.mul_vec(&ones);
        assert!(r.iter().all(|v| v.abs() < 1e-11));
        assert!(k.asymmetry() < 1e-13);
    }

    #[test]
    fn zero_stabilisation_is_not_a_norm() {
        let err = build_hmm(rect(2), HmmOptions { stab: 0.0, ..Default::default() }).unwrap_err();
        assert!(matches!(err, HmmError::NotDefinite(_)), "{err}");
        assert!(matches!(
            build_hmm(rect(2), HmmOptions { stab: -1.0, ..Default::default() }),
            Err(HmmError::InvalidStabilisation(_))
        ));
    }

    #[test]
    fn barrier_only_on_cells() {
        let h = build_hmm(rect(2), HmmOptions::default()).unwrap();
        let lower = h.discrete_barrier(&|_| 0.3);
        assert!(lower[..4].iter().all(|&l| (l - 0.3).abs() < 1e-15));
        assert!(lower[4..].iter().all(|l| *l == f64::NEG_INFINITY));
    }

    #[test]
    fn face_mean_lift_differs_from_midpoint_for_curved_data() {
        let phi = |x: Point| x.x * x.x;
        let mid = build_hmm(rect(2), HmmOptions::default()).unwrap();
        let mean = build_hmm(rect(2), HmmOptions { boundary_value: FaceValue::Mean, ..Default::default() }).unwrap();
        let a = mid.boundary_values(&phi);
        let b = mean.boundary_values(&phi);
        // horizontal faces of length 1: mean of x^2 exceeds midpoint value by 1/12
        let max_gap = a.iter().zip(&b).map(|(x, y)| (y - x).abs()).fold(0.0, f64::max);
        assert!((max_gap - 1.0 / 12.0).abs() < 1e-14);
    }
}
