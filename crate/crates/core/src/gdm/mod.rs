//! The gradient-discretisation abstraction.
//!
//! A scheme is described by its unknowns and by a list of triangular
//! [`Piece`]s covering the domain. On every piece the reconstructed function
//! is an affine combination of a few unknowns and the reconstructed gradient
//! is a constant combination. Everything generic (mass and diffusion
//! matrices, loads, error norms, quality functionals) is written against
//! pieces, so the conforming and the mixed schemes share one code path.
//!
//! Unknowns are numbered interior first (`0..dof_count`), followed by the
//! boundary unknowns carrying Dirichlet data. Vectors over both ranges are
//! called *lifted*.

mod assembly;
mod quality;

pub use assembly::{
    assemble_diffusion, assemble_gradient_load, assemble_gradient_load_with, assemble_load, assemble_load_with, assemble_mass,
    assemble_mass_lumped, assemble_reaction_load, assemble_reaction_loads, l2_error, l2_error_with, l2_gradient_error,
    l2_norm_of, Coefficient, CoefficientError,
};
pub use quality::{
    coercivity_constant, consistency_defect, consistency_defect_at, generalized_max_eigenvalue, limit_conformity_defect,
    limit_conformity_defect_with, minimization_interpolant, GramOperators, MinimizationInterpolant, QualityError, QualityReport,
    POWER_MAX_ITER, POWER_TOL,
};

use crate::mesh::{Mesh, Point, Vector};
use crate::sparse::CsrMatrix;

/// Sub-samples per fan triangle edge used for discontinuous initial data
/// (4 x 4 = 16 sub-triangles).
pub const INITIAL_SUBSAMPLING: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    Hmm,
    P1,
}

impl SchemeKind {
    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::Hmm => "hmm",
            SchemeKind::P1 => "p1",
        }
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hmm" => Ok(SchemeKind::Hmm),
            "p1" => Ok(SchemeKind::P1),
            other => Err(format!("unknown scheme `{other}` (expected hmm or p1)")),
        }
    }
}

/// `c + g . x`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub c: f64,
    pub g: Vector,
}

impl Affine {
    pub const ZERO: Affine = Affine { c: 0.0, g: Vector::new(0.0, 0.0) };
    pub const ONE: Affine = Affine { c: 1.0, g: Vector::new(0.0, 0.0) };

    pub fn eval(&self, x: &Point) -> f64 {
        self.c + self.g.dot(&x.coords)
    }
}

/// A triangle on which the reconstructions are affine / constant.
#[derive(Debug, Clone)]
pub struct Piece {
    pub cell: usize,
    pub triangle: [Point; 3],
    /// Lifted unknown indices touching this piece.
    pub dofs: Vec<usize>,
    /// Value reconstruction coefficient of each unknown, aligned with `dofs`.
    pub value: Vec<Affine>,
    /// Gradient reconstruction coefficient of each unknown, aligned with `dofs`.
    pub gradient: Vec<Vector>,
}

impl Piece {
    pub fn area(&self) -> f64 {
        let [a, b, c] = self.triangle;
        let (e1, e2) = (b - a, c - a);
        0.5 * (e1.x * e2.y - e1.y * e2.x).abs()
    }

    pub fn centroid(&self) -> Point {
        let [a, b, c] = self.triangle;
        Point::from((a.coords + b.coords + c.coords) / 3.0)
    }

    /// Reconstructed value of the lifted vector `u` at `x`.
    pub fn value_at(&self, u: &[f64], x: &Point) -> f64 {
        self.dofs.iter().zip(&self.value).map(|(&d, a)| u[d] * a.eval(x)).sum()
    }

    /// Reconstructed gradient of the lifted vector `u`.
    pub fn gradient_of(&self, u: &[f64]) -> Vector {
        self.dofs.iter().zip(&self.gradient).map(|(&d, g)| u[d] * g).sum()
    }
}

/// A gradient discretisation: unknowns, reconstruction operators,
/// interpolants and the discrete barrier.
pub trait GradientDiscretisation: Send + Sync {
    fn kind(&self) -> SchemeKind;

    fn mesh(&self) -> &Mesh;

    /// Number of free (interior) unknowns.
    fn dof_count(&self) -> usize;

    /// Number of unknowns carrying Dirichlet data.
    fn boundary_dof_count(&self) -> usize;

    fn lifted_len(&self) -> usize {
        self.dof_count() + self.boundary_dof_count()
    }

    fn pieces(&self) -> &[Piece];

    /// Geometric location of every lifted unknown (centroid, face point or node).
    fn dof_points(&self) -> &[Point];

    /// The interpolant used for solution-like data (cell and face means, or
    /// nodal values), including boundary unknowns.
    fn interpolate(&self, phi: &(dyn Fn(Point) -> f64 + Sync)) -> Vec<f64>;

    /// Interpolant for possibly discontinuous data: means computed with
    /// `refine x refine` sub-sampling. Schemes without cell unknowns fall back
    /// to [`GradientDiscretisation::interpolate`].
    fn interpolate_mean(&self, phi: &(dyn Fn(Point) -> f64 + Sync), refine: usize) -> Vec<f64>;

    /// Dirichlet lift: values of the boundary unknowns.
    fn boundary_values(&self, data: &(dyn Fn(Point) -> f64 + Sync)) -> Vec<f64>;

    /// Lower bound on each free unknown induced by the barrier; `-inf` for
    /// unknowns the value reconstruction does not see.
    fn discrete_barrier(&self, chi: &(dyn Fn(Point) -> f64 + Sync)) -> Vec<f64>;

    /// Mass matrix used for the time derivative of the constrained equation.
    /// Defaults to the Gram matrix of the value reconstruction.
    fn obstacle_mass(&self) -> CsrMatrix {
        assemble_mass(self)
    }
}

/// Free unknowns constrained by the barrier (finite lower bound).
pub fn constrained_mask(lower: &[f64]) -> Vec<bool> {
    lower.iter().map(|l| l.is_finite()).collect()
}

/// Overwrites the boundary part of a lifted vector.
pub fn set_boundary(gd: &dyn GradientDiscretisation, lifted: &mut [f64], boundary: &[f64]) {
    let n = gd.dof_count();
    lifted[n..].copy_from_slice(boundary);
}

/// Discrete initial data together with feasibility information.
#[derive(Debug, Clone)]
pub struct InitialData {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// Free unknowns where the interpolated `p` lies below the discrete barrier.
    pub infeasible: Vec<usize>,
}

/// `(I_D p0, J_D q0)` by sub-sampled means, with a feasibility report against
/// the discrete barrier. Nothing is clipped here.
pub fn interpolate_initial(
    gd: &dyn GradientDiscretisation,
    p0: &(dyn Fn(Point) -> f64 + Sync),
    q0: &(dyn Fn(Point) -> f64 + Sync),
    chi: &(dyn Fn(Point) -> f64 + Sync),
) -> InitialData {
    let p = gd.interpolate_mean(p0, INITIAL_SUBSAMPLING);
    let q = gd.interpolate_mean(q0, INITIAL_SUBSAMPLING);
    let lower = gd.discrete_barrier(chi);
    let infeasible = lower.iter().enumerate().filter(|&(i, l)| p[i] < *l - 1e-14 * l.abs().max(1.0)).map(|(i, _)| i).collect();
    InitialData { p, q, infeasible }
}
