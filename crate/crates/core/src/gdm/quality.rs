//! Quality functionals of a gradient discretisation: the coercivity constant,
//! the consistency defect at the interpolant and the limit-conformity defect.

use thiserror::Error;

use super::{
    assemble_diffusion, assemble_gradient_load, assemble_gradient_load_with, assemble_load, assemble_load_with, assemble_mass,
    l2_error, l2_gradient_error,
};
use super::{Coefficient, GradientDiscretisation};
use crate::mesh::{Point, Vector};
use crate::quadrature::TriangleRule;
use crate::sparse::{dot, Cholesky, CsrMatrix, LinearSolveError};

pub const POWER_MAX_ITER: usize = 200;
pub const POWER_TOL: f64 = 1e-8;

/// Relative size below which the smallest eigenvalue of the gradient Gram
/// matrix counts as zero.
const DEFINITENESS_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QualityError {
    #[error("the discrete gradient is not a norm on the free unknowns ({0})")]
    NotDefinite(String),
    #[error("power iteration did not converge in {iterations} iterations (last relative change {change:e})")]
    NoConvergence { iterations: usize, change: f64 },
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
}

impl From<LinearSolveError> for QualityError {
    fn from(e: LinearSolveError) -> Self {
        QualityError::NotDefinite(e.to_string())
    }
}

/// Largest `lambda` with `M v = lambda K v`, for `M` symmetric positive
/// semi-definite and `K` symmetric positive definite, by power iteration on
/// `K^{-1} M`.
pub fn generalized_max_eigenvalue(m: &CsrMatrix, k: &CsrMatrix) -> Result<f64, QualityError> {
    let chol = Cholesky::new(k)?;
    power_iteration(m, k, &chol)
}

fn power_iteration(m: &CsrMatrix, k: &CsrMatrix, chol: &Cholesky) -> Result<f64, QualityError> {
    let n = m.nrows();
    if k.nrows() != n {
        return Err(QualityError::Dimension(n, k.nrows()));
    }
    if n == 0 {
        return Ok(0.0);
    }
    // deterministic start with components along most eigenvectors
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.25 * ((i as f64) * 0.73).sin()).collect();
    let mut lambda = 0.0;
    let mut change = f64::INFINITY;
    for _ in 0..POWER_MAX_ITER {
        let mv = m.mul_vec(&v);
        let w = chol.solve(&mv);
        let kw = k.bilinear(&w, &w);
        if kw <= 0.0 {
            return Ok(0.0);
        }
        let next = m.bilinear(&w, &w) / kw;
        let scale = kw.sqrt();
        v = w.into_iter().map(|x| x / scale).collect();
        change = (next - lambda).abs() / next.abs().max(f64::MIN_POSITIVE);
        lambda = next;
        if change < POWER_TOL {
            return Ok(lambda);
        }
    }
    Err(QualityError::NoConvergence { iterations: POWER_MAX_ITER, change })
}

/// Mass and identity-coefficient stiffness on the free unknowns, with the
/// stiffness factorised. Construction fails when the discrete gradient is
/// not a norm.
#[derive(Debug)]
pub struct GramOperators {
    pub mass: CsrMatrix,
    pub stiffness: CsrMatrix,
    chol: Cholesky,
}

impl GramOperators {
    pub fn new(gd: &dyn GradientDiscretisation) -> Result<Self, QualityError> {
        let n = gd.dof_count();
        let k = assemble_diffusion(gd, &Coefficient::identity()).expect("identity is a valid tensor");
        let stiffness = k.block(0..n, 0..n);
        let mass = assemble_mass(gd).block(0..n, 0..n);
        let chol = Cholesky::new(&stiffness)?;
        let ops = Self { mass, stiffness, chol };
        ops.check_definite()?;
        Ok(ops)
    }

    /// Ratio of extreme eigenvalues by a few power / inverse-power steps; a
    /// factorisation can succeed on a numerically singular matrix.
    fn check_definite(&self) -> Result<(), QualityError> {
        let n = self.stiffness.nrows();
        if n == 0 {
            return Ok(());
        }
        let start: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 1.618).cos()).collect();
        let (mut hi, mut lo) = (start.clone(), start);
        let (mut lmax, mut inv_lmin) = (0.0, 0.0);
        for _ in 0..30 {
            let a = self.stiffness.mul_vec(&hi);
            lmax = dot(&a, &a).sqrt() / dot(&hi, &hi).sqrt();
            let na = dot(&a, &a).sqrt();
            hi = a.into_iter().map(|x| x / na).collect();
            let b = self.chol.solve(&lo);
            inv_lmin = dot(&b, &b).sqrt() / dot(&lo, &lo).sqrt();
            let nb = dot(&b, &b).sqrt();
            if !nb.is_finite() {
                return Err(QualityError::NotDefinite("inverse iteration overflowed".into()));
            }
            lo = b.into_iter().map(|x| x / nb).collect();
        }
        let ratio = 1.0 / (inv_lmin * lmax);
        if !(ratio > DEFINITENESS_TOL) {
            return Err(QualityError::NotDefinite(format!("eigenvalue ratio {ratio:e}")));
        }
        Ok(())
    }

    pub fn solve_stiffness(&self, b: &[f64]) -> Vec<f64> {
        self.chol.solve(b)
    }

    /// `C_D = max || Pi v || / || grad_D v ||`.
    pub fn coercivity_constant(&self) -> Result<f64, QualityError> {
        Ok(power_iteration(&self.mass, &self.stiffness, &self.chol)?.sqrt())
    }
}

pub fn coercivity_constant(gd: &dyn GradientDiscretisation) -> Result<f64, QualityError> {
    GramOperators::new(gd)?.coercivity_constant()
}

/// `|| Pi_D P_D phi - phi || + || grad_D P_D phi - grad phi ||` with the
/// scheme's own interpolant.
pub fn consistency_defect(
    gd: &dyn GradientDiscretisation,
    phi: &(dyn Fn(Point) -> f64 + Sync),
    grad: &(dyn Fn(Point) -> Vector + Sync),
) -> f64 {
    consistency_defect_at(gd, &gd.interpolate(phi), phi, grad, 1)
}

/// `W_D(psi) = sup_v |int grad_D v . psi + Pi v div psi| / || grad_D v ||`
/// over free `v`, computed exactly as `sqrt(l^T K^{-1} l)`.
pub fn limit_conformity_defect(
    gd: &dyn GradientDiscretisation,
    ops: &GramOperators,
    psi: &(dyn Fn(Point) -> Vector + Sync),
    div_psi: &(dyn Fn(Point) -> f64 + Sync),
) -> f64 {
    limit_conformity_defect_with(gd, ops, psi, div_psi, &TriangleRule::degree5())
}

/// [`limit_conformity_defect`] with an explicit rule. For a conforming
/// scheme the defect is pure quadrature error.
pub fn limit_conformity_defect_with(
    gd: &dyn GradientDiscretisation,
    ops: &GramOperators,
    psi: &(dyn Fn(Point) -> Vector + Sync),
    div_psi: &(dyn Fn(Point) -> f64 + Sync),
    rule: &TriangleRule,
) -> f64 {
    let n = gd.dof_count();
    let a = assemble_gradient_load_with(gd, psi, rule);
    let b = assemble_load_with(gd, div_psi, rule, 1);
    let l: Vec<f64> = (0..n).map(|i| a[i] + b[i]).collect();
    let x = ops.solve_stiffness(&l);
    dot(&l, &x).max(0.0).sqrt()
}

/// The minimiser of `|| Pi v - phi ||^2 + || grad_D v - grad phi ||^2` over
/// lifted vectors whose boundary part is the interpolant of `phi`. The
/// matrix is factorised once.
#[derive(Debug)]
pub struct MinimizationInterpolant {
    coupling: CsrMatrix,
    chol: Cholesky,
    n: usize,
}

impl MinimizationInterpolant {
    pub fn new(gd: &dyn GradientDiscretisation) -> Result<Self, LinearSolveError> {
        let n = gd.dof_count();
        let len = gd.lifted_len();
        let k = assemble_diffusion(gd, &Coefficient::identity()).expect("identity is a valid tensor");
        let a = assemble_mass(gd).linear_combination(1.0, &k, 1.0);
        Ok(Self { coupling: a.block(0..n, n..len), chol: Cholesky::new(&a.block(0..n, 0..n))?, n })
    }

    pub fn apply(
        &self,
        gd: &dyn GradientDiscretisation,
        phi: &(dyn Fn(Point) -> f64 + Sync),
        grad: &(dyn Fn(Point) -> Vector + Sync),
    ) -> Vec<f64> {
        let n = self.n;
        let mut w = gd.interpolate(phi);
        let f = assemble_load(gd, phi, 1);
        let g = assemble_gradient_load(gd, grad);
        let c = self.coupling.mul_vec(&w[n..]);
        let rhs: Vec<f64> = (0..n).map(|i| f[i] + g[i] - c[i]).collect();
        let x = self.chol.solve(&rhs);
        w[..n].copy_from_slice(&x);
        w
    }
}

pub fn minimization_interpolant(
    gd: &dyn GradientDiscretisation,
    phi: &(dyn Fn(Point) -> f64 + Sync),
    grad: &(dyn Fn(Point) -> Vector + Sync),
) -> Result<Vec<f64>, LinearSolveError> {
    Ok(MinimizationInterpolant::new(gd)?.apply(gd, phi, grad))
}

/// `S_D(phi, v)` for a given lifted `v`.
pub fn consistency_defect_at(
    gd: &dyn GradientDiscretisation,
    v: &[f64],
    phi: &(dyn Fn(Point) -> f64 + Sync),
    grad: &(dyn Fn(Point) -> Vector + Sync),
    refine: usize,
) -> f64 {
    l2_error(gd, v, phi, refine) + l2_gradient_error(gd, v, grad, refine)
}

/// Quality numbers of one discretisation, evaluated on named probe functions.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub scheme: super::SchemeKind,
    pub h: f64,
    pub dofs: usize,
    pub coercivity: f64,
    pub consistency: Vec<(String, f64)>,
    pub conformity: Vec<(String, f64)>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_generalized_eigenvalue() {
        let m = CsrMatrix::from_diagonal(&[2.0]);
        let k = CsrMatrix::from_diagonal(&[8.0]);
        let l = generalized_max_eigenvalue(&m, &k).unwrap();
        assert!((l.sqrt() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn diagonal_pencil_picks_largest_ratio() {
        let m = CsrMatrix::from_diagonal(&[1.0, 3.0, 2.0, 0.5]);
        let k = CsrMatrix::from_diagonal(&[1.0, 2.0, 4.0, 0.1]);
        let l = generalized_max_eigenvalue(&m, &k).unwrap();
        assert!((l - 5.0).abs() < 1e-6, "{l}");
    }
}
