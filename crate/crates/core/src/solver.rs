//! One implicit time step of the coupled obstacle / reaction-diffusion system.
//!
//! The reactions are frozen at the current guess `(w1, w2)`; the constrained
//! equation is then a convex quadratic program with lower bounds and the
//! second equation a symmetric positive definite solve. Iterating this map
//! (Picard) converges when `dt < 1 / (2 M)` with `M` a Lipschitz bound of
//! the reactions.

use std::collections::HashSet;
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::gdm::{assemble_reaction_loads, GradientDiscretisation};
use crate::sparse::{dot, Cholesky, CsrMatrix, LinearSolveError};

pub use crate::sparse::solve_linear_spd;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("obstacle solver did not converge after {iterations} iterations (residual {residual:e})")]
    ObstacleNoConvergence { iterations: usize, residual: f64 },
    #[error("Picard iteration did not converge in {} iterations (last change {:e})", .0.iterations, .0.last_residual())]
    PicardNoConvergence(Box<PicardReport>),
    #[error(transparent)]
    Linear(#[from] LinearSolveError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleOptions {
    /// Bound on the scaled natural residual `|min(lambda, u - lower)|`.
    pub tol: f64,
    /// Active-set changes before switching to projected Gauss-Seidel.
    pub max_iter: usize,
    pub pgs_max_sweeps: usize,
}

impl Default for ObstacleOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 500, pgs_max_sweeps: 200_000 }
    }
}

/// Residuals of the optimality system of `min 1/2 u'Au - b'u, u >= lower`,
/// with the multiplier divided by the per-unknown scaling.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResidual {
    /// `max(lower - u, 0)`
    pub primal: f64,
    /// `max(-lambda, 0)` on constrained unknowns
    pub dual: f64,
    /// `|lambda (u - lower)|` on constrained unknowns
    pub complementarity: f64,
    /// `|lambda|` on unconstrained unknowns
    pub stationarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.complementarity).max(self.stationarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleSolution {
    pub u: Vec<f64>,
    /// `A u - b`, divided by the scaling.
    pub lambda: Vec<f64>,
    /// Unknowns held at the barrier.
    pub active: Vec<usize>,
    pub iterations: usize,
    pub kkt: KktResidual,
    pub used_fallback: bool,
}

pub fn kkt_residual(u: &[f64], lambda: &[f64], lower: &[f64]) -> KktResidual {
    let mut r = KktResidual::default();
    for i in 0..u.len() {
        if lower[i].is_finite() {
            r.primal = r.primal.max(lower[i] - u[i]);
            r.dual = r.dual.max(-lambda[i]);
            r.complementarity = r.complementarity.max((lambda[i] * (u[i] - lower[i])).abs());
        } else {
            r.stationarity = r.stationarity.max(lambda[i].abs());
        }
    }
    r
}

/// Primal-dual active set solver bound to one matrix; the factorisation
/// pattern is analysed once and reused across calls.
#[derive(Debug)]
pub struct ObstacleSolver {
    a: CsrMatrix,
    diag: Vec<f64>,
    /// Multiplier scaling (lumped mass; 1 where it vanishes).
    scale: Vec<f64>,
    /// Factorisation of the reduced matrix for the active set stored with it.
    chol: Option<(Cholesky, Vec<bool>)>,
}

impl ObstacleSolver {
    pub fn new(a: CsrMatrix, scale: Option<Vec<f64>>) -> Self {
        let n = a.nrows();
        let diag = a.diagonal();
        let scale = scale.unwrap_or_else(|| vec![1.0; n]).into_iter().map(|s| if s > 0.0 { s } else { 1.0 }).collect();
        Self { a, diag, scale, chol: None }
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.a
    }

    fn reduced_solve(&mut self, b: &[f64], lower: &[f64], active: &[bool]) -> Result<Vec<f64>, LinearSolveError> {
        let n = b.len();
        let mut fixed_vals = vec![0.0; n];
        for i in 0..n {
            if active[i] {
                fixed_vals[i] = lower[i];
            }
        }
        let coupling = self.a.mul_vec(&fixed_vals);
        let rhs: Vec<f64> = (0..n).map(|i| if active[i] { lower[i] } else { b[i] - coupling[i] }).collect();
        match &mut self.chol {
            Some((_, set)) if set.as_slice() == active => {}
            Some((c, set)) => {
                c.refactor(&self.a.with_fixed_dofs(active))?;
                set.copy_from_slice(active);
            }
            None => self.chol = Some((Cholesky::new(&self.a.with_fixed_dofs(active))?, active.to_vec())),
        }
        let mut u = self.chol.as_ref().expect("factorised").0.solve(&rhs);
        for i in 0..n {
            if active[i] {
                u[i] = lower[i];
            }
        }
        Ok(u)
    }

    fn multiplier(&self, u: &[f64], b: &[f64]) -> Vec<f64> {
        let au = self.a.mul_vec(u);
        au.iter().zip(b).zip(&self.scale).map(|((a, b), s)| (a - b) / s).collect()
    }

    fn finish(&self, u: Vec<f64>, b: &[f64], lower: &[f64], iterations: usize, used_fallback: bool) -> ObstacleSolution {
        let lambda = self.multiplier(&u, b);
        let active = (0..u.len()).filter(|&i| lower[i].is_finite() && u[i] <= lower[i]).collect();
        let kkt = kkt_residual(&u, &lambda, lower);
        ObstacleSolution { u, lambda, active, iterations, kkt, used_fallback }
    }

    /// PDAS from `u0` (clipped to the bounds); at most `max_iter` set changes.
    /// `Ok(None)` when the sets cycle or the iteration budget runs out.
    fn pdas(
        &mut self,
        b: &[f64],
        lower: &[f64],
        u0: &[f64],
        max_iter: usize,
    ) -> Result<Option<(Vec<f64>, usize)>, LinearSolveError> {
        let n = b.len();
        let mut u: Vec<f64> = u0.iter().zip(lower).map(|(&x, &l)| x.max(l)).collect();
        let lambda0 = self.multiplier(&u, b);
        let mut active: Vec<bool> =
            (0..n).map(|i| lower[i].is_finite() && lambda0[i] * self.scale[i] + self.diag[i] * (lower[i] - u[i]) > 0.0).collect();
        let mut seen: HashSet<Vec<bool>> = HashSet::new();
        for it in 1..=max_iter {
            seen.insert(active.clone());
            u = self.reduced_solve(b, lower, &active)?;
            let au = self.a.mul_vec(&u);
            let next: Vec<bool> = (0..n)
                .map(|i| {
                    if !lower[i].is_finite() {
                        return false;
                    }
                    let lam = if active[i] { au[i] - b[i] } else { 0.0 };
                    lam + self.diag[i] * (lower[i] - u[i]) > 0.0
                })
                .collect();
            if next == active {
                return Ok(Some((u, it)));
            }
            if seen.contains(&next) {
                log::debug!("active set cycled after {it} iterations");
                return Ok(None);
            }
            active = next;
        }
        Ok(None)
    }

    fn pgs(&self, b: &[f64], lower: &[f64], u0: &[f64], tol: f64, max_sweeps: usize) -> (Vec<f64>, usize) {
        let n = b.len();
        let mut u: Vec<f64> = u0.iter().zip(lower).map(|(&x, &l)| x.max(l)).collect();
        for sweep in 1..=max_sweeps {
            let mut change = 0.0f64;
            let mut size = 0.0f64;
            for i in 0..n {
                let mut s = b[i];
                for (j, v) in self.a.row(i) {
                    if j != i {
                        s -= v * u[j];
                    }
                }
                let new = (s / self.diag[i]).max(lower[i]);
                change = change.max((new - u[i]).abs());
                size = size.max(new.abs());
                u[i] = new;
            }
            if change <= tol * size.max(1.0) {
                return (u, sweep);
            }
        }
        (u, max_sweeps)
    }

    pub fn solve(
        &mut self,
        b: &[f64],
        lower: &[f64],
        u0: Option<&[f64]>,
        opts: &ObstacleOptions,
    ) -> Result<ObstacleSolution, SolverError> {
        let n = self.a.nrows();
        for len in [b.len(), lower.len()].into_iter().chain(u0.map(<[f64]>::len)) {
            if len != n {
                return Err(SolverError::Dimension { expected: n, got: len });
            }
        }
        let zero = vec![0.0; n];
        let start = u0.unwrap_or(&zero);
        if let Some((u, it)) = self.pdas(b, lower, start, opts.max_iter)? {
            return Ok(self.finish(u, b, lower, it, false));
        }
        log::warn!("primal-dual active set did not settle; falling back to projected Gauss-Seidel");
        let (u, sweeps) = self.pgs(b, lower, start, 1e-3 * opts.tol, opts.pgs_max_sweeps);
        // polish: the active set of the relaxation solution is usually exact
        if let Some((polished, it)) = self.pdas(b, lower, &u, 20)? {
            let sol = self.finish(polished, b, lower, sweeps + it, true);
            if sol.kkt.max() <= opts.tol {
                return Ok(sol);
            }
        }
        let sol = self.finish(u, b, lower, sweeps, true);
        if sol.kkt.max() <= opts.tol {
            Ok(sol)
        } else {
            Err(SolverError::ObstacleNoConvergence { iterations: sweeps, residual: sol.kkt.max() })
        }
    }
}

/// Minimiser of `1/2 u'Au - b'u` over `u >= lower` (entries of `lower` may be
/// `-inf`).
pub fn solve_obstacle_qp(
    a: &CsrMatrix,
    b: &[f64],
    lower: &[f64],
    u0: Option<&[f64]>,
    opts: &ObstacleOptions,
) -> Result<ObstacleSolution, SolverError> {
    ObstacleSolver::new(a.clone(), None).solve(b, lower, u0, opts)
}

type Rate = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Reaction terms `f(p, q)` and `g(p, q)`.
#[derive(Clone)]
pub struct Reactions {
    pub f: Rate,
    pub g: Rate,
}

impl std::fmt::Debug for Reactions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Reactions { .. }")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardReport {
    pub iterations: usize,
    /// Mass-norm change of `(p, q)` per iteration.
    pub residuals: Vec<f64>,
    pub converged: bool,
    /// `dt < 1 / (2 M)`.
    pub contraction: bool,
    pub m_lip: f64,
    /// Residuals nonincreasing after the first iterate.
    pub monotone: bool,
    /// Final relaxation factor (1 for plain Picard).
    pub relaxation: f64,
}

impl PicardReport {
    pub fn last_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Halve the relaxation factor after two consecutive residual increases
    /// (down to 1/16). The fixed point is unchanged.
    pub adaptive_relaxation: bool,
    pub obstacle: ObstacleOptions,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 100, adaptive_relaxation: true, obstacle: ObstacleOptions::default() }
    }
}

const MIN_RELAXATION: f64 = 1.0 / 16.0;

/// Matrices of the step map for a fixed time step, factorised once.
#[derive(Debug)]
pub struct StepOperators {
    n: usize,
    dt: f64,
    mass_p: CsrMatrix,
    mass_q: CsrMatrix,
    lhs_p: CsrMatrix,
    lhs_q: CsrMatrix,
    mass_p_free: CsrMatrix,
    mass_q_free: CsrMatrix,
    obstacle: ObstacleSolver,
    q_chol: Cholesky,
}

impl StepOperators {
    /// All matrices over lifted unknowns; `n_free` leading unknowns are free.
    pub fn new(
        n_free: usize,
        mass_p: CsrMatrix,
        mass_q: CsrMatrix,
        diff_p: &CsrMatrix,
        diff_q: &CsrMatrix,
        dt: f64,
    ) -> Result<Self, SolverError> {
        let n = n_free;
        let lhs_p = mass_p.linear_combination(1.0 / dt, diff_p, 1.0);
        let lhs_q = mass_q.linear_combination(1.0 / dt, diff_q, 1.0);
        let mass_p_free = mass_p.block(0..n, 0..n);
        let mass_q_free = mass_q.block(0..n, 0..n);
        let scale = mass_p_free.row_sums();
        let obstacle = ObstacleSolver::new(lhs_p.block(0..n, 0..n), Some(scale));
        let q_chol = Cholesky::new(&lhs_q.block(0..n, 0..n))?;
        Ok(Self { n, dt, mass_p, mass_q, lhs_p, lhs_q, mass_p_free, mass_q_free, obstacle, q_chol })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_free(&self) -> usize {
        self.n
    }

    pub fn mass_p(&self) -> &CsrMatrix {
        &self.mass_p
    }

    pub fn mass_q(&self) -> &CsrMatrix {
        &self.mass_q
    }

    /// Free block of `M_p / dt + A_p`.
    pub fn obstacle_matrix(&self) -> &CsrMatrix {
        self.obstacle.matrix()
    }

    /// Free part of `M u_prev / dt - L_{IB} u_B` for the lifted matrices.
    fn history(&self, mass: &CsrMatrix, lhs: &CsrMatrix, prev: &[f64], boundary: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mp = mass.mul_vec(prev);
        let mut lifted_b = vec![0.0; prev.len()];
        lifted_b[n..].copy_from_slice(boundary);
        let lb = lhs.mul_vec(&lifted_b);
        (0..n).map(|i| mp[i] / self.dt - lb[i]).collect()
    }
}

/// Data of one step `t^n -> t^{n+1}`. Vectors are lifted unless noted.
pub struct StepSystem<'a> {
    pub gd: &'a dyn GradientDiscretisation,
    pub ops: &'a mut StepOperators,
    pub p_prev: &'a [f64],
    pub q_prev: &'a [f64],
    /// Boundary values at `t^{n+1}`.
    pub boundary_p: &'a [f64],
    pub boundary_q: &'a [f64],
    /// Barrier on the free unknowns.
    pub lower: &'a [f64],
    pub reactions: Option<&'a Reactions>,
    /// Source loads `int s Pi e_i` at `t^{n+1}`.
    pub source_p: Option<&'a [f64]>,
    pub source_q: Option<&'a [f64]>,
    pub m_lip: f64,
    /// Starting guess for the reactions; the previous fields when absent.
    pub guess: Option<(&'a [f64], &'a [f64])>,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub report: PicardReport,
    pub obstacle: ObstacleSolution,
    /// Free right-hand sides of the last map evaluation.
    pub rhs_p: Vec<f64>,
    pub rhs_q: Vec<f64>,
}

fn mass_norm(m: &CsrMatrix, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    m.bilinear(&d, &d).max(0.0).sqrt()
}

pub fn advance_step(sys: StepSystem<'_>, opts: &PicardOptions) -> Result<StepResult, SolverError> {
    let StepSystem { gd, ops, p_prev, q_prev, boundary_p, boundary_q, lower, reactions, source_p, source_q, m_lip, guess } = sys;
    let n = ops.n;
    let len = gd.lifted_len();
    for v in [p_prev, q_prev] {
        if v.len() != len {
            return Err(SolverError::Dimension { expected: len, got: v.len() });
        }
    }
    let contraction = m_lip.is_finite() && ops.dt * 2.0 * m_lip < 1.0;
    if !contraction {
        log::warn!("time step {} does not satisfy dt < 1/(2M) with M = {m_lip}", ops.dt);
    }

    let mut hist_p = ops.history(&ops.mass_p, &ops.lhs_p, p_prev, boundary_p);
    let mut hist_q = ops.history(&ops.mass_q, &ops.lhs_q, q_prev, boundary_q);
    for (h, s) in [(&mut hist_p, source_p), (&mut hist_q, source_q)] {
        if let Some(s) = s {
            for i in 0..n {
                h[i] += s[i];
            }
        }
    }

    let lift = |free: &[f64], boundary: &[f64]| {
        let mut v = Vec::with_capacity(len);
        v.extend_from_slice(free);
        v.extend_from_slice(boundary);
        v
    };
    let (g1, g2) = guess.unwrap_or((p_prev, q_prev));
    let mut w1 = lift(&g1[..n], boundary_p);
    let mut w2 = lift(&g2[..n], boundary_q);

    let mut report = PicardReport {
        iterations: 0,
        residuals: Vec::new(),
        converged: false,
        contraction,
        m_lip,
        monotone: true,
        relaxation: 1.0,
    };
    let mut growth = 0;
    let mut last = None;
    while report.iterations < opts.max_iter.max(1) {
        report.iterations += 1;
        let (mut rhs_p, mut rhs_q) = (hist_p.clone(), hist_q.clone());
        if let Some(r) = reactions {
            let (fp, gq) = assemble_reaction_loads(gd, &*r.f, &*r.g, &w1, &w2);
            for i in 0..n {
                rhs_p[i] += fp[i];
                rhs_q[i] += gq[i];
            }
        }
        let sol = ops.obstacle.solve(&rhs_p, lower, Some(&w1[..n]), &opts.obstacle)?;
        let q_new = ops.q_chol.solve(&rhs_q);
        let change = mass_norm(&ops.mass_p_free, &sol.u, &w1[..n]) + mass_norm(&ops.mass_q_free, &q_new, &w2[..n]);
        if let Some(&prev) = report.residuals.last() {
            if change > prev * (1.0 + 1e-10) + 1e-15 {
                if report.residuals.len() >= 2 {
                    report.monotone = false;
                }
                growth += 1;
            } else {
                growth = 0;
            }
        }
        report.residuals.push(change);
        let done = reactions.is_none() || change <= opts.tol;
        let theta = report.relaxation;
        for i in 0..n {
            w1[i] += theta * (sol.u[i] - w1[i]);
            w2[i] += theta * (q_new[i] - w2[i]);
        }
        if done {
            report.converged = true;
            let mut p = sol.u.clone();
            p.extend_from_slice(boundary_p);
            let mut q = q_new;
            q.extend_from_slice(boundary_q);
            last = Some((p, q, sol, rhs_p, rhs_q));
            break;
        }
        if opts.adaptive_relaxation && growth >= 2 && theta > MIN_RELAXATION {
            report.relaxation = theta / 2.0;
            growth = 0;
            log::info!("Picard residual grew twice; relaxation factor now {}", report.relaxation);
        }
    }
    if contraction && !report.monotone {
        log::warn!("Picard residuals increased although dt < 1/(2M): {:?}", report.residuals);
    }
    match last {
        Some((p, q, obstacle, rhs_p, rhs_q)) => Ok(StepResult { p, q, report, obstacle, rhs_p, rhs_q }),
        None => Err(SolverError::PicardNoConvergence(Box::new(report))),
    }
}

/// A posteriori checks of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepCheck {
    /// `max_phi max(0, r . (p - phi)) / (|b| |p - phi|)` over random feasible
    /// `phi`, with `r = L p - b` the residual of the constrained equation and
    /// the reactions evaluated at the returned fields. Non-positive up to
    /// round-off for a solution of the variational inequality.
    pub inequality: f64,
    /// `max_i |(L q - b)_i| / max_i |b_i|` for the second equation.
    pub equation: f64,
}

/// Verifies a returned step against `samples` random feasible test vectors.
pub fn check_step<R: Rng>(sys: &StepSystem<'_>, result: &StepResult, samples: usize, rng: &mut R) -> StepCheck {
    let ops = &*sys.ops;
    let n = ops.n;
    let mut bp = ops.history(&ops.mass_p, &ops.lhs_p, sys.p_prev, sys.boundary_p);
    let mut bq = ops.history(&ops.mass_q, &ops.lhs_q, sys.q_prev, sys.boundary_q);
    for (b, s) in [(&mut bp, sys.source_p), (&mut bq, sys.source_q)] {
        if let Some(s) = s {
            for i in 0..n {
                b[i] += s[i];
            }
        }
    }
    if let Some(r) = sys.reactions {
        let (fp, gq) = assemble_reaction_loads(sys.gd, &*r.f, &*r.g, &result.p, &result.q);
        for i in 0..n {
            bp[i] += fp[i];
            bq[i] += gq[i];
        }
    }
    let lp = ops.obstacle.matrix().mul_vec(&result.p[..n]);
    let rp: Vec<f64> = (0..n).map(|i| lp[i] - bp[i]).collect();
    let norm_b = dot(&bp, &bp).sqrt().max(f64::MIN_POSITIVE);
    let size = result.p[..n].iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut inequality = 0.0f64;
    for _ in 0..samples {
        let diff: Vec<f64> = (0..n)
            .map(|i| {
                let phi = (result.p[i] + size * rng.random_range(-1.0..1.0)).max(sys.lower[i]);
                result.p[i] - phi
            })
            .collect();
        let nd = dot(&diff, &diff).sqrt();
        if nd > 0.0 {
            inequality = inequality.max(dot(&rp, &diff) / (norm_b * nd));
        }
    }
    let lq = ops.lhs_q.block(0..n, 0..n).mul_vec(&result.q[..n]);
    let scale = bq.iter().fold(f64::MIN_POSITIVE, |m, v| m.max(v.abs()));
    let equation = (0..n).map(|i| (lq[i] - bq[i]).abs()).fold(0.0, f64::max) / scale;
    StepCheck { inequality, equation }
}
