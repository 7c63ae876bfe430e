//! Problem data, time grids and the time loop.

mod cases;

pub use cases::{builtin_problem, evaluate_exact, manufactured, spreading, test1, test2, Field};

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gdm::{
    assemble_diffusion, assemble_load, assemble_mass, interpolate_initial, Coefficient, CoefficientError, GradientDiscretisation,
    SchemeKind,
};
use crate::mesh::{DomainSpec, Point, Vector};
use crate::solver::{
    advance_step, check_step, KktResidual, PicardOptions, PicardReport, Reactions, SolverError, StepCheck, StepOperators,
    StepSystem,
};

pub type ScalarField = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
pub type SpaceTimeField = Arc<dyn Fn(Point, f64) -> f64 + Send + Sync>;
pub type SpaceTimeVector = Arc<dyn Fn(Point, f64) -> Vector + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown problem `{0}` (expected test1 or test2)")]
    UnknownProblem(String),
    #[error("problem `{0}` has no exact solution")]
    NoExactSolution(String),
    #[error("final time must be positive, got {0}")]
    FinalTime(f64),
    #[error("time grid needs at least one step")]
    EmptyGrid,
    #[error("time grid knots must increase strictly (knot {0})")]
    NonIncreasingGrid(usize),
    #[error("time grid ends at {end}, problem at {final_time}")]
    GridMismatch { end: f64, final_time: f64 },
    #[error("{0}")]
    Coefficient(#[from] CoefficientError),
    #[error("initial data violate the barrier at {0} unknowns (enable projection to clip)")]
    InfeasibleInitial(usize),
    #[error("step {step} (t = {time}): {source}")]
    Step {
        step: usize,
        time: f64,
        #[source]
        source: SolverError,
    },
}

/// Which side of the barrier the first field lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Obstacle {
    /// `p >= chi`
    #[default]
    Lower,
    /// `p <= chi`, solved as the lower problem for `-p`.
    Upper,
}

/// Exact fields of a manufactured problem.
#[derive(Clone)]
pub struct ExactSolution {
    pub p: SpaceTimeField,
    pub q: SpaceTimeField,
    pub grad_p: SpaceTimeVector,
    pub grad_q: SpaceTimeVector,
    pub dt_p: SpaceTimeField,
    pub dt_q: SpaceTimeField,
    pub div_a_grad_p: SpaceTimeField,
    pub div_b_grad_q: SpaceTimeField,
}

#[derive(Clone)]
pub struct ModelProblem {
    pub name: String,
    pub domain: DomainSpec,
    pub final_time: f64,
    pub a: Coefficient,
    pub b: Coefficient,
    pub reactions: Option<Reactions>,
    /// Lipschitz bound of the reactions; estimated per step when absent.
    pub m_lip: Option<f64>,
    pub barrier: ScalarField,
    pub p0: ScalarField,
    pub q0: ScalarField,
    pub dirichlet_p: SpaceTimeField,
    pub dirichlet_q: SpaceTimeField,
    pub source_p: Option<SpaceTimeField>,
    pub source_q: Option<SpaceTimeField>,
    pub obstacle: Obstacle,
    /// Clip infeasible initial data onto the discrete constraint set.
    pub project_initial: bool,
    pub exact: Option<ExactSolution>,
}

impl std::fmt::Debug for ModelProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelProblem")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("final_time", &self.final_time)
            .field("obstacle", &self.obstacle)
            .finish_non_exhaustive()
    }
}

/// Boundary samples per side used by [`ModelProblem::validate`].
const BOUNDARY_SAMPLES: usize = 64;

impl ModelProblem {
    /// Hard errors for invalid data; soft findings are returned as warnings.
    pub fn validate(&self) -> Result<Vec<String>, ModelError> {
        if !(self.final_time > 0.0) {
            return Err(ModelError::FinalTime(self.final_time));
        }
        let (lo, hi) = (self.domain.min(), self.domain.max());
        let samples: Vec<Point> = (0..=8)
            .flat_map(|i| (0..=8).map(move |j| Point::new(lo + (hi - lo) * i as f64 / 8.0, lo + (hi - lo) * j as f64 / 8.0)))
            .collect();
        for x in &samples {
            self.a.check_at(x)?;
            self.b.check_at(x)?;
        }
        let mut warnings = Vec::new();
        let sign = self.sign();
        let worst = boundary_points(&self.domain, BOUNDARY_SAMPLES)
            .map(|x| sign * (self.barrier)(x) - sign * (self.dirichlet_p)(x, 0.0))
            .fold(f64::NEG_INFINITY, f64::max);
        if worst > 0.0 {
            warnings.push(format!(
                "barrier exceeds the boundary data on the boundary by up to {worst}; \
                 the constraint set is assumed to contain the boundary values"
            ));
        }
        Ok(warnings)
    }

    fn sign(&self) -> f64 {
        match self.obstacle {
            Obstacle::Lower => 1.0,
            Obstacle::Upper => -1.0,
        }
    }

    /// The equivalent lower-obstacle problem in the variable `s p`.
    fn oriented(&self) -> ModelProblem {
        if self.obstacle == Obstacle::Lower {
            return self.clone();
        }
        let mut m = self.clone();
        let neg = |f: &ScalarField| -> ScalarField {
            let f = f.clone();
            Arc::new(move |x| -f(x))
        };
        let neg_t = |f: &SpaceTimeField| -> SpaceTimeField {
            let f = f.clone();
            Arc::new(move |x, t| -f(x, t))
        };
        m.barrier = neg(&self.barrier);
        m.p0 = neg(&self.p0);
        m.dirichlet_p = neg_t(&self.dirichlet_p);
        m.source_p = self.source_p.as_ref().map(neg_t);
        m.reactions = self.reactions.as_ref().map(|r| {
            let (f, g) = (r.f.clone(), r.g.clone());
            Reactions { f: Arc::new(move |p, q| -f(-p, q)), g: Arc::new(move |p, q| g(-p, q)) }
        });
        m.obstacle = Obstacle::Lower;
        m
    }
}

fn boundary_points(domain: &DomainSpec, per_side: usize) -> impl Iterator<Item = Point> + '_ {
    let (lo, hi) = (domain.min(), domain.max());
    (0..per_side).flat_map(move |k| {
        let s = lo + (hi - lo) * k as f64 / per_side as f64;
        let e = hi - (hi - lo) * k as f64 / per_side as f64;
        [Point::new(s, lo), Point::new(hi, s), Point::new(e, hi), Point::new(lo, e)]
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    knots: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(final_time: f64, steps: usize) -> Result<Self, ModelError> {
        if steps == 0 {
            return Err(ModelError::EmptyGrid);
        }
        if !(final_time > 0.0) {
            return Err(ModelError::FinalTime(final_time));
        }
        let knots = (0..=steps).map(|n| if n == steps { final_time } else { final_time * n as f64 / steps as f64 }).collect();
        Ok(Self { knots })
    }

    pub fn from_knots(knots: Vec<f64>) -> Result<Self, ModelError> {
        if knots.len() < 2 {
            return Err(ModelError::EmptyGrid);
        }
        if knots[0] != 0.0 {
            return Err(ModelError::NonIncreasingGrid(0));
        }
        if let Some(k) = knots.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(ModelError::NonIncreasingGrid(k + 1));
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn steps(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn step(&self, n: usize) -> f64 {
        self.knots[n + 1] - self.knots[n]
    }

    pub fn final_time(&self) -> f64 {
        *self.knots.last().expect("non-empty")
    }

    /// Largest step.
    pub fn dt(&self) -> f64 {
        (0..self.steps()).map(|n| self.step(n)).fold(0.0, f64::max)
    }
}

/// Diagnostics of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub picard: PicardReport,
    pub kkt: KktResidual,
    /// `min (p_i - chi_i)` over constrained unknowns (in the oriented variable).
    pub min_gap: f64,
    pub active: usize,
    pub check: Option<StepCheck>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub scheme: SchemeKind,
    pub grid: TimeGrid,
    /// Lifted vectors at every knot.
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub steps: Vec<StepRecord>,
    /// Discrete barrier on the free unknowns (in the original orientation).
    pub lower: Vec<f64>,
    pub obstacle: Obstacle,
    /// Free unknowns clipped at the initial time.
    pub projected_initial: usize,
    pub warnings: Vec<String>,
}

impl Trajectory {
    /// Worst barrier violation over all stored states.
    pub fn max_violation(&self) -> f64 {
        let sign = match self.obstacle {
            Obstacle::Lower => 1.0,
            Obstacle::Upper => -1.0,
        };
        self.p
            .iter()
            .flat_map(|p| self.lower.iter().zip(p).filter(|(l, _)| l.is_finite()).map(move |(l, v)| sign * (l - v)))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub picard: PicardOptions,
    /// Refinement of the source quadrature (sources may jump across the
    /// free boundary).
    pub source_refine: usize,
    /// A posteriori verification of every step.
    pub check: Option<CheckOptions>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { picard: PicardOptions::default(), source_refine: 2, check: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckOptions {
    pub seed: u64,
    /// Random feasible test vectors per step.
    pub samples: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { seed: 0, samples: 5 }
    }
}

/// Inflation of the sampling box about its centre for Lipschitz estimates.
pub const LIPSCHITZ_BOX_INFLATION: f64 = 1.5;
const LIPSCHITZ_SAMPLES: usize = 9;

/// Largest partial derivative of `f` and `g` sampled on the box spanned by
/// the value ranges, inflated by [`LIPSCHITZ_BOX_INFLATION`] about its centre.
pub fn estimate_lipschitz(r: &Reactions, p_range: (f64, f64), q_range: (f64, f64)) -> f64 {
    let axis = |(lo, hi): (f64, f64)| {
        let c = 0.5 * (lo + hi);
        let half = (0.5 * (hi - lo) * LIPSCHITZ_BOX_INFLATION).max(1e-3 * c.abs().max(1.0));
        (0..LIPSCHITZ_SAMPLES).map(move |k| c - half + 2.0 * half * k as f64 / (LIPSCHITZ_SAMPLES - 1) as f64)
    };
    let mut m = 0.0f64;
    for p in axis(p_range) {
        for q in axis(q_range) {
            let (hp, hq) = (1e-6 * p.abs().max(1.0), 1e-6 * q.abs().max(1.0));
            for rate in [&r.f, &r.g] {
                let dp = (rate(p + hp, q) - rate(p - hp, q)) / (2.0 * hp);
                let dq = (rate(p, q + hq) - rate(p, q - hq)) / (2.0 * hq);
                m = m.max(dp.abs()).max(dq.abs());
            }
        }
    }
    m
}

fn range(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// The implicit Euler gradient scheme from `(I_D p0, I_D q0)` over `grid`.
pub fn run(
    model: &ModelProblem,
    gd: &dyn GradientDiscretisation,
    grid: &TimeGrid,
    opts: &RunOptions,
) -> Result<Trajectory, ModelError> {
    run_observed(model, gd, grid, opts, &mut |_, _, _, _| {})
}

/// [`run`] with a callback receiving `(n, t, p, q)` after each knot.
pub fn run_observed(
    model: &ModelProblem,
    gd: &dyn GradientDiscretisation,
    grid: &TimeGrid,
    opts: &RunOptions,
    observe: &mut dyn FnMut(usize, f64, &[f64], &[f64]),
) -> Result<Trajectory, ModelError> {
    let warnings = model.validate()?;
    for w in &warnings {
        log::warn!("{}: {w}", model.name);
    }
    if (grid.final_time() - model.final_time).abs() > 1e-12 * model.final_time {
        log::info!("running `{}` to t = {} (problem default {})", model.name, grid.final_time(), model.final_time);
    }
    let sign = model.sign();
    let m = model.oriented();
    let n = gd.dof_count();

    let mass_p = gd.obstacle_mass();
    let mass_q = assemble_mass(gd);
    let diff_p = assemble_diffusion(gd, &m.a)?;
    let diff_q = assemble_diffusion(gd, &m.b)?;

    let init = interpolate_initial(gd, &*m.p0, &*m.q0, &*m.barrier);
    let lower = gd.discrete_barrier(&*m.barrier);
    let mut p = init.p;
    let mut q = init.q;
    let projected = init.infeasible.len();
    if projected > 0 {
        if !m.project_initial {
            return Err(ModelError::InfeasibleInitial(projected));
        }
        log::warn!("{}: initial data below the barrier at {projected} unknowns; projecting onto the constraint set", model.name);
        for &i in &init.infeasible {
            p[i] = p[i].max(lower[i]);
        }
    }
    let t0 = grid.knots()[0];
    let bp0 = gd.boundary_values(&|x| (m.dirichlet_p)(x, t0));
    let bq0 = gd.boundary_values(&|x| (m.dirichlet_q)(x, t0));
    p[n..].copy_from_slice(&bp0);
    q[n..].copy_from_slice(&bq0);

    let to_user = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| sign * x).collect() };
    observe(0, t0, &to_user(&p), &q);
    let mut traj = Trajectory {
        scheme: gd.kind(),
        grid: grid.clone(),
        p: vec![to_user(&p)],
        q: vec![q.clone()],
        steps: Vec::with_capacity(grid.steps()),
        lower: to_user(&lower),
        obstacle: model.obstacle,
        projected_initial: projected,
        warnings,
    };

    let mut rng = opts.check.map(|c| (ChaCha8Rng::seed_from_u64(c.seed), c.samples));
    let mut ops: Option<StepOperators> = None;
    for step in 0..grid.steps() {
        let dt = grid.step(step);
        let t = grid.knots()[step + 1];
        let wrap = |source| ModelError::Step { step: step + 1, time: t, source };
        if ops.as_ref().is_none_or(|o| (o.dt() - dt).abs() > 1e-14 * dt) {
            ops = Some(StepOperators::new(n, mass_p.clone(), mass_q.clone(), &diff_p, &diff_q, dt).map_err(wrap)?);
        }
        let bp = gd.boundary_values(&|x| (m.dirichlet_p)(x, t));
        let bq = gd.boundary_values(&|x| (m.dirichlet_q)(x, t));
        let sp = m.source_p.as_ref().map(|s| assemble_load(gd, &|x| s(x, t), opts.source_refine));
        let sq = m.source_q.as_ref().map(|s| assemble_load(gd, &|x| s(x, t), opts.source_refine));
        let m_lip = match (&m.m_lip, &m.reactions) {
            (Some(v), _) => *v,
            (None, Some(r)) => estimate_lipschitz(r, range(&p), range(&q)),
            (None, None) => 0.0,
        };
        macro_rules! system {
            ($ops:expr) => {
                StepSystem {
                    gd,
                    ops: $ops,
                    p_prev: &p,
                    q_prev: &q,
                    boundary_p: &bp,
                    boundary_q: &bq,
                    lower: &lower,
                    reactions: m.reactions.as_ref(),
                    source_p: sp.as_deref(),
                    source_q: sq.as_deref(),
                    m_lip,
                    guess: None,
                }
            };
        }
        let ops = ops.as_mut().expect("built above");
        let result = advance_step(system!(&mut *ops), &opts.picard).map_err(wrap)?;
        let check = rng.as_mut().map(|(rng, samples)| check_step(&system!(&mut *ops), &result, *samples, rng));
        let min_gap =
            lower.iter().zip(&result.p).filter(|(l, _)| l.is_finite()).map(|(l, v)| v - l).fold(f64::INFINITY, f64::min);
        traj.steps.push(StepRecord {
            picard: result.report,
            kkt: result.obstacle.kkt,
            min_gap,
            active: result.obstacle.active.len(),
            check,
        });
        p = result.p;
        q = result.q;
        let up = to_user(&p);
        observe(step + 1, t, &up, &q);
        traj.p.push(up);
        traj.q.push(q.clone());
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid() {
        let g = TimeGrid::uniform(0.25, 10).unwrap();
        assert_eq!(g.steps(), 10);
        assert_eq!(g.final_time(), 0.25);
        assert!((g.dt() - 0.025).abs() < 1e-15);
        assert!(matches!(TimeGrid::uniform(1.0, 0), Err(ModelError::EmptyGrid)));
        assert!(matches!(TimeGrid::from_knots(vec![0.0, 0.5, 0.5]), Err(ModelError::NonIncreasingGrid(2))));
    }

    #[test]
    fn lipschitz_of_linear_reactions() {
        let r = Reactions { f: Arc::new(|p, q| 3.0 * p - q), g: Arc::new(|p, _| -0.5 * p) };
        let m = estimate_lipschitz(&r, (0.0, 1.0), (-2.0, 2.0));
        assert!((m - 3.0).abs() < 1e-6);
    }

    #[test]
    fn spreading_problem_warns_about_boundary_barrier() {
        let w = test1().validate().unwrap();
        assert_eq!(w.len(), 1);
        assert!(test2().validate().unwrap().is_empty());
    }
}
