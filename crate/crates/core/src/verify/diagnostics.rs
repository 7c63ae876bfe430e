use std::io::Write;

use rayon::prelude::*;

use crate::gdm::{
    consistency_defect_at, l2_error, limit_conformity_defect, GradientDiscretisation, GramOperators, MinimizationInterpolant,
    QualityError, INITIAL_SUBSAMPLING,
};
use crate::mesh::{Point, Vector};
use crate::model::{ModelProblem, Trajectory};
use crate::quadrature::{gauss_legendre_unit, TriangleRule};

use super::{StudyError, ERROR_REFINE};

/// Per-step terms of the error bound.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepDiagnostics {
    pub step: usize,
    pub t: f64,
    /// `S_D` of the first exact field at `t^{n+1}` (scheme interpolant).
    pub s_p: f64,
    /// `S_D` of the second exact field at `t^{n+1}` (minimisation interpolant).
    pub s_q: f64,
    /// The same for the step averages of the time derivatives.
    pub s_dtp: f64,
    pub s_dtq: f64,
    /// `W_D(A grad p)` and `W_D(B grad q)` of the step averages.
    pub w_a: f64,
    pub w_b: f64,
    /// Barrier / contact consistency term.
    pub m_d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateDiagnostics {
    /// `|| p0 - Pi I_D p0 ||`
    pub r0: f64,
    pub r0_tilde: f64,
    pub s_p0: f64,
    pub s_q0: f64,
    pub steps: Vec<StepDiagnostics>,
    pub dt: f64,
}

impl EstimateDiagnostics {
    /// `sum dt M_D`, which may be slightly negative through quadrature.
    pub fn contact_sum(&self) -> f64 {
        let mut prev = 0.0;
        self.steps
            .iter()
            .map(|s| {
                let dt = s.t - prev;
                prev = s.t;
                dt * s.m_d
            })
            .sum()
    }

    /// The bracket on the right of the value error bound (without its
    /// constant).
    pub fn value_bound(&self) -> f64 {
        let last = self.steps.last().copied().unwrap_or_default();
        self.dt
            + last.s_p
            + last.s_q
            + last.s_dtp
            + last.s_dtq
            + last.w_a
            + last.w_b
            + self.s_q0
            + self.r0_tilde
            + self.s_p0
            + self.r0
            + self.contact_sum().max(0.0).sqrt()
    }
}

/// Evaluates all diagnostic terms along a trajectory of a problem with a
/// known solution.
pub fn estimate_diagnostics(
    gd: &dyn GradientDiscretisation,
    traj: &Trajectory,
    model: &ModelProblem,
) -> Result<EstimateDiagnostics, StudyError> {
    let exact = model.exact.as_ref().ok_or_else(|| StudyError::NoExactSolution(model.name.clone()))?;
    let not_definite = |e: QualityError| StudyError::Quality(e.to_string());
    let gram = GramOperators::new(gd).map_err(not_definite)?;
    let min_interp = MinimizationInterpolant::new(gd).map_err(|e| not_definite(e.into()))?;

    let knots = traj.grid.knots();
    let t0 = knots[0];
    let jp = gd.interpolate_mean(&|x| (model.p0)(x), INITIAL_SUBSAMPLING);
    let jq = gd.interpolate_mean(&|x| (model.q0)(x), INITIAL_SUBSAMPLING);
    let r0 = l2_error(gd, &jp, &|x| (model.p0)(x), INITIAL_SUBSAMPLING);
    let r0_tilde = l2_error(gd, &jq, &|x| (model.q0)(x), INITIAL_SUBSAMPLING);
    let s_p = |t: f64| {
        let v = gd.interpolate(&|x| (exact.p)(x, t));
        consistency_defect_at(gd, &v, &|x| (exact.p)(x, t), &|x| (exact.grad_p)(x, t), ERROR_REFINE)
    };
    let s_q = |t: f64| {
        let v = min_interp.apply(gd, &|x| (exact.q)(x, t), &|x| (exact.grad_q)(x, t));
        consistency_defect_at(gd, &v, &|x| (exact.q)(x, t), &|x| (exact.grad_q)(x, t), ERROR_REFINE)
    };
    let s_p0 = s_p(t0);
    let s_q0 = s_q(t0);

    let chi_d = gd.interpolate(&|x| (model.barrier)(x));
    let (gx, gw) = gauss_legendre_unit(3);
    let rule = TriangleRule::degree5();
    let mut steps = Vec::with_capacity(traj.grid.steps());
    for n in 0..traj.grid.steps() {
        let (ta, tb) = (knots[n], knots[n + 1]);
        let dt = tb - ta;
        let taus: Vec<(f64, f64)> = gx.iter().zip(&gw).map(|(&s, &w)| (ta + s * dt, w)).collect();
        let avg = |f: &dyn Fn(f64) -> f64| taus.iter().map(|&(t, w)| w * f(t)).sum::<f64>();
        let avg_v = |f: &dyn Fn(f64) -> Vector| taus.iter().map(|&(t, w)| f(t) * w).sum::<Vector>();

        let dtp = |x: Point| ((exact.p)(x, tb) - (exact.p)(x, ta)) / dt;
        let dtp_grad = |x: Point| ((exact.grad_p)(x, tb) - (exact.grad_p)(x, ta)) / dt;
        let dtq = |x: Point| ((exact.q)(x, tb) - (exact.q)(x, ta)) / dt;
        let dtq_grad = |x: Point| ((exact.grad_q)(x, tb) - (exact.grad_q)(x, ta)) / dt;
        let v = gd.interpolate(&dtp);
        let s_dtp = consistency_defect_at(gd, &v, &dtp, &dtp_grad, ERROR_REFINE);
        let v = min_interp.apply(gd, &dtq, &dtq_grad);
        let s_dtq = consistency_defect_at(gd, &v, &dtq, &dtq_grad, ERROR_REFINE);

        let w_a = limit_conformity_defect(gd, &gram, &|x| avg_v(&|t| model.a.at(&x) * (exact.grad_p)(x, t)), &|x| {
            avg(&|t| (exact.div_a_grad_p)(x, t))
        });
        let w_b = limit_conformity_defect(gd, &gram, &|x| avg_v(&|t| model.b.at(&x) * (exact.grad_q)(x, t)), &|x| {
            avg(&|t| (exact.div_b_grad_q)(x, t))
        });

        // M_D: (chi_D - Pi P_D p(t^{n+1})) times the averaged residual of the
        // constrained equation, sources included
        let pd = gd.interpolate(&|x| (exact.p)(x, tb));
        let residual = |x: Point| {
            avg(&|t| {
                let (p, q) = ((exact.p)(x, t), (exact.q)(x, t));
                let f = model.reactions.as_ref().map_or(0.0, |r| (r.f)(p, q));
                let s = model.source_p.as_ref().map_or(0.0, |s| s(x, t));
                f + s + (exact.div_a_grad_p)(x, t) - (exact.dt_p)(x, t)
            })
        };
        let parts: Vec<f64> = gd
            .pieces()
            .par_iter()
            .map(|piece| {
                rule.integrate_refined(&piece.triangle, ERROR_REFINE, |x| {
                    (piece.value_at(&chi_d, &x) - piece.value_at(&pd, &x)) * residual(x)
                })
            })
            .collect();
        let m_d = parts.iter().sum();

        steps.push(StepDiagnostics { step: n + 1, t: tb, s_p: s_p(tb), s_q: s_q(tb), s_dtp, s_dtq, w_a, w_b, m_d });
    }
    Ok(EstimateDiagnostics { r0, r0_tilde, s_p0, s_q0, steps, dt: traj.grid.dt() })
}

pub fn write_diagnostics_csv(d: &EstimateDiagnostics, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "# r0={:.12e} r0_tilde={:.12e} s_p0={:.12e} s_q0={:.12e}", d.r0, d.r0_tilde, d.s_p0, d.s_q0)?;
    writeln!(out, "step,t,s_p,s_q,s_dtp,s_dtq,w_a,w_b,m_d")?;
    for s in &d.steps {
        writeln!(
            out,
            "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            s.step, s.t, s.s_p, s.s_q, s.s_dtp, s.s_dtq, s.w_a, s.w_b, s.m_d
        )?;
    }
    Ok(())
}
