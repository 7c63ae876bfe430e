//! Error norms against exact solutions, convergence studies and the
//! diagnostic quantities entering the error estimate.

mod diagnostics;
mod quality;

pub use diagnostics::{estimate_diagnostics, write_diagnostics_csv, EstimateDiagnostics, StepDiagnostics};
pub use quality::{
    default_flux_probes, default_scalar_probes, flux_probe, quality_report, quality_study, scalar_probe, FluxProbe, QualityStudy,
    ScalarProbe, CONFORMITY_DEGREE, FLUX_PROBES, PROBE_TIME, SCALAR_PROBES,
};

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::gdm::{l2_error, l2_error_with, l2_gradient_error, GradientDiscretisation, SchemeKind};
use crate::mesh::{MeshError, MeshFamily};
use crate::model::{run, ExactSolution, ModelError, ModelProblem, RunOptions, TimeGrid, Trajectory};
use crate::quadrature::TriangleRule;
use crate::scheme::{build_scheme, SchemeError, SchemeOptions};

/// Sub-sampling of the error quadrature (the exact first field is only
/// piecewise smooth).
pub const ERROR_REFINE: usize = 2;

pub const CSV_HEADER: &str = "level,h,dt,err_p_l2,err_q_l2,err_p_h1,err_q_h1,order_p_l2,order_q_l2,order_p_h1,order_q_h1";

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorNorms {
    /// `max_n || Pi p^n - p(t^n) ||`
    pub p_l2: f64,
    pub q_l2: f64,
    /// `sum_n dt || grad_D p^{n+1} - grad p(t^{n+1}) ||`
    pub p_h1: f64,
    pub q_h1: f64,
}

impl ErrorNorms {
    pub fn as_array(&self) -> [f64; 4] {
        [self.p_l2, self.q_l2, self.p_h1, self.q_h1]
    }
}

pub fn error_norms(gd: &dyn GradientDiscretisation, traj: &Trajectory, exact: &ExactSolution) -> ErrorNorms {
    error_norms_with(gd, traj, exact, &TriangleRule::degree5(), ERROR_REFINE)
}

/// [`error_norms`] with an explicit rule for the value errors.
pub fn error_norms_with(
    gd: &dyn GradientDiscretisation,
    traj: &Trajectory,
    exact: &ExactSolution,
    rule: &TriangleRule,
    refine: usize,
) -> ErrorNorms {
    let knots = traj.grid.knots();
    let mut e = ErrorNorms::default();
    for (k, &t) in knots.iter().enumerate() {
        let ep = l2_error_with(gd, &traj.p[k], &|x| (exact.p)(x, t), rule, refine);
        let eq = l2_error_with(gd, &traj.q[k], &|x| (exact.q)(x, t), rule, refine);
        e.p_l2 = e.p_l2.max(ep);
        e.q_l2 = e.q_l2.max(eq);
        if k > 0 {
            let dt = t - knots[k - 1];
            e.p_h1 += dt * l2_gradient_error(gd, &traj.p[k], &|x| (exact.grad_p)(x, t), refine);
            e.q_h1 += dt * l2_gradient_error(gd, &traj.q[k], &|x| (exact.grad_q)(x, t), refine);
        }
    }
    e
}

/// Discrete knots where the value error is largest, for diagnostics.
pub fn value_error_history(gd: &dyn GradientDiscretisation, traj: &Trajectory, exact: &ExactSolution) -> Vec<f64> {
    traj.grid.knots().iter().enumerate().map(|(k, &t)| l2_error(gd, &traj.p[k], &|x| (exact.p)(x, t), ERROR_REFINE)).collect()
}

/// `log(e1 / e2) / log(h1 / h2)`.
pub fn observed_order(e1: f64, e2: f64, h1: f64, h2: f64) -> f64 {
    (e1 / e2).ln() / (h1 / h2).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    pub resolution: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelRecord {
    pub level: usize,
    pub resolution: usize,
    pub cells: usize,
    pub dofs: usize,
    pub h: f64,
    pub dt: f64,
    pub errors: ErrorNorms,
    pub picard_iterations: usize,
    /// All Picard steps satisfied `dt < 1/(2M)`.
    pub contraction: bool,
    pub max_violation: f64,
    pub max_complementarity: f64,
    pub diagnostics: Option<EstimateDiagnostics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub scheme: SchemeKind,
    pub family: MeshFamily,
    pub records: Vec<LevelRecord>,
}

impl ErrorReport {
    /// Orders of the four error columns between levels `k - 1` and `k`.
    pub fn orders(&self, k: usize) -> Option<[f64; 4]> {
        if k == 0 || k >= self.records.len() {
            return None;
        }
        let (a, b) = (&self.records[k - 1], &self.records[k]);
        let (ea, eb) = (a.errors.as_array(), b.errors.as_array());
        Some(std::array::from_fn(|i| observed_order(ea[i], eb[i], a.h, b.h)))
    }

    pub fn write_csv(&self, out: &mut dyn Write) -> std::io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for (k, r) in self.records.iter().enumerate() {
            let e = r.errors.as_array();
            write!(out, "{},{:.12e},{:.12e}", r.level, r.h, r.dt)?;
            for v in e {
                write!(out, ",{v:.12e}")?;
            }
            match self.orders(k) {
                Some(o) => {
                    for v in o {
                        write!(out, ",{v:.12e}")?;
                    }
                }
                None => write!(out, ",,,,")?,
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii")
    }
}

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("a convergence study needs at least two levels, got {0}")]
    TooFewLevels(usize),
    #[error("problem `{0}` has no exact solution")]
    NoExactSolution(String),
    #[error("quality functional: {0}")]
    Quality(String),
    #[error("level {level}: {source}")]
    Mesh {
        level: usize,
        #[source]
        source: MeshError,
    },
    #[error("level {level}: {source}")]
    Scheme {
        level: usize,
        #[source]
        source: SchemeError,
    },
    #[error("level {level}: {source}")]
    Run {
        level: usize,
        #[source]
        source: ModelError,
        /// Levels completed before the failure.
        partial: Box<ErrorReport>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StudyOptions {
    pub run: RunOptions,
    /// Also evaluate the terms of the error estimate on every level.
    pub diagnostics: bool,
}

/// Runs every level (in parallel) and measures the errors.
pub fn convergence_study(
    model: &ModelProblem,
    scheme: &SchemeOptions,
    family: MeshFamily,
    levels: &[Level],
    opts: &StudyOptions,
) -> Result<ErrorReport, StudyError> {
    if levels.len() < 2 {
        return Err(StudyError::TooFewLevels(levels.len()));
    }
    let exact = model.exact.as_ref().ok_or_else(|| StudyError::NoExactSolution(model.name.clone()))?;
    let outcomes: Vec<Result<LevelRecord, StudyError>> = levels
        .par_iter()
        .enumerate()
        .map(|(k, lvl)| {
            let mesh = family.generate(&model.domain, lvl.resolution).map_err(|source| StudyError::Mesh { level: k, source })?;
            let mesh = Arc::new(mesh);
            let gd = build_scheme(mesh.clone(), scheme).map_err(|source| StudyError::Scheme { level: k, source })?;
            let grid = TimeGrid::uniform(model.final_time, lvl.steps).map_err(|source| StudyError::Run {
                level: k,
                source,
                partial: Box::new(ErrorReport { scheme: scheme.kind, family, records: Vec::new() }),
            })?;
            let traj = run(model, gd.as_ref(), &grid, &opts.run).map_err(|source| StudyError::Run {
                level: k,
                source,
                partial: Box::new(ErrorReport { scheme: scheme.kind, family, records: Vec::new() }),
            })?;
            let errors = error_norms(gd.as_ref(), &traj, exact);
            let diagnostics = if opts.diagnostics { Some(estimate_diagnostics(gd.as_ref(), &traj, model)?) } else { None };
            log::info!(
                "{} {} level {k}: n = {}, N = {}, errors {:?}",
                scheme.kind,
                family.name(),
                lvl.resolution,
                lvl.steps,
                errors.as_array()
            );
            Ok(LevelRecord {
                level: k,
                resolution: lvl.resolution,
                cells: mesh.n_cells(),
                dofs: gd.dof_count(),
                h: mesh.mesh_size(),
                dt: grid.dt(),
                errors,
                picard_iterations: traj.steps.iter().map(|s| s.picard.iterations).sum(),
                contraction: traj.steps.iter().all(|s| s.picard.contraction),
                max_violation: traj.max_violation(),
                max_complementarity: traj.steps.iter().map(|s| s.kkt.complementarity).fold(0.0, f64::max),
                diagnostics,
            })
        })
        .collect();
    let mut records = Vec::with_capacity(levels.len());
    for outcome in outcomes {
        match outcome {
            Ok(r) => records.push(r),
            Err(StudyError::Run { level, source, .. }) => {
                return Err(StudyError::Run {
                    level,
                    source,
                    partial: Box::new(ErrorReport { scheme: scheme.kind, family, records }),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(ErrorReport { scheme: scheme.kind, family, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_definition() {
        assert!((observed_order(0.2, 0.1, 0.1, 0.05) - 1.0).abs() < 1e-15);
        assert!((observed_order(0.4, 0.1, 0.1, 0.05) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn order_is_scale_invariant() {
        let (e1, e2, h1, h2) = (0.37, 0.19, 0.3, 0.15);
        for s in [1e-6, 3.0, 1e8] {
            assert!((observed_order(s * e1, s * e2, h1, h2) - observed_order(e1, e2, h1, h2)).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_layout() {
        let rec = |level, h, e| LevelRecord {
            level,
            resolution: 8,
            cells: 64,
            dofs: 100,
            h,
            dt: 0.1,
            errors: ErrorNorms { p_l2: e, q_l2: e, p_h1: e, q_h1: e },
            picard_iterations: 3,
            contraction: true,
            max_violation: 0.0,
            max_complementarity: 0.0,
            diagnostics: None,
        };
        let r =
            ErrorReport { scheme: SchemeKind::Hmm, family: MeshFamily::Rect, records: vec![rec(0, 0.1, 0.2), rec(1, 0.05, 0.1)] };
        let csv = r.to_csv_string();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert!(lines[1].ends_with(",,,,"));
        assert_eq!(lines[2].split(',').count(), 11);
        assert!(lines[2].ends_with("1.000000000000e0"));
    }
}
