//! Step checks and error-estimate diagnostics on short manufactured runs.

use std::sync::Arc;

use approx::assert_relative_eq;
use biofilm_gds_core::gdm::SchemeKind;
use biofilm_gds_core::mesh::{DomainSpec, MeshFamily};
use biofilm_gds_core::model::{run, test2, CheckOptions, RunOptions, TimeGrid, Trajectory};
use biofilm_gds_core::scheme::{build_scheme, SchemeOptions};
use biofilm_gds_core::verify::{error_norms, estimate_diagnostics, write_diagnostics_csv};

fn solve(kind: SchemeKind, n: usize, steps: usize) -> (Box<dyn biofilm_gds_core::gdm::GradientDiscretisation>, Trajectory) {
    let model = test2();
    let mesh = Arc::new(MeshFamily::Rect.generate(&DomainSpec::unit_square(), n).unwrap());
    let gd = build_scheme(mesh, &SchemeOptions::new(kind)).unwrap();
    let opts = RunOptions { check: Some(CheckOptions { seed: 11, samples: 8 }), ..RunOptions::default() };
    let traj = run(&model, gd.as_ref(), &TimeGrid::uniform(model.final_time, steps).unwrap(), &opts).unwrap();
    (gd, traj)
}

#[test]
fn every_step_passes_its_check() {
    for kind in [SchemeKind::Hmm, SchemeKind::P1] {
        let (_, traj) = solve(kind, 8, 10);
        assert_eq!(traj.steps.len(), 10);
        for (n, s) in traj.steps.iter().enumerate() {
            let c = s.check.expect("check requested");
            assert!(c.inequality <= 1e-9, "{kind} step {n}: {}", c.inequality);
            assert!(c.equation <= 1e-8, "{kind} step {n}: {}", c.equation);
            assert!(s.picard.converged && s.kkt.complementarity <= 1e-8);
        }
    }
}

#[test]
fn diagnostics_are_finite_and_bound_the_value_error() {
    let model = test2();
    for kind in [SchemeKind::Hmm, SchemeKind::P1] {
        let (gd, traj) = solve(kind, 8, 10);
        let d = estimate_diagnostics(gd.as_ref(), &traj, &model).unwrap();
        assert_eq!(d.steps.len(), 10);
        for s in &d.steps {
            for v in [s.s_p, s.s_q, s.s_dtp, s.s_dtq, s.w_a, s.w_b] {
                assert!(v.is_finite() && v >= 0.0, "{kind}: {s:?}");
            }
            assert!(s.m_d.is_finite());
        }
        let manual: f64 = d.steps.iter().map(|s| d.dt * s.m_d).sum();
        assert_relative_eq!(d.contact_sum(), manual, max_relative = 1e-10, epsilon = 1e-14);

        let e = error_norms(gd.as_ref(), &traj, model.exact.as_ref().unwrap());
        assert!(e.p_l2 < d.value_bound(), "{kind}: {} vs {}", e.p_l2, d.value_bound());
    }
}

#[test]
fn consistency_terms_shrink_under_refinement() {
    let model = test2();
    let coarse = solve(SchemeKind::Hmm, 4, 4);
    let fine = solve(SchemeKind::Hmm, 16, 4);
    let dc = estimate_diagnostics(coarse.0.as_ref(), &coarse.1, &model).unwrap();
    let df = estimate_diagnostics(fine.0.as_ref(), &fine.1, &model).unwrap();
    let (a, b) = (dc.steps.last().unwrap(), df.steps.last().unwrap());
    assert!(b.s_p < a.s_p && b.s_q < a.s_q && b.w_a < a.w_a);
}

#[test]
fn diagnostics_csv_layout() {
    let model = test2();
    let (gd, traj) = solve(SchemeKind::P1, 4, 3);
    let d = estimate_diagnostics(gd.as_ref(), &traj, &model).unwrap();
    let mut buf = Vec::new();
    write_diagnostics_csv(&d, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("# r0="));
    assert_eq!(lines[1], "step,t,s_p,s_q,s_dtp,s_dtq,w_a,w_b,m_d");
    assert!(lines[4].starts_with("3,"));
    assert!(lines[2..].iter().all(|l| l.split(',').count() == 9));
}
