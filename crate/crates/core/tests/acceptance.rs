//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 when
//! any criterion is red.
//!
//! Runs the criteria in the order 7, 1..6, 8 (the source check gates the
//! convergence runs) and prints a summary in numeric order.
//! `ACCEPTANCE_ONLY=2,5` restricts the run to the listed criteria.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use biofilm_gds_core::gdm::{
    assemble_diffusion, assemble_mass, assemble_reaction_loads, Coefficient, GradientDiscretisation, SchemeKind,
};
use biofilm_gds_core::mesh::{load_mesh, DomainSpec, Mesh, MeshFamily, Point};
use biofilm_gds_core::model::{manufactured as m, run, test1, test2, CheckOptions, RunOptions, TimeGrid};
use biofilm_gds_core::scheme::{build_scheme, SchemeOptions};
use biofilm_gds_core::solver::{advance_step, PicardOptions, Reactions, StepOperators, StepSystem};
use biofilm_gds_core::sparse::Cholesky;
use biofilm_gds_core::verify::{
    convergence_study, default_scalar_probes, flux_probe, quality_study, Level, StudyOptions, CSV_HEADER,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ORDER_RANGE: (f64, f64) = (0.8, 1.3);
const ORACLE_TOL: f64 = 1e-9;
const ORACLE_INSTANCES: u64 = 50;
const ORACLE_MAX_DOFS: usize = 12;
const FEASIBILITY_TOL: f64 = 1e-8;
const COMPLEMENTARITY_TOL: f64 = 1e-8;
const UNIQUENESS_TOL: f64 = 1e-8;
const UNIQUENESS_STEPS: usize = 10;
const AFFINE_TOL: f64 = 1e-11;
const RATIO_RANGE: (f64, f64) = (1.7, 2.3);
const P1_CONFORMITY_TOL: f64 = 1e-10;
const COERCIVITY_SPREAD: f64 = 0.2;
const SOURCE_FD_TOL: f64 = 1e-5;
const SOURCE_POINTS: usize = 20;
const Q_IDENTITY_TOL: f64 = 1e-6;
const THREAD_COUNTS: [usize; 3] = [1, 2, 8];

const DYADIC: [Level; 4] = [
    Level { resolution: 8, steps: 10 },
    Level { resolution: 16, steps: 20 },
    Level { resolution: 32, steps: 40 },
    Level { resolution: 64, steps: 80 },
];

struct Outcome {
    id: usize,
    pass: bool,
    detail: String,
}

fn line(o: &Outcome) -> String {
    format!("criterion {}: {} {}", o.id, if o.pass { "PASS" } else { "FAIL" }, o.detail)
}

fn main() {
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |id: usize| only.as_ref().is_none_or(|o| o.contains(&id) || (id == 1 && o.contains(&8)));
    let mut outcomes = Vec::new();
    let mut report = |o: Outcome, t: Instant| {
        println!("{} [{:.1}s]", line(&o), t.elapsed().as_secs_f64());
        outcomes.push(o);
    };

    let mut gate_open = true;
    if wanted(7) {
        let t = Instant::now();
        let gate = criterion7();
        gate_open = gate.pass;
        report(gate, t);
    }

    let mut csvs = Vec::new();
    if wanted(1) {
        let t = Instant::now();
        let c1 = if gate_open {
            let (o, c) = criterion1();
            csvs = c;
            o
        } else {
            Outcome { id: 1, pass: false, detail: "not run: the source check (criterion 7) is red".into() }
        };
        report(c1, t);
    }

    for (f, id) in [(criterion2 as fn() -> Outcome, 2), (criterion3, 3), (criterion4, 4), (criterion5, 5), (criterion6, 6)] {
        if wanted(id) {
            let t = Instant::now();
            let o = f();
            assert_eq!(o.id, id);
            report(o, t);
        }
    }

    if wanted(8) {
        let t = Instant::now();
        let c8 = if csvs.is_empty() {
            Outcome { id: 8, pass: false, detail: "not run: no criterion-1 output".into() }
        } else {
            criterion8(&csvs)
        };
        report(c8, t);
    }

    outcomes.sort_by_key(|o| o.id);
    println!("\nsummary");
    for o in &outcomes {
        println!("{}", line(o));
    }
    let red = outcomes.iter().filter(|o| !o.pass).count();
    println!("{} of {} criteria pass", outcomes.len() - red, outcomes.len());
    if red > 0 {
        std::process::exit(1);
    }
}

fn in_range(x: f64, (lo, hi): (f64, f64)) -> bool {
    x >= lo && x <= hi
}

fn mesh(family: MeshFamily, n: usize) -> Arc<Mesh> {
    Arc::new(family.generate(&DomainSpec::unit_square(), n).unwrap())
}

/// Hand-written pentagon and two quadrilaterals.
fn fixture_mesh() -> Arc<Mesh> {
    Arc::new(load_mesh(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/meshes/three_cells.mesh")).unwrap())
}

fn scheme(mesh: Arc<Mesh>, kind: SchemeKind) -> Box<dyn GradientDiscretisation> {
    build_scheme(mesh, &SchemeOptions::new(kind)).unwrap()
}

// ---------------------------------------------------------------- 1 and 8

/// `(family, scheme, csv)` of every study, run on a pool of `threads`.
fn criterion1_studies(threads: usize) -> Vec<(MeshFamily, SchemeKind, String, Vec<[f64; 4]>)> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let model = test2();
        let mut out = Vec::new();
        for family in [MeshFamily::Rect, MeshFamily::Hex] {
            for kind in [SchemeKind::Hmm, SchemeKind::P1] {
                let report =
                    convergence_study(&model, &SchemeOptions::new(kind), family, &DYADIC, &StudyOptions::default()).unwrap();
                let orders = (1..report.records.len()).map(|k| report.orders(k).unwrap()).collect();
                out.push((family, kind, report.to_csv_string(), orders));
            }
        }
        out
    })
}

fn criterion1() -> (Outcome, Vec<String>) {
    let studies = criterion1_studies(THREAD_COUNTS[0]);
    let columns = ["p_l2", "q_l2", "p_h1", "q_h1"];
    let mut pass = true;
    let mut parts = Vec::new();
    let mut red = Vec::new();
    for (family, kind, csv, orders) in &studies {
        assert!(csv.starts_with(CSV_HEADER));
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (k, o) in orders.iter().enumerate() {
            for (c, &v) in columns.iter().zip(o) {
                lo = lo.min(v);
                hi = hi.max(v);
                if !in_range(v, ORDER_RANGE) {
                    pass = false;
                    red.push(format!("{}/{kind} {c} {}->{}: {v:.3}", family.name(), k, k + 1));
                }
            }
        }
        parts.push(format!("{}/{kind} [{lo:.3}, {hi:.3}]", family.name()));
    }
    let mut detail = format!("test 2 orders in [{}, {}]: {}", ORDER_RANGE.0, ORDER_RANGE.1, parts.join(", "));
    if !red.is_empty() {
        detail.push_str(&format!("; out of range: {}", red.join(", ")));
    }
    (Outcome { id: 1, pass, detail }, studies.into_iter().map(|s| s.2).collect())
}

fn criterion8(reference: &[String]) -> Outcome {
    let mut differing = Vec::new();
    for &threads in &THREAD_COUNTS[1..] {
        let studies = criterion1_studies(threads);
        for ((family, kind, csv, _), r) in studies.iter().zip(reference) {
            if csv != r {
                differing.push(format!("{}/{kind} at {threads} threads", family.name()));
            }
        }
    }
    let pass = differing.is_empty();
    let detail = if pass {
        format!("{} criterion-1 CSVs bit-identical at {:?} threads", reference.len(), THREAD_COUNTS)
    } else {
        format!("CSVs differ: {}", differing.join(", "))
    };
    Outcome { id: 8, pass, detail }
}

// ---------------------------------------------------------------- 2

fn dense(m: &biofilm_gds_core::sparse::CsrMatrix) -> DMatrix<f64> {
    let rows = m.to_dense();
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| rows[i][j])
}

/// Minimiser of `1/2 u'Au - b'u` subject to `u >= lower` by trying every
/// active set of the constrained unknowns and keeping the one satisfying
/// the KKT conditions.
fn enumerate_obstacle(a: &DMatrix<f64>, b: &DVector<f64>, lower: &[f64]) -> DVector<f64> {
    let n = b.len();
    let constrained: Vec<usize> = (0..n).filter(|&i| lower[i].is_finite()).collect();
    let scale = b.amax().max(1.0);
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << constrained.len()) {
        let active: Vec<bool> = {
            let mut v = vec![false; n];
            for (k, &i) in constrained.iter().enumerate() {
                v[i] = mask & (1 << k) != 0;
            }
            v
        };
        let mut red = a.clone();
        let mut rhs = b.clone();
        for i in 0..n {
            if active[i] {
                for j in 0..n {
                    if !active[j] {
                        rhs[j] -= a[(j, i)] * lower[i];
                    }
                    red[(i, j)] = 0.0;
                    red[(j, i)] = 0.0;
                }
                red[(i, i)] = 1.0;
                rhs[i] = lower[i];
            }
        }
        let Some(u) = red.lu().solve(&rhs) else { continue };
        let lambda = a * &u - b;
        // violation of the KKT conditions; zero for the solution
        let mut worst = 0.0f64;
        for i in 0..n {
            if active[i] {
                worst = worst.max(-lambda[i]);
            } else {
                worst = worst.max(lambda[i].abs());
                if lower[i].is_finite() {
                    worst = worst.max(lower[i] - u[i]);
                }
            }
        }
        if best.as_ref().is_none_or(|(w, _)| worst < *w) {
            best = Some((worst, u));
        }
        if worst <= 1e-13 * scale {
            break;
        }
    }
    best.expect("at least one active set").1
}

struct OracleInstance {
    gd: Box<dyn GradientDiscretisation>,
    dt: f64,
    p_prev: Vec<f64>,
    q_prev: Vec<f64>,
    bp: Vec<f64>,
    bq: Vec<f64>,
    lower: Vec<f64>,
    reactions: Reactions,
    m_lip: f64,
}

fn oracle_instance(seed: u64) -> OracleInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = if seed % 2 == 0 { SchemeKind::Hmm } else { SchemeKind::P1 };
    let msh = if seed % 4 < 2 { mesh(MeshFamily::Rect, 2) } else { fixture_mesh() };
    let gd = scheme(msh, kind);
    let len = gd.lifted_len();
    let nb = gd.boundary_dof_count();
    let mut uniform = |lo: f64, hi: f64, k: usize| (0..k).map(|_| rng.random_range(lo..hi)).collect::<Vec<f64>>();
    let p_prev = uniform(-0.2, 1.0, len);
    let q_prev = uniform(0.0, 1.0, len);
    let bp = uniform(-0.2, 0.5, nb);
    let bq = uniform(0.0, 1.0, nb);
    let c = uniform(-1.0, 1.0, 7);
    let dt = rng.random_range(0.01..0.1);
    let (c0, c1, c2) = (c[0], c[1], c[2]);
    let chi = move |x: Point| 0.3 * (c0 + c1 * x.x + c2 * x.y);
    let lower = gd.discrete_barrier(&chi);
    let (a1, b1, a2) = (c[3], c[4], c[5]);
    let shift = c[6];
    let reactions = Reactions {
        f: Arc::new(move |p, q| a1 * (p + b1 * q).sin() + shift),
        g: Arc::new(move |p, q| a2 * p.cos() * q / (1.0 + q * q)),
    };
    // |df| <= |a1| (1 + |b1|), |dg| <= 2 |a2|
    let m_lip = (a1.abs() * (1.0 + b1.abs())).max(2.0 * a2.abs());
    OracleInstance { gd, dt, p_prev, q_prev, bp, bq, lower, reactions, m_lip }
}

/// Damped fixed point of the frozen-reaction step map, with the obstacle
/// problem solved by enumeration and the second equation by a dense LU.
fn oracle_step(inst: &OracleInstance) -> (Vec<f64>, Vec<f64>) {
    let gd = inst.gd.as_ref();
    let n = gd.dof_count();
    let len = gd.lifted_len();
    let mp = dense(&gd.obstacle_mass());
    let mq = dense(&assemble_mass(gd));
    let lp = &mp / inst.dt + dense(&assemble_diffusion(gd, &Coefficient::identity()).unwrap());
    let lq = &mq / inst.dt + dense(&assemble_diffusion(gd, &Coefficient::identity()).unwrap());
    let history = |mass: &DMatrix<f64>, lhs: &DMatrix<f64>, prev: &[f64], boundary: &[f64]| -> DVector<f64> {
        DVector::from_fn(n, |i, _| {
            let mut s = 0.0;
            for j in 0..len {
                s += mass[(i, j)] * prev[j] / inst.dt;
            }
            for (k, v) in boundary.iter().enumerate() {
                s -= lhs[(i, n + k)] * v;
            }
            s
        })
    };
    let hp = history(&mp, &lp, &inst.p_prev, &inst.bp);
    let hq = history(&mq, &lq, &inst.q_prev, &inst.bq);
    let lp_free = lp.view((0, 0), (n, n)).into_owned();
    let lq_lu = lq.view((0, 0), (n, n)).into_owned().lu();

    let lift = |free: &[f64], boundary: &[f64]| [free, boundary].concat();
    let mut w1 = lift(&inst.p_prev[..n], &inst.bp);
    let mut w2 = lift(&inst.q_prev[..n], &inst.bq);
    let theta = 0.5;
    for _ in 0..5_000 {
        let (fp, gq) = assemble_reaction_loads(gd, &*inst.reactions.f, &*inst.reactions.g, &w1, &w2);
        let bp = &hp + DVector::from_column_slice(&fp[..n]);
        let bq = &hq + DVector::from_column_slice(&gq[..n]);
        let p = enumerate_obstacle(&lp_free, &bp, &inst.lower);
        let q = lq_lu.solve(&bq).unwrap();
        let mut change = 0.0f64;
        for i in 0..n {
            let (np, nq) = (w1[i] + theta * (p[i] - w1[i]), w2[i] + theta * (q[i] - w2[i]));
            change = change.max((np - w1[i]).abs()).max((nq - w2[i]).abs());
            w1[i] = np;
            w2[i] = nq;
        }
        if change < 1e-14 {
            break;
        }
    }
    (w1[..n].to_vec(), w2[..n].to_vec())
}

fn criterion2() -> Outcome {
    let mut worst = 0.0f64;
    let mut max_dofs = 0;
    let mut failures = Vec::new();
    let opts = PicardOptions { tol: 1e-14, max_iter: 1000, ..PicardOptions::default() };
    for seed in 0..ORACLE_INSTANCES {
        let inst = oracle_instance(seed);
        let gd = inst.gd.as_ref();
        let n = gd.dof_count();
        max_dofs = max_dofs.max(n);
        let mut ops = StepOperators::new(
            n,
            gd.obstacle_mass(),
            assemble_mass(gd),
            &assemble_diffusion(gd, &Coefficient::identity()).unwrap(),
            &assemble_diffusion(gd, &Coefficient::identity()).unwrap(),
            inst.dt,
        )
        .unwrap();
        let sys = StepSystem {
            gd,
            ops: &mut ops,
            p_prev: &inst.p_prev,
            q_prev: &inst.q_prev,
            boundary_p: &inst.bp,
            boundary_q: &inst.bq,
            lower: &inst.lower,
            reactions: Some(&inst.reactions),
            source_p: None,
            source_q: None,
            m_lip: inst.m_lip,
            guess: None,
        };
        let got = match advance_step(sys, &opts) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        let (p, q) = oracle_step(&inst);
        let err = (0..n).map(|i| (got.p[i] - p[i]).abs().max((got.q[i] - q[i]).abs())).fold(0.0, f64::max);
        worst = worst.max(err);
        if err > ORACLE_TOL {
            failures.push(format!("seed {seed}: {err:.2e}"));
        }
    }
    let pass = failures.is_empty() && max_dofs <= ORACLE_MAX_DOFS;
    let mut detail = format!(
        "{ORACLE_INSTANCES} random steps with at most {max_dofs} unknowns, max |step - enumeration oracle| = {worst:.2e} (tol {ORACLE_TOL:e})"
    );
    if !failures.is_empty() {
        detail.push_str(&format!("; failed: {}", failures.join(", ")));
    }
    Outcome { id: 2, pass, detail }
}

// ---------------------------------------------------------------- 3

fn criterion3() -> Outcome {
    let mut model = test1();
    model.final_time = 0.5;
    let grid = TimeGrid::uniform(0.5, 50).unwrap();
    let opts = RunOptions { check: Some(CheckOptions { seed: 3, samples: 5 }), ..RunOptions::default() };
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in [SchemeKind::Hmm, SchemeKind::P1] {
        let msh = mesh(MeshFamily::Hex, 16);
        let cells = msh.n_cells();
        let gd = scheme(msh, kind);
        let traj = run(&model, gd.as_ref(), &grid, &opts).unwrap();
        // reconstructed p against the reconstructed barrier at every piece vertex
        let mut violation = 0.0f64;
        for p in &traj.p {
            for piece in gd.pieces() {
                for x in &piece.triangle {
                    let barrier: f64 = piece
                        .dofs
                        .iter()
                        .zip(&piece.value)
                        .filter(|(&d, a)| a.eval(x) != 0.0 && d < gd.dof_count() && traj.lower[d].is_finite())
                        .map(|(&d, a)| traj.lower[d] * a.eval(x))
                        .sum();
                    violation = violation.max(barrier - piece.value_at(p, x));
                }
            }
        }
        violation = violation.max(traj.max_violation());
        let compl = traj.steps.iter().map(|s| s.kkt.complementarity).fold(0.0, f64::max);
        let ineq = traj.steps.iter().map(|s| s.check.unwrap().inequality).fold(0.0, f64::max);
        let ok =
            traj.steps.len() == 50 && violation <= FEASIBILITY_TOL && compl <= COMPLEMENTARITY_TOL && ineq <= COMPLEMENTARITY_TOL;
        pass &= ok;
        parts.push(format!(
            "{kind} ({cells} cells): violation {violation:.1e}, complementarity {compl:.1e}, inequality check {ineq:.1e}"
        ));
    }
    Outcome { id: 3, pass, detail: format!("test 1, 50 steps to t = 0.5: {}", parts.join("; ")) }
}

// ---------------------------------------------------------------- 4

fn criterion4() -> Outcome {
    let mut model = test1();
    model.final_time = 0.5;
    let grid = TimeGrid::uniform(0.5, 50).unwrap();
    let picard = PicardOptions { tol: 1e-12, max_iter: 200, adaptive_relaxation: false, ..PicardOptions::default() };
    let opts = RunOptions { picard, ..RunOptions::default() };
    let reactions = model.reactions.clone().unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for kind in [SchemeKind::Hmm, SchemeKind::P1] {
        let gd = scheme(mesh(MeshFamily::Hex, 16), kind);
        let n = gd.dof_count();
        let short = TimeGrid::uniform(grid.step(0) * UNIQUENESS_STEPS as f64, UNIQUENESS_STEPS).unwrap();
        let mut m10 = model.clone();
        m10.final_time = short.final_time();
        let traj = run(&m10, gd.as_ref(), &short, &opts).unwrap();
        let lower = gd.discrete_barrier(&*model.barrier);
        let zero = vec![0.0; gd.boundary_dof_count()];
        let mut ops = StepOperators::new(
            n,
            gd.obstacle_mass(),
            assemble_mass(gd.as_ref()),
            &assemble_diffusion(gd.as_ref(), &model.a).unwrap(),
            &assemble_diffusion(gd.as_ref(), &model.b).unwrap(),
            short.step(0),
        )
        .unwrap();
        let (mut gap, mut contraction, mut monotone) = (0.0f64, true, true);
        for step in 0..UNIQUENESS_STEPS {
            let (p_prev, q_prev) = (&traj.p[step], &traj.q[step]);
            let m_lip = traj.steps[step].picard.m_lip;
            let g1: Vec<f64> = p_prev.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
            let g2: Vec<f64> = q_prev.iter().map(|v| (v + rng.random_range(-1.0..1.0)).max(0.0)).collect();
            let mut results = Vec::new();
            for guess in [None, Some((&g1[..], &g2[..]))] {
                let sys = StepSystem {
                    gd: gd.as_ref(),
                    ops: &mut ops,
                    p_prev,
                    q_prev,
                    boundary_p: &zero,
                    boundary_q: &zero,
                    lower: &lower,
                    reactions: Some(&reactions),
                    source_p: None,
                    source_q: None,
                    m_lip,
                    guess,
                };
                let r = advance_step(sys, &picard).unwrap();
                contraction &= r.report.contraction;
                let res = &r.report.residuals;
                monotone &= res.windows(2).skip(1).all(|w| w[1] <= w[0] * (1.0 + 1e-10) + 1e-15);
                results.push(r);
            }
            let d = (0..n).map(|i| (results[0].p[i] - results[1].p[i]).abs().max((results[0].q[i] - results[1].q[i]).abs()));
            gap = gap.max(d.fold(0.0, f64::max));
        }
        let ok = contraction && monotone && gap <= UNIQUENESS_TOL;
        pass &= ok;
        parts.push(format!("{kind}: max gap {gap:.1e}, dt < 1/(2M) {contraction}, residuals nonincreasing {monotone}"));
    }
    Outcome { id: 4, pass, detail: format!("two Picard starts over {UNIQUENESS_STEPS} test-1 steps: {}", parts.join("; ")) }
}

// ---------------------------------------------------------------- 5

fn criterion5() -> Outcome {
    let affine = |x: Point| 0.7 - 1.3 * x.x + 2.1 * x.y;
    let meshes = [("rect", mesh(MeshFamily::Rect, 7)), ("hex", mesh(MeshFamily::Hex, 9)), ("file", fixture_mesh())];
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (name, msh) in &meshes {
        for kind in [SchemeKind::Hmm, SchemeKind::P1] {
            let gd = scheme(msh.clone(), kind);
            let n = gd.dof_count();
            let k = assemble_diffusion(gd.as_ref(), &Coefficient::identity()).unwrap();
            let mut lifted = vec![0.0; gd.lifted_len()];
            lifted[n..].copy_from_slice(&gd.boundary_values(&affine));
            let rhs: Vec<f64> = k.mul_vec(&lifted)[..n].iter().map(|v| -v).collect();
            let u = Cholesky::new(&k.block(0..n, 0..n)).unwrap().solve(&rhs);
            let err = (0..n).map(|i| (u[i] - affine(gd.dof_points()[i])).abs()).fold(0.0, f64::max);
            worst = worst.max(err);
            parts.push(format!("{name}/{kind} {err:.1e}"));
        }
    }
    Outcome {
        id: 5,
        pass: worst <= AFFINE_TOL,
        detail: format!("affine Laplace solutions at the unknown locations: {} (tol {AFFINE_TOL:e})", parts.join(", ")),
    }
}

// ---------------------------------------------------------------- 6

fn criterion6() -> Outcome {
    let scalar = default_scalar_probes();
    // the constant flux is reproduced to round-off by both schemes, so its
    // ratios carry no information
    let decaying: Vec<_> = ["grad_sin", "a_grad_p", "b_grad_q"].iter().map(|n| flux_probe(n).unwrap()).collect();
    let smooth: Vec<_> = ["const", "grad_sin", "b_grad_q"].iter().map(|n| flux_probe(n).unwrap()).collect();
    let resolutions = [8, 16, 32, 64];
    let mut pass = true;
    let mut parts = Vec::new();
    for family in [MeshFamily::Rect, MeshFamily::Hex] {
        for kind in [SchemeKind::Hmm, SchemeKind::P1] {
            let flux = if kind == SchemeKind::Hmm { &decaying } else { &smooth };
            let study = quality_study(&DomainSpec::unit_square(), &SchemeOptions::new(kind), family, &resolutions, &scalar, flux)
                .unwrap();
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for k in 1..resolutions.len() {
                for (name, r) in study.ratios(k).unwrap() {
                    if kind == SchemeKind::P1 && name.starts_with("w_") {
                        continue;
                    }
                    lo = lo.min(r);
                    hi = hi.max(r);
                }
            }
            let c: Vec<f64> = study.reports.iter().map(|r| r.coercivity).collect();
            let (cmin, cmax) = c.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
            let spread = (cmax - cmin) / cmin;
            let mut ok = in_range(lo, RATIO_RANGE) && in_range(hi, RATIO_RANGE) && spread < COERCIVITY_SPREAD;
            let mut part = format!("{}/{kind}: ratios [{lo:.3}, {hi:.3}], C_D spread {:.1}%", family.name(), 100.0 * spread);
            if kind == SchemeKind::P1 {
                let w = study.reports.iter().flat_map(|r| r.conformity.iter().map(|(_, v)| *v)).fold(0.0, f64::max);
                ok &= w <= P1_CONFORMITY_TOL;
                part.push_str(&format!(", max W_D {w:.1e}"));
            }
            pass &= ok;
            parts.push(part);
        }
    }
    Outcome { id: 6, pass, detail: format!("levels {resolutions:?}: {}", parts.join("; ")) }
}

// ---------------------------------------------------------------- 7

/// Fourth-order central first derivative.
fn d1(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

/// Fourth-order central second derivative.
fn d2(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 16.0 * f(x + h) - 30.0 * f(x) + 16.0 * f(x - h) - f(x - 2.0 * h)) / (12.0 * h * h)
}

fn laplacian(u: impl Fn(f64, f64) -> f64, x: Point, h: f64) -> f64 {
    d2(|s| u(s, x.y), x.x, h) + d2(|s| u(x.x, s), x.y, h)
}

/// The manufactured fields rebuilt from their definition, independent of
/// the library's closed forms.
fn p_bar(x: f64, y: f64, t: f64) -> f64 {
    let (g, z) = ((4.0 * PI * t).cos() / 3.0, (4.0 * PI * t).sin() / 3.0);
    let b = 1.0 / 3.0 + 0.3 * (16.0 * PI * t).sin();
    let u = (x - g).powi(2) + (y - z).powi(2) - b * b;
    if u > 0.0 {
        0.5 * u * u
    } else {
        0.0
    }
}

fn q_bar(x: f64, y: f64, t: f64) -> f64 {
    (x + y + 0.5 * t).exp()
}

fn criterion7() -> Outcome {
    let (hx, ht) = (2e-3, 1e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut free, mut contact) = (0, 0);
    let (mut worst_p, mut worst_q, mut worst_id, mut min_mult) = (0.0f64, 0.0f64, 0.0f64, f64::INFINITY);
    let mut printed_gap = 0.0f64;
    while free + contact < SOURCE_POINTS {
        let x = Point::new(rng.random_range(-0.95..0.95), rng.random_range(-0.95..0.95));
        let t = rng.random_range(0.01..0.24);
        let level = m::level(x, t);
        // keep the stencils on one side of the free boundary
        if level.abs() < 0.05 {
            continue;
        }
        let (p, q) = (p_bar(x.x, x.y, t), q_bar(x.x, x.y, t));
        let dtp = d1(|s| p_bar(x.x, x.y, s), t, ht);
        let lap_p = laplacian(|a, b| p_bar(a, b, t), x, hx);
        // the constrained equation holds with equality off the contact set
        // and leaves a nonnegative multiplier on it
        let residual = dtp - lap_p - m::f(p, q) - m::source_p(x, t);
        if level > 0.0 {
            worst_p = worst_p.max(residual.abs());
            free += 1;
        } else {
            min_mult = min_mult.min(residual);
            worst_p = worst_p.max((residual - m::contact_multiplier(x, t)).abs());
            contact += 1;
        }
        let dtq = d1(|s| q_bar(x.x, x.y, s), t, ht);
        let lap_q = laplacian(|a, b| q_bar(a, b, t), x, 1e-2);
        worst_q = worst_q.max((dtq - m::DIFFUSION_Q * lap_q - m::g(p, q) - m::source_q(x, t)).abs());
        worst_id = worst_id.max((dtq - m::DIFFUSION_Q * lap_q).abs());
        printed_gap = printed_gap.max((m::printed_source(x, t) - m::source_p(x, t)).abs());
    }
    let pass = free > 0
        && contact > 0
        && worst_p <= SOURCE_FD_TOL
        && worst_q <= SOURCE_FD_TOL
        && min_mult >= 0.0
        && worst_id <= Q_IDENTITY_TOL;
    Outcome {
        id: 7,
        pass,
        detail: format!(
            "{SOURCE_POINTS} points ({free} off contact, {contact} on): residual p {worst_p:.1e}, q {worst_q:.1e} (tol {SOURCE_FD_TOL:e}), \
             min contact multiplier {min_mult:.2}, q identity {worst_id:.1e} (tol {Q_IDENTITY_TOL:e}); printed source differs by up to {printed_gap:.2}"
        ),
    }
}
