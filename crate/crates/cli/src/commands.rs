use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use biofilm_gds_core::gdm::GradientDiscretisation;
use biofilm_gds_core::model::{run_observed, CheckOptions, TimeGrid, Trajectory};
use biofilm_gds_core::scheme::build_scheme;
use biofilm_gds_core::verify::{
    convergence_study, default_flux_probes, default_scalar_probes, error_norms, flux_probe, quality_study, scalar_probe,
    write_diagnostics_csv, ErrorReport, Level, StudyOptions,
};
use biofilm_gds_core::vtk::write_vtk;

use crate::artifacts::{sha256_hex, Artifacts};
use crate::config::{self, Config, ConfigError};

/// A failed command, classified for the exit status.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Solver(anyhow::Error),
    Io(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Solver(_) => 3,
            Failure::Io(_) => 4,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Solver(e) | Failure::Io(e) => e,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.into())
    }
}

fn solver(e: impl std::error::Error + Send + Sync + 'static) -> Failure {
    Failure::Solver(e.into())
}

fn io_at(dir: &Path) -> impl Fn(io::Error) -> Failure + '_ {
    move |e| Failure::Io(anyhow::Error::new(e).context(format!("writing to `{}`", dir.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    Convergence,
    Quality,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::Convergence => "convergence",
            Command::Quality => "quality",
        }
    }
}

/// Loads the configuration, runs the command and writes the manifest.
/// `out` takes precedence over `output.dir`.
pub fn execute(command: Command, config_path: &Path, out: Option<PathBuf>) -> Result<PathBuf, Failure> {
    let bytes = std::fs::read(config_path)
        .map_err(|e| Failure::Config(anyhow::anyhow!("cannot read config `{}`: {e}", config_path.display())))?;
    let cfg = config::load(config_path)?;
    let dir = out.unwrap_or_else(|| cfg.resolve(&cfg.output.dir));
    let mut art = Artifacts::create(&dir).map_err(io_at(&dir))?;
    log::info!("{} with `{}`, output in `{}`", command.name(), config_path.display(), dir.display());
    match command {
        Command::Run => run(&cfg, &mut art)?,
        Command::Convergence => convergence(&cfg, &mut art)?,
        Command::Quality => quality(&cfg, &mut art)?,
    }
    art.finish(command.name(), cfg.seed, config_path, &sha256_hex(&bytes)).map_err(io_at(&dir))?;
    Ok(dir)
}

/// Index of the knot nearest to `t` (the earlier one on ties).
pub fn nearest_knot(knots: &[f64], t: f64) -> usize {
    let mut best = 0;
    for (k, &s) in knots.iter().enumerate() {
        if (s - t).abs() < (knots[best] - t).abs() {
            best = k;
        }
    }
    best
}

fn run(cfg: &Config, art: &mut Artifacts) -> Result<(), Failure> {
    let mut model = cfg.model()?;
    model.final_time = cfg.final_time(&model)?;
    let steps = cfg.steps()?;
    let mesh = Arc::new(cfg.mesh(&model.domain)?);
    let schemes = cfg.schemes()?;
    let mut opts = cfg.run_options()?;
    let samples = cfg.check_samples();
    if samples > 0 {
        opts.check = Some(CheckOptions { seed: cfg.seed, samples });
    }
    let mut times = cfg.snapshots(model.final_time)?;
    if times.is_empty() {
        times.push(model.final_time);
    }
    let (vtk, csv) = cfg.formats()?;
    let grid = TimeGrid::uniform(model.final_time, steps).map_err(|e| Failure::Config(anyhow::anyhow!("time: {e}")))?;
    // snapshot index -> knot; several snapshots may share a knot
    let wanted: Vec<usize> = times.iter().map(|&t| nearest_knot(grid.knots(), t)).collect();
    for (&t, &k) in times.iter().zip(&wanted) {
        let knot = grid.knots()[k];
        if (knot - t).abs() > 1e-12 * model.final_time.max(1.0) {
            art.warn(format!("snapshot t = {t} written at the nearest knot t = {knot}"));
        }
    }
    let dir = art.dir().to_path_buf();

    for scheme in &schemes {
        let name = scheme.kind.name();
        let gd = build_scheme(mesh.clone(), scheme).map_err(solver)?;
        log::info!("{name}: {} cells, {} unknowns, {steps} steps to t = {}", mesh.n_cells(), gd.dof_count(), model.final_time);
        let mut states: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        let traj = run_observed(&model, gd.as_ref(), &grid, &opts, &mut |n, _, p, q| {
            if wanted.contains(&n) {
                states.insert(n, (p.to_vec(), q.to_vec()));
            }
        })
        .map_err(solver)?;
        for w in &traj.warnings {
            art.record(format!("{name}: {w}"));
        }
        if traj.projected_initial > 0 {
            art.record(format!("{name}: initial data projected at {} unknowns", traj.projected_initial));
        }
        if let Some(k) = traj.steps.iter().position(|s| !s.picard.contraction) {
            art.warn(format!("{name}: dt >= 1/(2M) from step {}, Picard contraction not guaranteed", k + 1));
        }
        for (i, &k) in wanted.iter().enumerate() {
            let (p, q) = &states[&k];
            let t = grid.knots()[k];
            if vtk {
                for (field, u) in [("p", p), ("q", q)] {
                    let title = format!("{field} {name} t={t:e}");
                    art.write_with(&format!("{field}_{name}_{i}.vtk"), |out| write_vtk(gd.as_ref(), &title, &[(field, u)], out))
                        .map_err(io_at(&dir))?;
                }
            }
            if csv {
                art.write_with(&format!("state_{name}_{i}.csv"), |out| write_state_csv(gd.as_ref(), t, p, q, out))
                    .map_err(io_at(&dir))?;
            }
        }
        art.write_with(&format!("picard_{name}.csv"), |out| write_picard_csv(&traj, out)).map_err(io_at(&dir))?;
        if let Some(exact) = &model.exact {
            let e = error_norms(gd.as_ref(), &traj, exact);
            log::info!("{name}: errors p_l2 {:.3e} q_l2 {:.3e} p_h1 {:.3e} q_h1 {:.3e}", e.p_l2, e.q_l2, e.p_h1, e.q_h1);
        }
        log::info!(
            "{name}: {} Picard iterations, max barrier violation {:.3e}",
            traj.steps.iter().map(|s| s.picard.iterations).sum::<usize>(),
            traj.max_violation()
        );
    }
    Ok(())
}

fn write_state_csv(gd: &dyn GradientDiscretisation, t: f64, p: &[f64], q: &[f64], out: &mut dyn Write) -> io::Result<()> {
    writeln!(out, "# t={t:.12e}")?;
    writeln!(out, "index,x,y,p,q")?;
    let points = gd.dof_points();
    for (i, (a, b)) in p.iter().zip(q).enumerate() {
        match points.get(i) {
            Some(x) => writeln!(out, "{i},{:.12e},{:.12e},{a:.12e},{b:.12e}", x.x, x.y)?,
            None => writeln!(out, "{i},,,{a:.12e},{b:.12e}")?,
        }
    }
    Ok(())
}

pub const PICARD_HEADER: &str = "step,t,iterations,converged,contraction,monotone,relaxation,m_lip,last_change,kkt,\
                                 min_gap,active,check_inequality,check_equation";

pub fn write_picard_csv(traj: &Trajectory, out: &mut dyn Write) -> io::Result<()> {
    writeln!(out, "{PICARD_HEADER}")?;
    for (n, s) in traj.steps.iter().enumerate() {
        let r = &s.picard;
        write!(
            out,
            "{},{:.12e},{},{},{},{},{:.6e},{:.12e},{:.12e},{:.12e},{:.12e},{}",
            n + 1,
            traj.grid.knots()[n + 1],
            r.iterations,
            r.converged as u8,
            r.contraction as u8,
            r.monotone as u8,
            r.relaxation,
            r.m_lip,
            r.residuals.last().copied().unwrap_or(0.0),
            s.kkt.max(),
            s.min_gap,
            s.active
        )?;
        match s.check {
            Some(c) => writeln!(out, ",{:.12e},{:.12e}", c.inequality, c.equation)?,
            None => writeln!(out, ",,")?,
        }
    }
    Ok(())
}

fn convergence(cfg: &Config, art: &mut Artifacts) -> Result<(), Failure> {
    let mut model = cfg.model()?;
    model.final_time = cfg.final_time(&model)?;
    if model.exact.is_none() {
        return Err(ConfigError { field: "problem".into(), message: format!("`{}` has no exact solution", model.name) }.into());
    }
    let (family, levels, diagnostics) = cfg.convergence()?;
    let levels: Vec<Level> = levels.into_iter().map(|(resolution, steps)| Level { resolution, steps }).collect();
    let opts = StudyOptions { run: cfg.run_options()?, diagnostics };
    let dir = art.dir().to_path_buf();
    for scheme in cfg.schemes()? {
        let name = scheme.kind.name();
        let report = convergence_study(&model, &scheme, family, &levels, &opts).map_err(solver)?;
        art.write(&format!("convergence_{name}.csv"), report.to_csv_string().as_bytes()).map_err(io_at(&dir))?;
        art.write(&format!("convergence_{name}.dat"), gnuplot_data(&report).as_bytes()).map_err(io_at(&dir))?;
        art.write(&format!("convergence_{name}.gp"), gnuplot_script(name).as_bytes()).map_err(io_at(&dir))?;
        for r in &report.records {
            if !r.contraction {
                art.warn(format!("{name} level {}: dt >= 1/(2M) at some step", r.level));
            }
            if let Some(d) = &r.diagnostics {
                art.write_with(&format!("diagnostics_{name}_{}.csv", r.level), |out| write_diagnostics_csv(d, out))
                    .map_err(io_at(&dir))?;
            }
        }
        for k in 1..report.records.len() {
            if let Some(o) = report.orders(k) {
                log::info!("{name} orders {}->{k}: p_l2 {:.2} q_l2 {:.2} p_h1 {:.2} q_h1 {:.2}", k - 1, o[0], o[1], o[2], o[3]);
            }
        }
    }
    Ok(())
}

pub fn gnuplot_data(report: &ErrorReport) -> String {
    let mut s = String::from("# h dt err_p_l2 err_q_l2 err_p_h1 err_q_h1\n");
    for r in &report.records {
        let e = r.errors.as_array();
        s.push_str(&format!("{:.12e} {:.12e} {:.12e} {:.12e} {:.12e} {:.12e}\n", r.h, r.dt, e[0], e[1], e[2], e[3]));
    }
    s
}

pub fn gnuplot_script(scheme: &str) -> String {
    format!(
        "set terminal pngcairo size 800,600\n\
         set output 'convergence_{scheme}.png'\n\
         set logscale xy\n\
         set xlabel 'h'\n\
         set ylabel 'error'\n\
         set key bottom right\n\
         data = 'convergence_{scheme}.dat'\n\
         plot data using 1:3 with linespoints title 'p L2', \\\n\
         \x20    data using 1:4 with linespoints title 'q L2', \\\n\
         \x20    data using 1:5 with linespoints title 'p H1', \\\n\
         \x20    data using 1:6 with linespoints title 'q H1', \\\n\
         \x20    data using 1:($1) with lines dashtype 2 title 'slope 1'\n"
    )
}

fn quality(cfg: &Config, art: &mut Artifacts) -> Result<(), Failure> {
    let model = cfg.model()?;
    let setup = cfg.quality()?;
    let scalar = if setup.scalar.is_empty() {
        art.warn("quality.scalar_probes empty, using the default probes");
        default_scalar_probes()
    } else {
        setup.scalar.iter().filter_map(|n| scalar_probe(n)).collect()
    };
    let flux = if setup.flux.is_empty() {
        art.warn("quality.flux_probes empty, using the default probes");
        default_flux_probes()
    } else {
        setup.flux.iter().filter_map(|n| flux_probe(n)).collect()
    };
    let dir = art.dir().to_path_buf();
    for scheme in cfg.schemes()? {
        let study = quality_study(&model.domain, &scheme, setup.family, &setup.resolutions, &scalar, &flux).map_err(solver)?;
        art.write(&format!("quality_{}.csv", scheme.kind.name()), study.to_csv_string().as_bytes()).map_err(io_at(&dir))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_knot_prefers_earlier_on_ties() {
        let knots = [0.0, 0.25, 0.5, 0.75, 1.0];
        assert_eq!(nearest_knot(&knots, 0.3), 1);
        assert_eq!(nearest_knot(&knots, 0.375), 1);
        assert_eq!(nearest_knot(&knots, 2.0), 4);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(Failure::from(ConfigError { field: "a".into(), message: "b".into() }).exit_code(), 2);
        assert_eq!(solver(io::Error::other("x")).exit_code(), 3);
        assert_eq!(io_at(Path::new("d"))(io::Error::other("x")).exit_code(), 4);
    }
}
