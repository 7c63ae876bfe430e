//! Run configuration: a TOML file with the sections `problem`, `mesh`,
//! `scheme`, `time`, `solver`, `output`, `convergence` and `quality`.
//!
//! Relative paths inside the file are resolved against the file's directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use biofilm_gds_core::gdm::{Coefficient, SchemeKind};
use biofilm_gds_core::hmm::{FaceValue, HmmOptions};
use biofilm_gds_core::mesh::{load_mesh, DomainSpec, Mesh, MeshFamily, Point};
use biofilm_gds_core::model::{builtin_problem, manufactured, spreading, ModelProblem, Obstacle, RunOptions};
use biofilm_gds_core::p1::P1Options;
use biofilm_gds_core::scheme::SchemeOptions;
use biofilm_gds_core::solver::{ObstacleOptions, PicardOptions, Reactions};
use biofilm_gds_core::verify::{flux_probe, scalar_probe, FLUX_PROBES, SCALAR_PROBES};
use serde::Deserialize;

/// A validation failure, named by the dotted path of the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub mesh: Option<MeshConfig>,
    #[serde(default)]
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub time: Option<TimeConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub convergence: Option<ConvergenceConfig>,
    #[serde(default)]
    pub quality: Option<QualityConfig>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub builtin: Option<String>,
    pub inline: Option<InlineProblem>,
    pub final_time: Option<f64>,
}

/// Field data built from a few parametric forms.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineProblem {
    #[serde(default = "default_domain")]
    pub domain: [f64; 2],
    pub final_time: f64,
    pub diffusion_p: f64,
    pub diffusion_q: f64,
    #[serde(default)]
    pub barrier: f64,
    pub p0: InitialField,
    pub q0: InitialField,
    /// `none`, `spreading` or `manufactured`.
    #[serde(default = "default_reactions")]
    pub reactions: String,
    #[serde(default)]
    pub dirichlet_p: f64,
    #[serde(default)]
    pub dirichlet_q: f64,
    #[serde(default)]
    pub project_initial: bool,
}

fn default_domain() -> [f64; 2] {
    [-1.0, 1.0]
}

fn default_reactions() -> String {
    "none".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum InitialField {
    Constant(f64),
    Disk { centre: [f64; 2], radius: f64, inside: f64, outside: f64 },
}

impl InitialField {
    fn field(&self) -> Arc<dyn Fn(Point) -> f64 + Send + Sync> {
        match *self {
            InitialField::Constant(c) => Arc::new(move |_| c),
            InitialField::Disk { centre, radius, inside, outside } => Arc::new(move |x: Point| {
                let r = ((x.x - centre[0]).powi(2) + (x.y - centre[1]).powi(2)).sqrt();
                if r < radius {
                    inside
                } else {
                    outside
                }
            }),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    /// `rect`, `hex` or `file`.
    pub kind: String,
    pub resolution: Option<usize>,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    #[serde(default = "default_kinds")]
    pub kinds: Vec<String>,
    pub stabilisation: Option<f64>,
    /// `midpoint` or `mean`.
    pub face_value: Option<String>,
    pub lumped_mass: Option<bool>,
}

fn default_kinds() -> Vec<String> {
    vec!["hmm".into()]
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self { kinds: default_kinds(), stabilisation: None, face_value: None, lumped_mass: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub final_time: Option<f64>,
    pub steps: usize,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub picard_tol: Option<f64>,
    pub picard_max_iter: Option<usize>,
    pub adaptive_relaxation: Option<bool>,
    pub obstacle_tol: Option<f64>,
    pub obstacle_max_iter: Option<usize>,
    pub source_refine: Option<usize>,
    /// Lipschitz bound of the reactions, estimated per step when absent.
    pub m_lip: Option<f64>,
    /// `lower` (p >= chi) or `upper` (p <= chi).
    pub obstacle: Option<String>,
    /// Random feasible test vectors per step for the a posteriori check
    /// (0 disables it).
    pub check_samples: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
    #[serde(default)]
    pub snapshots: Vec<f64>,
    /// `vtk` and/or `csv` (raw unknowns).
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<String> {
    vec!["vtk".into()]
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_out(), snapshots: Vec::new(), formats: default_formats() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub family: String,
    pub resolutions: Vec<usize>,
    pub steps: Vec<usize>,
    #[serde(default = "yes")]
    pub diagnostics: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityConfig {
    pub family: String,
    pub resolutions: Vec<usize>,
    #[serde(default)]
    pub scalar_probes: Vec<String>,
    #[serde(default)]
    pub flux_probes: Vec<String>,
}

/// A config that failed to parse is a config error too; the TOML message
/// carries the line and the key.
pub fn load(path: &Path) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid("<file>", format!("cannot read `{}`: {e}", path.display())))?;
    let mut cfg: Config = toml::from_str(&text).map_err(|e| invalid("<toml>", e.to_string()))?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(cfg)
}

fn positive(field: &str, v: Option<f64>) -> Result<(), ConfigError> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(invalid(field, format!("must be a positive number, got {x}"))),
        _ => Ok(()),
    }
}

impl Config {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn model(&self) -> Result<ModelProblem, ConfigError> {
        let p = &self.problem;
        let mut model = match (&p.builtin, &p.inline) {
            (Some(name), None) => builtin_problem(name).map_err(|e| invalid("problem.builtin", e.to_string()))?,
            (None, Some(inline)) => inline_model(inline)?,
            (Some(_), Some(_)) => return Err(invalid("problem", "give either `builtin` or `inline`, not both")),
            (None, None) => return Err(invalid("problem", "one of `builtin` or `inline` is required")),
        };
        positive("problem.final_time", p.final_time)?;
        positive("solver.m_lip", self.solver.m_lip)?;
        if let Some(t) = p.final_time {
            model.final_time = t;
        }
        if let Some(m) = self.solver.m_lip {
            model.m_lip = Some(m);
        }
        if let Some(o) = &self.solver.obstacle {
            model.obstacle = match o.as_str() {
                "lower" => Obstacle::Lower,
                "upper" => Obstacle::Upper,
                other => return Err(invalid("solver.obstacle", format!("expected `lower` or `upper`, got `{other}`"))),
            };
        }
        Ok(model)
    }

    pub fn final_time(&self, model: &ModelProblem) -> Result<f64, ConfigError> {
        let t = self.time.as_ref().and_then(|t| t.final_time).unwrap_or(model.final_time);
        positive("time.final_time", Some(t))?;
        Ok(t)
    }

    pub fn steps(&self) -> Result<usize, ConfigError> {
        let t = self.time.as_ref().ok_or_else(|| invalid("time", "section required"))?;
        if t.steps == 0 {
            return Err(invalid("time.steps", "must be at least 1"));
        }
        Ok(t.steps)
    }

    pub fn mesh(&self, domain: &DomainSpec) -> Result<Mesh, ConfigError> {
        let m = self.mesh.as_ref().ok_or_else(|| invalid("mesh", "section required"))?;
        if m.kind == "file" {
            let path = m.path.as_ref().ok_or_else(|| invalid("mesh.path", "required for `kind = \"file\"`"))?;
            let full = self.resolve(path);
            if !full.is_file() {
                return Err(invalid("mesh.path", format!("file `{}` does not exist", full.display())));
            }
            let mesh = load_mesh(&full).map_err(|e| invalid("mesh.path", format!("`{}`: {e}", full.display())))?;
            mesh.check_covers(domain).map_err(|e| invalid("mesh.path", format!("`{}`: {e}", full.display())))?;
            return Ok(mesh);
        }
        let family = family("mesh.kind", &m.kind)?;
        let n = m.resolution.ok_or_else(|| invalid("mesh.resolution", "required for generated meshes"))?;
        family.generate(domain, n).map_err(|e| invalid("mesh.resolution", e.to_string()))
    }

    pub fn schemes(&self) -> Result<Vec<SchemeOptions>, ConfigError> {
        let s = &self.scheme;
        if s.kinds.is_empty() {
            return Err(invalid("scheme.kinds", "at least one scheme is required"));
        }
        let mut out: Vec<SchemeOptions> = Vec::new();
        for (i, k) in s.kinds.iter().enumerate() {
            let kind: SchemeKind = k.parse().map_err(|e: String| invalid(&format!("scheme.kinds[{i}]"), e))?;
            if out.iter().any(|o| o.kind == kind) {
                return Err(invalid(&format!("scheme.kinds[{i}]"), format!("`{k}` listed twice")));
            }
            let mut opts = SchemeOptions::new(kind);
            opts.hmm = HmmOptions {
                stab: s.stabilisation.unwrap_or(opts.hmm.stab),
                boundary_value: match s.face_value.as_deref() {
                    None => opts.hmm.boundary_value,
                    Some("midpoint") => FaceValue::Midpoint,
                    Some("mean") => FaceValue::Mean,
                    Some(o) => return Err(invalid("scheme.face_value", format!("expected `midpoint` or `mean`, got `{o}`"))),
                },
            };
            opts.p1 = P1Options { lumped_mass: s.lumped_mass.unwrap_or(opts.p1.lumped_mass) };
            out.push(opts);
        }
        positive("scheme.stabilisation", s.stabilisation)?;
        Ok(out)
    }

    pub fn run_options(&self) -> Result<RunOptions, ConfigError> {
        let s = &self.solver;
        positive("solver.picard_tol", s.picard_tol)?;
        positive("solver.obstacle_tol", s.obstacle_tol)?;
        for (field, v) in [
            ("solver.picard_max_iter", s.picard_max_iter),
            ("solver.obstacle_max_iter", s.obstacle_max_iter),
            ("solver.source_refine", s.source_refine),
        ] {
            if v == Some(0) {
                return Err(invalid(field, "must be at least 1"));
            }
        }
        let d = PicardOptions::default();
        let o = ObstacleOptions::default();
        let mut opts = RunOptions {
            picard: PicardOptions {
                tol: s.picard_tol.unwrap_or(d.tol),
                max_iter: s.picard_max_iter.unwrap_or(d.max_iter),
                adaptive_relaxation: s.adaptive_relaxation.unwrap_or(d.adaptive_relaxation),
                obstacle: ObstacleOptions {
                    tol: s.obstacle_tol.unwrap_or(o.tol),
                    max_iter: s.obstacle_max_iter.unwrap_or(o.max_iter),
                    pgs_max_sweeps: o.pgs_max_sweeps,
                },
            },
            ..RunOptions::default()
        };
        if let Some(r) = s.source_refine {
            opts.source_refine = r;
        }
        Ok(opts)
    }

    pub fn check_samples(&self) -> usize {
        self.solver.check_samples.unwrap_or(5)
    }

    /// Snapshot times, validated against `[0, final_time]`.
    pub fn snapshots(&self, final_time: f64) -> Result<Vec<f64>, ConfigError> {
        for (i, &t) in self.output.snapshots.iter().enumerate() {
            if !(0.0..=final_time * (1.0 + 1e-12)).contains(&t) {
                return Err(invalid(&format!("output.snapshots[{i}]"), format!("{t} is outside [0, {final_time}]")));
            }
        }
        Ok(self.output.snapshots.clone())
    }

    pub fn formats(&self) -> Result<(bool, bool), ConfigError> {
        let mut vtk = false;
        let mut csv = false;
        for (i, f) in self.output.formats.iter().enumerate() {
            match f.as_str() {
                "vtk" => vtk = true,
                "csv" => csv = true,
                o => return Err(invalid(&format!("output.formats[{i}]"), format!("expected `vtk` or `csv`, got `{o}`"))),
            }
        }
        Ok((vtk, csv))
    }

    pub fn convergence(&self) -> Result<(MeshFamily, Vec<(usize, usize)>, bool), ConfigError> {
        let c = self.convergence.as_ref().ok_or_else(|| invalid("convergence", "section required"))?;
        let family = family("convergence.family", &c.family)?;
        if c.resolutions.len() < 2 {
            return Err(invalid(
                "convergence.resolutions",
                format!("at least two levels are required, got {}", c.resolutions.len()),
            ));
        }
        if c.steps.len() != c.resolutions.len() {
            return Err(invalid("convergence.steps", "needs one entry per resolution"));
        }
        if let Some(i) = c.steps.iter().position(|&n| n == 0) {
            return Err(invalid(&format!("convergence.steps[{i}]"), "must be at least 1"));
        }
        Ok((family, c.resolutions.iter().copied().zip(c.steps.iter().copied()).collect(), c.diagnostics))
    }

    /// Family, resolutions, probe names and whether defaults were used.
    pub fn quality(&self) -> Result<QualitySetup, ConfigError> {
        let q = self.quality.as_ref().ok_or_else(|| invalid("quality", "section required"))?;
        let family = family("quality.family", &q.family)?;
        if q.resolutions.is_empty() {
            return Err(invalid("quality.resolutions", "at least one level is required"));
        }
        for (i, n) in q.scalar_probes.iter().enumerate() {
            if scalar_probe(n).is_none() {
                return Err(invalid(
                    &format!("quality.scalar_probes[{i}]"),
                    format!("unknown probe `{n}` (known: {SCALAR_PROBES:?})"),
                ));
            }
        }
        for (i, n) in q.flux_probes.iter().enumerate() {
            if flux_probe(n).is_none() {
                return Err(invalid(
                    &format!("quality.flux_probes[{i}]"),
                    format!("unknown probe `{n}` (known: {FLUX_PROBES:?})"),
                ));
            }
        }
        Ok(QualitySetup {
            family,
            resolutions: q.resolutions.clone(),
            scalar: q.scalar_probes.clone(),
            flux: q.flux_probes.clone(),
        })
    }
}

pub struct QualitySetup {
    pub family: MeshFamily,
    pub resolutions: Vec<usize>,
    /// Empty lists mean the defaults.
    pub scalar: Vec<String>,
    pub flux: Vec<String>,
}

fn family(field: &str, name: &str) -> Result<MeshFamily, ConfigError> {
    name.parse().map_err(|e: String| invalid(field, e))
}

fn inline_model(p: &InlineProblem) -> Result<ModelProblem, ConfigError> {
    let domain = DomainSpec::new(p.domain[0], p.domain[1]).map_err(|e| invalid("problem.inline.domain", e.to_string()))?;
    positive("problem.inline.final_time", Some(p.final_time))?;
    positive("problem.inline.diffusion_p", Some(p.diffusion_p))?;
    positive("problem.inline.diffusion_q", Some(p.diffusion_q))?;
    let reactions = match p.reactions.as_str() {
        "none" => None,
        "spreading" => Some(Reactions { f: Arc::new(spreading::f), g: Arc::new(spreading::g) }),
        "manufactured" => Some(Reactions { f: Arc::new(manufactured::f), g: Arc::new(manufactured::g) }),
        o => {
            return Err(invalid("problem.inline.reactions", format!("expected `none`, `spreading` or `manufactured`, got `{o}`")))
        }
    };
    let (barrier, bp, bq) = (p.barrier, p.dirichlet_p, p.dirichlet_q);
    Ok(ModelProblem {
        name: "inline".into(),
        domain,
        final_time: p.final_time,
        a: Coefficient::isotropic(p.diffusion_p),
        b: Coefficient::isotropic(p.diffusion_q),
        reactions,
        m_lip: None,
        barrier: Arc::new(move |_| barrier),
        p0: p.p0.field(),
        q0: p.q0.field(),
        dirichlet_p: Arc::new(move |_, _| bp),
        dirichlet_q: Arc::new(move |_, _| bq),
        source_p: None,
        source_q: None,
        obstacle: Obstacle::Lower,
        project_initial: p.project_initial,
        exact: None,
    })
}
