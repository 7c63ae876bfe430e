use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use crate::gdm::{
    consistency_defect_at, limit_conformity_defect_with, GradientDiscretisation, GramOperators, QualityReport, SchemeKind,
};
use crate::mesh::{DomainSpec, MeshFamily, Point, Vector};
use crate::model::manufactured as m;
use crate::quadrature::TriangleRule;
use crate::scheme::{build_scheme, SchemeOptions};

use super::{observed_order, StudyError, ERROR_REFINE};

/// Polynomial degree of the rule for the conformity loads.
pub const CONFORMITY_DEGREE: usize = 14;

/// Time at which the manufactured fields are frozen for probing.
pub const PROBE_TIME: f64 = 0.1;

pub type VectorField = Arc<dyn Fn(Point) -> Vector + Send + Sync>;
pub type ScalarProbeFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;

/// A function and its gradient, probing the consistency defect.
#[derive(Clone)]
pub struct ScalarProbe {
    pub name: String,
    pub phi: ScalarProbeFn,
    pub grad: VectorField,
}

/// A vector field and its divergence, probing the conformity defect.
#[derive(Clone)]
pub struct FluxProbe {
    pub name: String,
    pub psi: VectorField,
    pub div: ScalarProbeFn,
}

impl std::fmt::Debug for ScalarProbe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ScalarProbe({})", self.name)
    }
}

impl std::fmt::Debug for FluxProbe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FluxProbe({})", self.name)
    }
}

fn sin_sin(x: Point) -> f64 {
    (PI * x.x).sin() * (PI * x.y).sin()
}

fn grad_sin_sin(x: Point) -> Vector {
    Vector::new(PI * (PI * x.x).cos() * (PI * x.y).sin(), PI * (PI * x.x).sin() * (PI * x.y).cos())
}

pub const SCALAR_PROBES: [&str; 3] = ["sin", "test2_p", "test2_q"];
pub const FLUX_PROBES: [&str; 4] = ["const", "grad_sin", "a_grad_p", "b_grad_q"];

pub fn scalar_probe(name: &str) -> Option<ScalarProbe> {
    let t = PROBE_TIME;
    let (phi, grad): (ScalarProbeFn, VectorField) = match name {
        "sin" => (Arc::new(sin_sin), Arc::new(grad_sin_sin)),
        "test2_p" => (Arc::new(move |x| m::p(x, t)), Arc::new(move |x| m::grad_p(x, t))),
        "test2_q" => (Arc::new(move |x| m::q(x, t)), Arc::new(move |x| m::grad_q(x, t))),
        _ => return None,
    };
    Some(ScalarProbe { name: name.into(), phi, grad })
}

pub fn flux_probe(name: &str) -> Option<FluxProbe> {
    let t = PROBE_TIME;
    let (psi, div): (VectorField, ScalarProbeFn) = match name {
        "const" => (Arc::new(|_| Vector::new(1.0, -0.5)), Arc::new(|_| 0.0)),
        "grad_sin" => (Arc::new(grad_sin_sin), Arc::new(|x| -2.0 * PI * PI * sin_sin(x))),
        "a_grad_p" => (Arc::new(move |x| m::grad_p(x, t)), Arc::new(move |x| m::lap_p(x, t))),
        "b_grad_q" => (Arc::new(move |x| m::grad_q(x, t) * m::DIFFUSION_Q), Arc::new(move |x| m::DIFFUSION_Q * m::lap_q(x, t))),
        _ => return None,
    };
    Some(FluxProbe { name: name.into(), psi, div })
}

pub fn default_scalar_probes() -> Vec<ScalarProbe> {
    SCALAR_PROBES.iter().filter_map(|n| scalar_probe(n)).collect()
}

pub fn default_flux_probes() -> Vec<FluxProbe> {
    FLUX_PROBES.iter().filter_map(|n| flux_probe(n)).collect()
}

/// Quality numbers of one discretisation.
pub fn quality_report(
    gd: &dyn GradientDiscretisation,
    scalar: &[ScalarProbe],
    flux: &[FluxProbe],
) -> Result<QualityReport, StudyError> {
    let ops = GramOperators::new(gd).map_err(|e| StudyError::Quality(e.to_string()))?;
    let coercivity = ops.coercivity_constant().map_err(|e| StudyError::Quality(e.to_string()))?;
    let consistency = scalar
        .iter()
        .map(|p| {
            let v = gd.interpolate(&*p.phi);
            (p.name.clone(), consistency_defect_at(gd, &v, &*p.phi, &*p.grad, ERROR_REFINE))
        })
        .collect();
    let rule = TriangleRule::of_degree(CONFORMITY_DEGREE);
    let conformity =
        flux.iter().map(|p| (p.name.clone(), limit_conformity_defect_with(gd, &ops, &*p.psi, &*p.div, &rule))).collect();
    Ok(QualityReport { scheme: gd.kind(), h: gd.mesh().mesh_size(), dofs: gd.dof_count(), coercivity, consistency, conformity })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityStudy {
    pub scheme: SchemeKind,
    pub family: MeshFamily,
    pub reports: Vec<QualityReport>,
}

impl QualityStudy {
    /// Ratios `value_{k-1} / value_k` of every probe column.
    pub fn ratios(&self, k: usize) -> Option<Vec<(String, f64)>> {
        if k == 0 || k >= self.reports.len() {
            return None;
        }
        let (a, b) = (&self.reports[k - 1], &self.reports[k]);
        let s = a.consistency.iter().zip(&b.consistency).map(|((n, x), (_, y))| (format!("s_{n}"), x / y));
        let w = a.conformity.iter().zip(&b.conformity).map(|((n, x), (_, y))| (format!("w_{n}"), x / y));
        Some(s.chain(w).collect())
    }

    pub fn orders(&self, k: usize) -> Option<Vec<(String, f64)>> {
        let (a, b) = (self.reports.get(k.wrapping_sub(1))?, self.reports.get(k)?);
        Some(self.ratios(k)?.into_iter().map(|(n, r)| (n, observed_order(r, 1.0, a.h, b.h))).collect())
    }

    pub fn write_csv(&self, out: &mut dyn Write) -> std::io::Result<()> {
        let Some(first) = self.reports.first() else {
            return Ok(());
        };
        let mut header = vec!["level".to_string(), "h".into(), "dofs".into(), "coercivity".into()];
        header.extend(first.consistency.iter().map(|(n, _)| format!("s_{n}")));
        header.extend(first.conformity.iter().map(|(n, _)| format!("w_{n}")));
        let probes = header.len() - 4;
        header.extend(header[4..].iter().map(|n| format!("order_{n}")).collect::<Vec<_>>());
        writeln!(out, "{}", header.join(","))?;
        for (k, r) in self.reports.iter().enumerate() {
            write!(out, "{k},{:.12e},{},{:.12e}", r.h, r.dofs, r.coercivity)?;
            for (_, v) in r.consistency.iter().chain(&r.conformity) {
                write!(out, ",{v:.12e}")?;
            }
            match self.orders(k) {
                Some(o) => {
                    for (_, v) in o {
                        write!(out, ",{v:.12e}")?;
                    }
                }
                None => write!(out, "{}", ",".repeat(probes))?,
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

pub fn quality_study(
    domain: &DomainSpec,
    scheme: &SchemeOptions,
    family: MeshFamily,
    resolutions: &[usize],
    scalar: &[ScalarProbe],
    flux: &[FluxProbe],
) -> Result<QualityStudy, StudyError> {
    let mut reports = Vec::with_capacity(resolutions.len());
    for (k, &n) in resolutions.iter().enumerate() {
        let mesh = Arc::new(family.generate(domain, n).map_err(|source| StudyError::Mesh { level: k, source })?);
        let gd = build_scheme(mesh, scheme).map_err(|source| StudyError::Scheme { level: k, source })?;
        reports.push(quality_report(gd.as_ref(), scalar, flux)?);
    }
    Ok(QualityStudy { scheme: scheme.kind, family, reports })
}
