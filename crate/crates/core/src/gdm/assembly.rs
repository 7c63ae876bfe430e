use std::sync::Arc;

use nalgebra::Matrix2;
use rayon::prelude::*;
use thiserror::Error;

use super::{GradientDiscretisation, Piece};
use crate::mesh::{Point, Vector};
use crate::quadrature::{sub_triangles, TriangleRule};
use crate::sparse::CsrMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoefficientError {
    #[error("diffusion tensor is not symmetric at ({x}, {y})")]
    NotSymmetric { x: f64, y: f64 },
    #[error("diffusion tensor is not positive definite at ({x}, {y}) (smallest eigenvalue {eigenvalue:e})")]
    NotPositive { x: f64, y: f64, eigenvalue: f64 },
}

/// A 2x2 diffusion tensor field.
#[derive(Clone)]
pub enum Coefficient {
    Constant(Matrix2<f64>),
    Field(Arc<dyn Fn(Point) -> Matrix2<f64> + Send + Sync>),
}

impl std::fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coefficient::Constant(m) => f.debug_tuple("Constant").field(m).finish(),
            Coefficient::Field(_) => f.write_str("Field(..)"),
        }
    }
}

impl Coefficient {
    pub fn isotropic(k: f64) -> Self {
        Coefficient::Constant(Matrix2::identity() * k)
    }

    pub fn identity() -> Self {
        Self::isotropic(1.0)
    }

    pub fn at(&self, x: &Point) -> Matrix2<f64> {
        match self {
            Coefficient::Constant(m) => *m,
            Coefficient::Field(f) => f(*x),
        }
    }

    /// Symmetry and positivity at one point.
    pub fn check_at(&self, x: &Point) -> Result<(), CoefficientError> {
        let m = self.at(x);
        let scale = m.abs().max().max(f64::MIN_POSITIVE);
        if (m[(0, 1)] - m[(1, 0)]).abs() > 1e-12 * scale {
            return Err(CoefficientError::NotSymmetric { x: x.x, y: x.y });
        }
        let (a, b, d) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
        let lmin = 0.5 * (a + d) - (0.25 * (a - d) * (a - d) + b * b).sqrt();
        if !(lmin > 0.0) {
            return Err(CoefficientError::NotPositive { x: x.x, y: x.y, eigenvalue: lmin });
        }
        Ok(())
    }
}

type Triplets = Vec<(usize, usize, f64)>;

const CHUNK: usize = 256;

fn collect_triplets(gd: &dyn GradientDiscretisation, local: impl Fn(usize, &Piece, &mut Triplets) + Sync) -> CsrMatrix {
    let n = gd.lifted_len();
    let chunks: Vec<Triplets> = gd
        .pieces()
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut t = Vec::new();
            for (k, p) in chunk.iter().enumerate() {
                local(c * CHUNK + k, p, &mut t);
            }
            t
        })
        .collect();
    CsrMatrix::from_triplets(n, n, chunks.concat())
}

fn sum_loads(gd: &dyn GradientDiscretisation, local: impl Fn(&Piece, &mut Vec<(usize, f64)>) + Sync) -> Vec<f64> {
    let chunks: Vec<Vec<(usize, f64)>> = gd
        .pieces()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut t = Vec::new();
            for p in chunk {
                local(p, &mut t);
            }
            t
        })
        .collect();
    let mut out = vec![0.0; gd.lifted_len()];
    for (i, v) in chunks.into_iter().flatten() {
        out[i] += v;
    }
    out
}

/// `K_ij = sum_T |T| G_i^T A_T G_j` with `A_T` the mean of the tensor on the
/// piece, over the lifted unknowns.
pub fn assemble_diffusion(gd: &dyn GradientDiscretisation, coeff: &Coefficient) -> Result<CsrMatrix, CoefficientError> {
    let rule = TriangleRule::degree5();
    if let (Coefficient::Constant(_), Some(p)) = (coeff, gd.pieces().first()) {
        coeff.check_at(&p.centroid())?;
    }
    let tensors: Vec<Matrix2<f64>> = gd
        .pieces()
        .par_iter()
        .map(|p| match coeff {
            Coefficient::Constant(m) => Ok(*m),
            Coefficient::Field(_) => {
                coeff.check_at(&p.centroid())?;
                let mut acc = Matrix2::zeros();
                for (x, w) in rule.on(&p.triangle) {
                    acc += coeff.at(&x) * w;
                }
                Ok(acc / p.area())
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(collect_triplets(gd, |idx, p, t| {
        let a = tensors[idx];
        let area = p.area();
        for (i, (&di, gi)) in p.dofs.iter().zip(&p.gradient).enumerate() {
            let agi = a * gi;
            for (&dj, gj) in p.dofs.iter().zip(&p.gradient).skip(i) {
                let v = area * agi.dot(gj);
                t.push((di, dj, v));
                if dj != di {
                    t.push((dj, di, v));
                }
            }
        }
    }))
}

/// Consistent mass matrix `M_ij = int Pi e_i Pi e_j` over the lifted unknowns.
pub fn assemble_mass(gd: &(impl GradientDiscretisation + ?Sized)) -> CsrMatrix {
    let rule = TriangleRule::degree5();
    let n = gd.lifted_len();
    let chunks: Vec<Triplets> = gd
        .pieces()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut t = Vec::new();
            for p in chunk {
                let active: Vec<usize> = (0..p.dofs.len()).filter(|&k| p.value[k] != super::Affine::ZERO).collect();
                let pts: Vec<(Point, f64)> = rule.on(&p.triangle).collect();
                for (a, &i) in active.iter().enumerate() {
                    for &j in &active[a..] {
                        let v: f64 = pts.iter().map(|(x, w)| w * p.value[i].eval(x) * p.value[j].eval(x)).sum();
                        t.push((p.dofs[i], p.dofs[j], v));
                        if p.dofs[i] != p.dofs[j] {
                            t.push((p.dofs[j], p.dofs[i], v));
                        }
                    }
                }
            }
            t
        })
        .collect();
    CsrMatrix::from_triplets(n, n, chunks.concat())
}

/// Row-sum lumped mass.
pub fn assemble_mass_lumped(gd: &(impl GradientDiscretisation + ?Sized)) -> CsrMatrix {
    CsrMatrix::from_diagonal(&assemble_mass(gd).row_sums())
}

/// `int f Pi e_i` for every lifted unknown, each piece split `refine^2` times.
pub fn assemble_load(gd: &dyn GradientDiscretisation, f: &(dyn Fn(Point) -> f64 + Sync), refine: usize) -> Vec<f64> {
    assemble_load_with(gd, f, &TriangleRule::degree5(), refine)
}

pub fn assemble_load_with(
    gd: &dyn GradientDiscretisation,
    f: &(dyn Fn(Point) -> f64 + Sync),
    rule: &TriangleRule,
    refine: usize,
) -> Vec<f64> {
    sum_loads(gd, |p, out| {
        let pts: Vec<(Point, f64)> = sub_triangles(&p.triangle, refine.max(1))
            .flat_map(|t| rule.on(&t).collect::<Vec<_>>())
            .map(|(x, w)| (x, w * f(x)))
            .collect();
        for (k, &d) in p.dofs.iter().enumerate() {
            if p.value[k] == super::Affine::ZERO {
                continue;
            }
            out.push((d, pts.iter().map(|(x, wf)| wf * p.value[k].eval(x)).sum()));
        }
    })
}

/// `int G . grad_D e_i` for every lifted unknown.
pub fn assemble_gradient_load(gd: &dyn GradientDiscretisation, g: &(dyn Fn(Point) -> Vector + Sync)) -> Vec<f64> {
    assemble_gradient_load_with(gd, g, &TriangleRule::degree5())
}

pub fn assemble_gradient_load_with(
    gd: &dyn GradientDiscretisation,
    g: &(dyn Fn(Point) -> Vector + Sync),
    rule: &TriangleRule,
) -> Vec<f64> {
    sum_loads(gd, |p, out| {
        let mut mean = Vector::zeros();
        for (x, w) in rule.on(&p.triangle) {
            mean += g(x) * w;
        }
        for (&d, gi) in p.dofs.iter().zip(&p.gradient) {
            out.push((d, mean.dot(gi)));
        }
    })
}

fn sum_pieces(gd: &dyn GradientDiscretisation, f: impl Fn(&Piece) -> f64 + Sync) -> f64 {
    let parts: Vec<f64> = gd.pieces().par_iter().map(&f).collect();
    parts.iter().sum()
}

/// `|| Pi u - phi ||_{L^2}` for a lifted vector `u`.
pub fn l2_error(gd: &dyn GradientDiscretisation, u: &[f64], phi: &(dyn Fn(Point) -> f64 + Sync), refine: usize) -> f64 {
    l2_error_with(gd, u, phi, &TriangleRule::degree5(), refine)
}

/// [`l2_error`] with an explicit quadrature rule.
pub fn l2_error_with(
    gd: &dyn GradientDiscretisation,
    u: &[f64],
    phi: &(dyn Fn(Point) -> f64 + Sync),
    rule: &TriangleRule,
    refine: usize,
) -> f64 {
    sum_pieces(gd, |p| {
        rule.integrate_refined(&p.triangle, refine, |x| {
            let e = p.value_at(u, &x) - phi(x);
            e * e
        })
    })
    .sqrt()
}

/// `|| grad_D u - grad phi ||_{L^2}` for a lifted vector `u`.
pub fn l2_gradient_error(
    gd: &dyn GradientDiscretisation,
    u: &[f64],
    grad: &(dyn Fn(Point) -> Vector + Sync),
    refine: usize,
) -> f64 {
    let rule = TriangleRule::degree5();
    sum_pieces(gd, |p| {
        let gu = p.gradient_of(u);
        rule.integrate_refined(&p.triangle, refine, |x| (gu - grad(x)).norm_squared())
    })
    .sqrt()
}

/// `|| Pi u ||_{L^2}`.
pub fn l2_norm_of(gd: &dyn GradientDiscretisation, u: &[f64]) -> f64 {
    l2_error(gd, u, &|_| 0.0, 1)
}

/// `int r(Pi w1, Pi w2) Pi e_i` for every lifted unknown.
pub fn assemble_reaction_load(
    gd: &dyn GradientDiscretisation,
    r: &(dyn Fn(f64, f64) -> f64 + Sync),
    w1: &[f64],
    w2: &[f64],
) -> Vec<f64> {
    let rule = TriangleRule::degree5();
    sum_loads(gd, |p, out| {
        let pts: Vec<(Point, f64, f64)> =
            rule.on(&p.triangle).map(|(x, w)| (x, w, r(p.value_at(w1, &x), p.value_at(w2, &x)))).collect();
        for (k, &d) in p.dofs.iter().enumerate() {
            if p.value[k] == super::Affine::ZERO {
                continue;
            }
            out.push((d, pts.iter().map(|(x, w, rv)| w * rv * p.value[k].eval(x)).sum()));
        }
    })
}

/// Both reaction loads of the coupled system in one pass.
pub fn assemble_reaction_loads(
    gd: &dyn GradientDiscretisation,
    f: &(dyn Fn(f64, f64) -> f64 + Sync),
    g: &(dyn Fn(f64, f64) -> f64 + Sync),
    w1: &[f64],
    w2: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let rule = TriangleRule::degree5();
    let chunks: Vec<Vec<(usize, f64, f64)>> = gd
        .pieces()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut t = Vec::new();
            let mut pts = Vec::new();
            for p in chunk {
                pts.clear();
                pts.extend(rule.on(&p.triangle).map(|(x, w)| {
                    let (a, b) = (p.value_at(w1, &x), p.value_at(w2, &x));
                    (x, w * f(a, b), w * g(a, b))
                }));
                for (k, &d) in p.dofs.iter().enumerate() {
                    if p.value[k] == super::Affine::ZERO {
                        continue;
                    }
                    let (mut sf, mut sg) = (0.0, 0.0);
                    for (x, wf, wg) in &pts {
                        let e = p.value[k].eval(x);
                        sf += wf * e;
                        sg += wg * e;
                    }
                    t.push((d, sf, sg));
                }
            }
            t
        })
        .collect();
    let mut out = (vec![0.0; gd.lifted_len()], vec![0.0; gd.lifted_len()]);
    for (i, a, b) in chunks.into_iter().flatten() {
        out.0[i] += a;
        out.1[i] += b;
    }
    out
}
