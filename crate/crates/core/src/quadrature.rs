//! Triangle and segment quadrature.

use crate::mesh::Point;

/// A rule on the reference triangle `(0,0), (1,0), (0,1)`, stored as
/// barycentric-free coordinates `(xi, eta)` with weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleRule {
    points: Vec<(f64, f64)>,
    weights: Vec<f64>,
    degree: usize,
}

impl TriangleRule {
    /// Seven-point rule, exact for polynomials of degree 5.
    pub fn degree5() -> Self {
        let s = 15f64.sqrt();
        let (a, b) = ((6.0 - s) / 21.0, (9.0 + 2.0 * s) / 21.0);
        let (c, d) = ((6.0 + s) / 21.0, (9.0 - 2.0 * s) / 21.0);
        let (wa, wc) = ((155.0 - s) / 1200.0, (155.0 + s) / 1200.0);
        Self {
            points: vec![(1.0 / 3.0, 1.0 / 3.0), (a, a), (b, a), (a, b), (c, c), (d, c), (c, d)],
            weights: vec![9.0 / 40.0, wa, wa, wa, wc, wc, wc],
            degree: 5,
        }
    }

    /// Collapsed (Duffy) Gauss-Legendre product rule with `n x n` points,
    /// exact for polynomials of degree `2n - 2`.
    pub fn collapsed(n: usize) -> Self {
        let (x, w) = gauss_legendre_unit(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let (u, v) = (x[i], x[j]);
                points.push((u, v * (1.0 - u)));
                // reference area 1/2 normalised away
                weights.push(2.0 * w[i] * w[j] * (1.0 - u));
            }
        }
        Self { points, weights, degree: 2 * n - 2 }
    }

    /// The rule of at least the requested polynomial degree: the seven-point
    /// rule up to degree 5, collapsed Gauss beyond.
    pub fn of_degree(degree: usize) -> Self {
        if degree <= 5 {
            Self::degree5()
        } else {
            Self::collapsed(degree.div_ceil(2) + 1)
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Physical points and weights on the triangle `tri`.
    pub fn on(&self, tri: &[Point; 3]) -> impl Iterator<Item = (Point, f64)> + '_ {
        let [p0, p1, p2] = *tri;
        let (e1, e2) = (p1 - p0, p2 - p0);
        let area = 0.5 * (e1.x * e2.y - e1.y * e2.x).abs();
        self.points.iter().zip(&self.weights).map(move |(&(xi, eta), &w)| (p0 + e1 * xi + e2 * eta, w * area))
    }

    /// Integral of `f` over `tri`.
    pub fn integrate(&self, tri: &[Point; 3], mut f: impl FnMut(Point) -> f64) -> f64 {
        self.on(tri).map(|(x, w)| w * f(x)).sum()
    }

    /// Integral over `tri` split uniformly into `k^2` congruent sub-triangles.
    pub fn integrate_refined(&self, tri: &[Point; 3], k: usize, mut f: impl FnMut(Point) -> f64) -> f64 {
        if k <= 1 {
            return self.integrate(tri, f);
        }
        sub_triangles(tri, k).map(|t| self.integrate(&t, &mut f)).sum()
    }
}

impl Default for TriangleRule {
    fn default() -> Self {
        Self::degree5()
    }
}

/// Uniform split of a triangle into `k^2` sub-triangles.
pub fn sub_triangles(tri: &[Point; 3], k: usize) -> impl Iterator<Item = [Point; 3]> {
    let [p0, p1, p2] = *tri;
    let kf = k as f64;
    let at = move |i: usize, j: usize| p0 + (p1 - p0) * (i as f64 / kf) + (p2 - p0) * (j as f64 / kf);
    (0..k).flat_map(move |j| {
        (0..k - j).flat_map(move |i| {
            let up = [at(i, j), at(i + 1, j), at(i, j + 1)];
            let down = (i + j + 1 < k).then(|| [at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)]);
            std::iter::once(up).chain(down)
        })
    })
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        // Newton on P_n from the Chebyshev-like initial guess
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pn1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = 0.5 * (1.0 - z);
        w[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Integral of `f` along the segment `[a, b]` with `n` Gauss points.
pub fn integrate_segment(a: &Point, b: &Point, n: usize, mut f: impl FnMut(Point) -> f64) -> f64 {
    let (x, w) = gauss_legendre_unit(n);
    let len = (b - a).norm();
    x.iter().zip(&w).map(|(&s, &wi)| wi * len * f(a + (b - a) * s)).sum()
}
