use std::collections::HashMap;

use super::{DomainSpec, Mesh, MeshError, Point};

/// Generated mesh families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MeshFamily {
    Rect,
    Hex,
}

impl MeshFamily {
    pub fn name(&self) -> &'static str {
        match self {
            MeshFamily::Rect => "rect",
            MeshFamily::Hex => "hex",
        }
    }

    pub fn generate(&self, domain: &DomainSpec, resolution: usize) -> Result<Mesh, MeshError> {
        match self {
            MeshFamily::Rect => generate_rect_mesh(domain, resolution),
            MeshFamily::Hex => generate_hex_mesh(domain, resolution),
        }
    }
}

impl std::str::FromStr for MeshFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rect" => Ok(MeshFamily::Rect),
            "hex" => Ok(MeshFamily::Hex),
            other => Err(format!("unknown mesh kind `{other}` (expected rect or hex)")),
        }
    }
}

/// Uniform `n x n` grid of squares.
pub fn generate_rect_mesh(domain: &DomainSpec, n: usize) -> Result<Mesh, MeshError> {
    if n == 0 {
        return Err(MeshError::InvalidResolution);
    }
    let coord = |i: usize| lattice_coord(domain, i, n);
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push(Point::new(coord(i), coord(j)));
        }
    }
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut cells = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            cells.push(vec![id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    let mesh = Mesh::from_polygons(vertices, cells)?;
    mesh.check_covers(domain)?;
    Ok(mesh)
}

/// Hexagonal tiling of the square, clipped at the boundary.
///
/// `resolution` is the number of hexagon columns. Hexagons are pointy-top and
/// stretched vertically so that the horizontal boundaries run through row
/// centres and the vertical boundaries through column vertices; every clipped
/// vertex then lies on a rational lattice and clipping is exact (no slivers).
/// The row count is `round(2 r / sqrt 3)`, which keeps the cells within a few
/// percent of regular.
pub fn generate_hex_mesh(domain: &DomainSpec, resolution: usize) -> Result<Mesh, MeshError> {
    if resolution == 0 {
        return Err(MeshError::InvalidResolution);
    }
    let r = resolution as i64;
    let m = ((2.0 * resolution as f64 / 3f64.sqrt()).round() as i64).max(1);
    // Lattice units: x in steps of w/2 over [0, 2r], y in steps of hy/3 over [0, 3m].
    let (kmax, lmax) = (2 * r, 3 * m);
    let mut lattice_ids: HashMap<(i64, i64), usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut cells = Vec::new();
    for j in 0..=m {
        let lc = 3 * j;
        let columns: Vec<i64> = if j % 2 == 0 { (0..=r).map(|i| 2 * i).collect() } else { (0..r).map(|i| 2 * i + 1).collect() };
        for kc in columns {
            let hex = [(kc, lc + 2), (kc - 1, lc + 1), (kc - 1, lc - 1), (kc, lc - 2), (kc + 1, lc - 1), (kc + 1, lc + 1)];
            let clipped = clip_to_box(&hex, kmax, lmax);
            if twice_area(&clipped) <= 0 {
                continue;
            }
            let poly: Vec<usize> = clipped
                .iter()
                .map(|&(k, l)| {
                    *lattice_ids.entry((k, l)).or_insert_with(|| {
                        vertices.push(Point::new(
                            lattice_coord(domain, k as usize, kmax as usize),
                            lattice_coord(domain, l as usize, lmax as usize),
                        ));
                        vertices.len() - 1
                    })
                })
                .collect();
            cells.push(poly);
        }
    }
    let mesh = Mesh::from_polygons(vertices, cells)?;
    mesh.check_covers(domain)?;
    Ok(mesh)
}

/// `i / n` of the way across the domain, exact at both ends.
fn lattice_coord(domain: &DomainSpec, i: usize, n: usize) -> f64 {
    if i == n {
        domain.max()
    } else {
        domain.min() + domain.side() * (i as f64 / n as f64)
    }
}

fn twice_area(poly: &[(i64, i64)]) -> i64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (p, q) = (poly[i], poly[(i + 1) % n]);
            p.0 * q.1 - q.0 * p.1
        })
        .sum()
}

/// Sutherland-Hodgman against `[0, kmax] x [0, lmax]` in integer lattice
/// coordinates. The tiling guarantees every crossing lands on a lattice point.
fn clip_to_box(poly: &[(i64, i64)], kmax: i64, lmax: i64) -> Vec<(i64, i64)> {
    // (axis, bound, keep_greater)
    let planes = [(0usize, 0i64, true), (0, kmax, false), (1, 0, true), (1, lmax, false)];
    let mut out: Vec<(i64, i64)> = poly.to_vec();
    for &(axis, bound, greater) in &planes {
        if out.is_empty() {
            break;
        }
        let coord = |p: (i64, i64)| if axis == 0 { p.0 } else { p.1 };
        let inside = |p: (i64, i64)| if greater { coord(p) >= bound } else { coord(p) <= bound };
        let input = std::mem::take(&mut out);
        let n = input.len();
        for i in 0..n {
            let (cur, next) = (input[i], input[(i + 1) % n]);
            if inside(cur) {
                out.push(cur);
            }
            if inside(cur) != inside(next) && coord(cur) != bound && coord(next) != bound {
                let (c0, c1) = (coord(cur), coord(next));
                let (o0, o1) = if axis == 0 { (cur.1, next.1) } else { (cur.0, next.0) };
                let num = o0 * (c1 - bound) + o1 * (bound - c0);
                let den = c1 - c0;
                debug_assert_eq!(num % den, 0, "hex edge crossing off the lattice");
                let other = num / den;
                out.push(if axis == 0 { (bound, other) } else { (other, bound) });
            }
        }
    }
    out.dedup();
    if out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    out
}
