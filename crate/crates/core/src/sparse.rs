//! Compressed sparse row matrices and symmetric positive definite solvers.
//!
//! Assembly goes through triplet lists that are stably sorted before
//! summation, so the resulting matrices are bit-identical no matter how the
//! triplets were produced in parallel (as long as their concatenation order
//! is fixed).

use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{MatMut, Side};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearSolveError {
    #[error("conjugate gradient stagnated after {iterations} iterations (relative residual {residual:e})")]
    CgStagnation { iterations: usize, residual: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: matrix {matrix}, vector {vector}")]
    Dimension { matrix: usize, vector: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Sums duplicate entries. Explicit zeros are kept so that patterns stay
    /// stable under coefficient changes.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            debug_assert!(i < nrows && j < ncols);
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self::from_triplets(d.len(), d.len(), d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect())
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        for (i, yi) in y.iter_mut().enumerate().take(self.nrows) {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.nrows).map(|i| x[i] * self.row(i).map(|(j, v)| v * y[j]).sum::<f64>()).sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `a * self + b * other` on the union pattern.
    pub fn linear_combination(&self, a: f64, other: &CsrMatrix, b: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let trip =
            self.triplets().map(|(i, j, v)| (i, j, a * v)).chain(other.triplets().map(|(i, j, v)| (i, j, b * v))).collect();
        Self::from_triplets(self.nrows, self.ncols, trip)
    }

    /// Rows `rows` and columns `cols` (half-open ranges).
    pub fn block(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Self {
        let trip = rows
            .clone()
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .filter(|&(_, j, _)| cols.contains(&j))
            .map(|(i, j, v)| (i - rows.start, j - cols.start, v))
            .collect();
        Self::from_triplets(rows.len(), cols.len(), trip)
    }

    /// Largest relative asymmetry `|a_ij - a_ji| / max|a|`.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        self.triplets().map(|(i, j, v)| (v - self.get(j, i)).abs()).fold(0.0, f64::max) / scale
    }

    /// Same pattern; rows and columns in `fixed` replaced by identity rows.
    pub fn with_fixed_dofs(&self, fixed: &[bool]) -> Self {
        let mut out = self.clone();
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                if fixed[i] || fixed[j] {
                    out.values[k] = if i == j { 1.0 } else { 0.0 };
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, j, v) in self.triplets() {
            d[i][j] += v;
        }
        d
    }

    fn symbolic_csc(&self) -> SymbolicSparseColMatRef<'_, usize> {
        // CSR of a symmetric matrix read as CSC is the same matrix
        SymbolicSparseColMatRef::new_checked(self.ncols, self.nrows, &self.row_ptr, None, &self.col_idx)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 20_000 }
    }
}

/// Jacobi-preconditioned conjugate gradient. Returns the solution and the
/// number of iterations.
pub fn pcg(a: &CsrMatrix, b: &[f64], x0: Option<&[f64]>, opts: CgOptions) -> Result<(Vec<f64>, usize), LinearSolveError> {
    let n = a.nrows();
    if b.len() != n {
        return Err(LinearSolveError::Dimension { matrix: n, vector: b.len() });
    }
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], 0));
    }
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let ax = a.mul_vec(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..opts.max_iter {
        let res = norm2(&r) / bnorm;
        if res <= opts.tol {
            return Ok((x, it));
        }
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(LinearSolveError::NotPositiveDefinite);
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let residual = norm2(&r) / bnorm;
    if residual <= opts.tol {
        Ok((x, opts.max_iter))
    } else {
        Err(LinearSolveError::CgStagnation { iterations: opts.max_iter, residual })
    }
}

/// Sparse Cholesky factorisation with a reusable fill-reducing symbolic
/// analysis. Refactoring with a matrix of the same pattern skips the
/// symbolic step.
pub struct Cholesky {
    pattern: CsrMatrix,
    symbolic: SymbolicLlt<usize>,
    numeric: Llt<usize, f64>,
}

impl std::fmt::Debug for Cholesky {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Cholesky").field("n", &self.pattern.nrows).field("nnz", &self.pattern.nnz()).finish()
    }
}

impl Cholesky {
    pub fn new(a: &CsrMatrix) -> Result<Self, LinearSolveError> {
        let symbolic = SymbolicLlt::try_new(a.symbolic_csc(), Side::Lower).map_err(|_| LinearSolveError::NotPositiveDefinite)?;
        let numeric = Self::numeric(&symbolic, a)?;
        Ok(Self { pattern: a.clone(), symbolic, numeric })
    }

    fn numeric(symbolic: &SymbolicLlt<usize>, a: &CsrMatrix) -> Result<Llt<usize, f64>, LinearSolveError> {
        let mat = SparseColMatRef::new(a.symbolic_csc(), &a.values);
        Llt::try_new_with_symbolic(symbolic.clone(), mat, Side::Lower).map_err(|_| LinearSolveError::NotPositiveDefinite)
    }

    /// Refactors `a`, reusing the symbolic analysis when the pattern matches.
    pub fn refactor(&mut self, a: &CsrMatrix) -> Result<(), LinearSolveError> {
        if a.row_ptr == self.pattern.row_ptr && a.col_idx == self.pattern.col_idx {
            self.numeric = Self::numeric(&self.symbolic, a)?;
            self.pattern.values.clone_from(&a.values);
            Ok(())
        } else {
            *self = Self::new(a)?;
            Ok(())
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        use faer::linalg::solvers::Solve;
        let mut x = b.to_vec();
        let n = x.len();
        let rhs = MatMut::from_column_major_slice_mut(&mut x, n, 1);
        self.numeric.solve_in_place(rhs);
        x
    }

    pub fn dim(&self) -> usize {
        self.pattern.nrows
    }
}

/// How symmetric positive definite systems are solved.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SpdMethod {
    /// Sparse Cholesky.
    #[default]
    Direct,
    /// Jacobi-preconditioned CG; falls back to Cholesky on stagnation.
    Cg(CgOptions),
}

/// One-shot SPD solve: PCG by default, Cholesky on stagnation or on request.
pub fn solve_linear_spd(a: &CsrMatrix, b: &[f64], tol: f64, direct: bool) -> Result<Vec<f64>, LinearSolveError> {
    if b.len() != a.nrows() {
        return Err(LinearSolveError::Dimension { matrix: a.nrows(), vector: b.len() });
    }
    if b.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; b.len()]);
    }
    if !direct {
        match pcg(a, b, None, CgOptions { tol, ..CgOptions::default() }) {
            Ok((x, _)) => return Ok(x),
            Err(LinearSolveError::CgStagnation { iterations, residual }) => {
                log::warn!("CG stagnated ({iterations} iterations, residual {residual:e}); using Cholesky");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Cholesky::new(a)?.solve(b))
}
