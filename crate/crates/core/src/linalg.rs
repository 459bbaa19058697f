//! Small dense/sparse helpers shared by the model modules.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Row-sparse matrix: each row is a list of `(column, value)` pairs.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SparseRows {
    ncols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn new(ncols: usize) -> Self {
        Self {
            ncols,
            rows: Vec::new(),
        }
    }

    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        debug_assert!(rows.iter().flatten().all(|&(c, _)| c < ncols));
        Self { ncols, rows }
    }

    pub fn push(&mut self, row: Vec<(usize, f64)>) {
        debug_assert!(row.iter().all(|&(c, _)| c < self.ncols));
        self.rows.push(row);
    }

    pub fn append(&mut self, other: SparseRows) {
        debug_assert_eq!(self.ncols, other.ncols);
        self.rows.extend(other.rows);
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        self.rows[i].iter().map(|&(c, v)| v * x[c]).sum()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows.len()).map(|i| self.row_dot(i, x)).collect()
    }

    /// `selfᵀ y`.
    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (row, &yi) in self.rows.iter().zip(y) {
            for &(c, v) in row {
                out[c] += v * yi;
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows.len(), self.ncols);
        for (i, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                m[(i, c)] += v;
            }
        }
        m
    }

    /// `self * b` for a dense `b` with `ncols` rows.
    pub fn mul_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        debug_assert_eq!(b.nrows(), self.ncols);
        let mut out = DMatrix::zeros(self.rows.len(), b.ncols());
        for (i, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                for j in 0..b.ncols() {
                    out[(i, j)] += v * b[(c, j)];
                }
            }
        }
        out
    }

    /// Permute rows; `order[k]` is the source row of output row `k`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            ncols: self.ncols,
            rows: order.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }
}

pub(crate) const JITTER_LADDER_START: f64 = 1e-10;
pub(crate) const JITTER_LADDER_END: f64 = 1e-6;

/// Cholesky of `a + jitter * scale * I`, climbing the jitter ladder until it succeeds.
/// Returns the factorization and the absolute jitter applied.
pub(crate) fn cholesky_with_jitter(a: &DMatrix<f64>, scale: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut rel = JITTER_LADDER_START;
    loop {
        let jitter = rel * scale;
        let mut m = a.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(m) {
            return Ok((ch, jitter));
        }
        rel *= 10.0;
        if rel > JITTER_LADDER_END * (1.0 + 1e-9) {
            return Err(Error::Numerical(format!(
                "matrix of size {} not positive definite after jitter {:e}; condition estimate {:e}",
                a.nrows(),
                JITTER_LADDER_END * scale,
                condition_estimate(a)
            )));
        }
    }
}

/// Ratio of extreme eigenvalue magnitudes of a symmetric matrix.
pub(crate) fn condition_estimate(a: &DMatrix<f64>) -> f64 {
    let eig = a.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
