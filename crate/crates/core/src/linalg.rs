//! Tridiagonal elimination and a few dense helpers on top of `nalgebra`.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};

/// A general (not necessarily symmetric) tridiagonal matrix.
///
/// `sub[i] = A[i+1][i]`, `diag[i] = A[i][i]`, `sup[i] = A[i][i+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
}

impl Tridiagonal {
    pub fn new(sub: Vec<f64>, diag: Vec<f64>, sup: Vec<f64>) -> Result<Self> {
        let n = diag.len();
        let off = n.saturating_sub(1);
        check_len(off, sub.len())?;
        check_len(off, sup.len())?;
        Ok(Self { sub, diag, sup })
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut acc = self.diag[i] * x[i];
                if i > 0 {
                    acc += self.sub[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    acc += self.sup[i] * x[i + 1];
                }
                acc
            })
            .collect()
    }

    /// Solves `A x = rhs` by Gaussian elimination with partial pivoting
    /// (the `gtsv` scheme: a row swap introduces one extra superdiagonal).
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.len();
        check_len(n, rhs.len())?;
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut dl = self.sub.clone();
        let mut d = self.diag.clone();
        let mut du = self.sup.clone();
        let mut b = rhs.to_vec();
        // After elimination dl[i] holds the second superdiagonal.
        for i in 0..n - 1 {
            if d[i].abs() >= dl[i].abs() {
                if d[i] == 0.0 {
                    return Err(Error::LinearSolveFailure { row: i });
                }
                let fact = dl[i] / d[i];
                d[i + 1] -= fact * du[i];
                b[i + 1] -= fact * b[i];
                dl[i] = 0.0;
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                let temp = d[i + 1];
                d[i + 1] = du[i] - fact * temp;
                if i + 2 < n {
                    dl[i] = du[i + 1];
                    du[i + 1] = -fact * dl[i];
                } else {
                    dl[i] = 0.0;
                }
                du[i] = temp;
                let bt = b[i];
                b[i] = b[i + 1];
                b[i + 1] = bt - fact * b[i + 1];
            }
        }
        if d[n - 1] == 0.0 || !d[n - 1].is_finite() {
            return Err(Error::LinearSolveFailure { row: n - 1 });
        }
        b[n - 1] /= d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - du[i] * b[i + 1] - dl[i] * b[i + 2]) / d[i];
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::LinearSolveFailure { row: 0 });
        }
        Ok(b)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            if i + 1 < n {
                m[(i, i + 1)] = self.sup[i];
                m[(i + 1, i)] = self.sub[i];
            }
        }
        m
    }
}

pub(crate) fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// `A v` for a dense matrix and a slice.
pub fn mat_vec(a: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (a * dvec(v)).as_slice().to_vec()
}

/// `Aᵀ v` for a dense matrix and a slice.
pub fn mat_t_vec(a: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (a.transpose() * dvec(v)).as_slice().to_vec()
}

/// Solves a small dense system by LU with partial pivoting.
pub fn dense_solve(a: &DMatrix<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    check_len(a.nrows(), rhs.len())?;
    let x = a
        .clone()
        .lu()
        .solve(&dvec(rhs))
        .ok_or(Error::SingularMetric)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularMetric);
    }
    Ok(x.as_slice().to_vec())
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().svd(false, false).singular_values.max()
}
