use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};

const SHIFT: f64 = 1e-12;
const EIGEN_TOL: f64 = 1e-8;

/// A validated correlation matrix for the systematic factors, together with a
/// lower-triangular factor used for sampling.
#[derive(Debug, Clone, Serialize)]
pub struct CorrelationMatrix {
    dim: usize,
    entries: Vec<f64>,
    #[serde(skip)]
    lower: Vec<f64>,
    min_eigenvalue: f64,
}

impl CorrelationMatrix {
    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for j in 0..dim {
            entries[j * dim + j] = 1.0;
        }
        CorrelationMatrix {
            dim,
            lower: entries.clone(),
            entries,
            min_eigenvalue: 1.0,
        }
    }

    /// Validates symmetry, unit diagonal and positive semidefiniteness.
    ///
    /// A Cholesky factorization of `C + 1e-12 I` is attempted first. When that
    /// fails, the smallest eigenvalue decides: below `-1e-8` the matrix is
    /// rejected, otherwise the diagonal shift is enlarged just enough to factor it.
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::NotCorrelation {
                reason: "empty matrix".into(),
                min_eigenvalue: f64::NAN,
            });
        }
        if entries.len() != dim * dim {
            return Err(Error::Dimension(format!(
                "correlation matrix has {} entries, expected {}",
                entries.len(),
                dim * dim
            )));
        }
        let reject = |reason: String| Error::NotCorrelation {
            reason,
            min_eigenvalue: f64::NAN,
        };
        for i in 0..dim {
            if (entries[i * dim + i] - 1.0).abs() > 1e-12 {
                return Err(reject(format!("diagonal entry {} is {}", i + 1, entries[i * dim + i])));
            }
            for j in 0..dim {
                let v = entries[i * dim + j];
                if !v.is_finite() || v.abs() > 1.0 + 1e-12 {
                    return Err(reject(format!("entry ({}, {}) = {v} is not a correlation", i + 1, j + 1)));
                }
                if (v - entries[j * dim + i]).abs() > 1e-12 {
                    return Err(reject(format!("not symmetric at ({}, {})", i + 1, j + 1)));
                }
            }
        }
        let m = DMatrix::from_row_slice(dim, dim, &entries);
        let min_eigenvalue = SymmetricEigen::new(m.clone()).eigenvalues.min();
        if min_eigenvalue < -EIGEN_TOL {
            return Err(Error::NotCorrelation {
                reason: "matrix is not positive semidefinite".into(),
                min_eigenvalue,
            });
        }
        let factor = cholesky_shifted(&m, SHIFT)
            .or_else(|| cholesky_shifted(&m, SHIFT - min_eigenvalue.min(0.0)))
            .ok_or_else(|| Error::NotCorrelation {
                reason: "Cholesky factorization failed".into(),
                min_eigenvalue,
            })?;
        Ok(CorrelationMatrix {
            dim,
            entries,
            lower: factor,
            min_eigenvalue,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Dimension("correlation matrix is not square".into()));
        }
        Self::new(dim, rows.iter().flatten().copied().collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    pub fn is_identity(&self) -> bool {
        (0..self.dim).all(|i| (0..self.dim).all(|j| self.get(i, j) == if i == j { 1.0 } else { 0.0 }))
    }

    /// `a . C b`
    pub fn bilinear(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), self.dim);
        debug_assert_eq!(b.len(), self.dim);
        let mut sum = 0.0;
        for i in 0..self.dim {
            if a[i] == 0.0 {
                continue;
            }
            let row = &self.entries[i * self.dim..(i + 1) * self.dim];
            let mut inner = 0.0;
            for j in 0..self.dim {
                inner += row[j] * b[j];
            }
            sum += a[i] * inner;
        }
        sum
    }

    /// `a . C a`
    pub fn quad(&self, a: &[f64]) -> f64 {
        self.bilinear(a, a)
    }

    /// Writes `L eps` into `out`, where `L L^T = C` (up to the validation shift).
    #[inline]
    pub fn correlate(&self, eps: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let row = &self.lower[i * d..i * d + i + 1];
            out[i] = row.iter().zip(eps).map(|(l, e)| l * e).sum();
        }
    }
}

fn cholesky_shifted(m: &DMatrix<f64>, shift: f64) -> Option<Vec<f64>> {
    let dim = m.nrows();
    let shifted = m + DMatrix::<f64>::identity(dim, dim) * shift;
    let chol = shifted.cholesky()?;
    let l = chol.l();
    let mut out = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            out[i * dim + j] = l[(i, j)];
        }
    }
    Some(out)
}
