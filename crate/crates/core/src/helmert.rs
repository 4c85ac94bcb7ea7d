//! Helmert sub-matrix: an orthonormal basis of the mean-zero subspace of
//! `ℝ^{N+1}`, used to drop the mean-zero constraint on `κ` and to whiten
//! row-centered noise.

use nalgebra::DMatrix;

use crate::algebra::C64;
use crate::data::DataMatrix;
use crate::error::{Error, Result};

/// The `N × (N+1)` Helmert sub-matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HelmertBasis {
    n_plus_1: usize,
    h: DMatrix<f64>,
}

impl HelmertBasis {
    pub fn n_plus_1(&self) -> usize {
        self.n_plus_1
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    /// `H v`, length `N`.
    pub fn apply(&self, v: &[C64]) -> Result<Vec<C64>> {
        if v.len() != self.n_plus_1 {
            return Err(Error::DimensionMismatch {
                expected: self.n_plus_1,
                got: v.len(),
            });
        }
        Ok(apply_h(v))
    }

    /// `Hᵀ u`, length `N + 1`.
    pub fn apply_transpose(&self, u: &[C64]) -> Result<Vec<C64>> {
        if u.len() + 1 != self.n_plus_1 {
            return Err(Error::DimensionMismatch {
                expected: self.n_plus_1 - 1,
                got: u.len(),
            });
        }
        Ok(apply_ht(u))
    }
}

/// Row `j` (1-based) is `(Σ_{k≤j} e_k − j e_{j+1}) / √(j(j+1))`.
pub fn helmert_matrix(n_plus_1: usize) -> Result<HelmertBasis> {
    if n_plus_1 < 2 {
        return Err(Error::InvalidDimension(format!(
            "Helmert matrix needs n_plus_1 >= 2, got {n_plus_1}"
        )));
    }
    let n = n_plus_1 - 1;
    let h = DMatrix::from_fn(n, n_plus_1, |r, k| {
        let j = (r + 1) as f64;
        let s = 1.0 / (j * (j + 1.0)).sqrt();
        if k <= r {
            s
        } else if k == r + 1 {
            -j * s
        } else {
            0.0
        }
    });
    Ok(HelmertBasis { n_plus_1, h })
}

fn apply_h(v: &[C64]) -> Vec<C64> {
    let mut out = Vec::with_capacity(v.len().saturating_sub(1));
    let mut s = C64::new(0.0, 0.0);
    for j in 1..v.len() {
        s += v[j - 1];
        let jf = j as f64;
        out.push((s - v[j] * jf) / (jf * (jf + 1.0)).sqrt());
    }
    out
}

fn apply_ht(u: &[C64]) -> Vec<C64> {
    let n = u.len();
    let mut out = vec![C64::new(0.0, 0.0); n + 1];
    let mut suffix = C64::new(0.0, 0.0);
    for k in (1..=n + 1).rev() {
        if k <= n {
            let j = k as f64;
            suffix += u[k - 1] / (j * (j + 1.0)).sqrt();
        }
        let mut val = suffix;
        if k >= 2 {
            let j = (k - 1) as f64;
            val -= u[k - 2] * j / (j * (j + 1.0)).sqrt();
        }
        out[k - 1] = val;
    }
    out
}

/// `H v` for a vector of length `N + 1 ≥ 2`.
pub fn helmertize(v: &[C64]) -> Result<Vec<C64>> {
    if v.len() < 2 {
        return Err(Error::InvalidDimension(format!(
            "need at least 2 frequencies, got {}",
            v.len()
        )));
    }
    Ok(apply_h(v))
}

/// `Hᵀ u`: inverse of [`helmertize`] on the mean-zero subspace.
pub fn dehelmertize(u: &[C64]) -> Vec<C64> {
    apply_ht(u)
}

/// Helmertizes every row. Since `H 1 = 0` this equals `H Ỹ_b` for the
/// row-centered data.
pub fn helmertize_data(y: &DataMatrix) -> Result<DataMatrix> {
    if y.n_freq() < 2 {
        return Err(Error::InvalidDimension(format!(
            "need at least 2 frequencies, got {}",
            y.n_freq()
        )));
    }
    let n = y.n_freq() - 1;
    let values: Vec<C64> = y.rows().flat_map(apply_h).collect();
    DataMatrix::new(values, y.n_batches(), n)
}
