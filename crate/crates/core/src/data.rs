use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::algebra::C64;
use crate::error::{Error, Result};

/// Dense `B × (N+1)` complex measurement matrix with axis metadata.
///
/// Rows are batches, columns are frequencies. Storage is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    values: Vec<C64>,
    n_batches: usize,
    n_freq: usize,
    freq_hz: Vec<f64>,
    batch_ids: Vec<i64>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl DataMatrix {
    /// Builds a matrix with default axes (`freq_hz = 0, 1, ...`, `batch_ids = 0, 1, ...`).
    pub fn new(values: Vec<C64>, n_batches: usize, n_freq: usize) -> Result<Self> {
        let freq_hz = (0..n_freq).map(|i| i as f64).collect();
        let batch_ids = (0..n_batches as i64).collect();
        Self::with_axes(values, n_batches, n_freq, freq_hz, batch_ids)
    }

    pub fn with_axes(
        values: Vec<C64>,
        n_batches: usize,
        n_freq: usize,
        freq_hz: Vec<f64>,
        batch_ids: Vec<i64>,
    ) -> Result<Self> {
        if n_batches == 0 || n_freq == 0 {
            return Err(Error::EmptyData);
        }
        if values.len() != n_batches * n_freq {
            return Err(Error::DimensionMismatch {
                expected: n_batches * n_freq,
                got: values.len(),
            });
        }
        if freq_hz.len() != n_freq {
            return Err(Error::DimensionMismatch {
                expected: n_freq,
                got: freq_hz.len(),
            });
        }
        if batch_ids.len() != n_batches {
            return Err(Error::DimensionMismatch {
                expected: n_batches,
                got: batch_ids.len(),
            });
        }
        if values.iter().any(|z| !z.is_finite()) {
            return Err(Error::DegenerateData("non-finite entry".into()));
        }
        check_monotone(&freq_hz)?;
        Ok(DataMatrix {
            values,
            n_batches,
            n_freq,
            freq_hz,
            batch_ids,
            meta: BTreeMap::new(),
        })
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let b = rows.len();
        if b == 0 {
            return Err(Error::EmptyData);
        }
        let n = rows[0].len();
        let mut values = Vec::with_capacity(b * n);
        for r in rows {
            if r.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Self::new(values, b, n)
    }

    /// Number of batches `B`.
    pub fn n_batches(&self) -> usize {
        self.n_batches
    }

    /// Number of frequencies `N + 1`.
    pub fn n_freq(&self) -> usize {
        self.n_freq
    }

    pub fn freq_hz(&self) -> &[f64] {
        &self.freq_hz
    }

    pub fn batch_ids(&self) -> &[i64] {
        &self.batch_ids
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    #[inline]
    pub fn row(&self, b: usize) -> &[C64] {
        &self.values[b * self.n_freq..(b + 1) * self.n_freq]
    }

    #[inline]
    pub fn get(&self, b: usize, nu: usize) -> C64 {
        self.values[b * self.n_freq + nu]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[C64]> {
        self.values.chunks_exact(self.n_freq)
    }

    pub fn column(&self, nu: usize) -> Vec<C64> {
        (0..self.n_batches).map(|b| self.get(b, nu)).collect()
    }

    /// Row means with divisor `N + 1`.
    pub fn row_means(&self) -> Vec<C64> {
        let n = self.n_freq as f64;
        self.rows().map(|r| r.iter().sum::<C64>() / n).collect()
    }

    /// Returns `(ψ̂, Y − ψ̂ 1ᵀ)` with `ψ̂` the row means.
    pub fn centered(&self) -> (Vec<C64>, DataMatrix) {
        let psi = self.row_means();
        let mut out = self.clone();
        for (b, p) in psi.iter().enumerate() {
            for z in &mut out.values[b * self.n_freq..(b + 1) * self.n_freq] {
                *z -= p;
            }
        }
        (psi, out)
    }

    /// Same axes, entries transformed by `f`.
    pub fn map(&self, f: impl Fn(C64) -> C64) -> DataMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|z| *z = f(*z));
        out
    }

    /// Squared Frobenius norm.
    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum()
    }
}

fn check_monotone(f: &[f64]) -> Result<()> {
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonMonotoneFrequency("non-finite frequency".into()));
    }
    if f.len() < 2 {
        return Ok(());
    }
    let inc = f.windows(2).all(|w| w[1] > w[0]);
    let dec = f.windows(2).all(|w| w[1] < w[0]);
    if inc || dec {
        Ok(())
    } else {
        let i = f
            .windows(2)
            .position(|w| (w[1] - w[0]) * (f[1] - f[0]) <= 0.0)
            .unwrap_or(0);
        Err(Error::NonMonotoneFrequency(format!(
            "at positions {} and {}: {} then {}",
            i,
            i + 1,
            f[i],
            f[i + 1]
        )))
    }
}
