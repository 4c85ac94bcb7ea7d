//! Local chart `β` of complex projective space around an anchor `[κ⁰]`.
//!
//! With a unitary `R` sending `κ⁰` to `e_N`, a point `[κ]` with
//! `(Rκ)_N ≠ 0` has coordinates
//! `x = (Re, Im of (Rκ)_j / (Rκ)_N)_{j<N} ∈ ℝ^{2(N−1)}`.

use nalgebra::DMatrix;

use crate::algebra::{norm, ProjectivePoint, C64};
use crate::error::{Error, Result};

/// Relative size of `|(Rκ)_N|` below which a point is outside the chart.
pub const CHART_DOMAIN_TOL: f64 = 1e-12;

/// Householder-type unitary `R` with `R κ⁰ = e_N` for unit `κ⁰`.
pub fn unitary_to_last(k0: &[C64]) -> Result<DMatrix<C64>> {
    let n = k0.len();
    if n == 0 {
        return Err(Error::InvalidDimension("empty anchor".into()));
    }
    let nk = norm(k0);
    if !(nk > 0.0) {
        return Err(Error::ZeroDirection);
    }
    let k: Vec<C64> = k0.iter().map(|z| z / nk).collect();
    let theta = k[n - 1].arg();
    let ph = C64::from_polar(1.0, theta);
    let mut v = k.clone();
    v[n - 1] -= ph;
    let vv: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    let mut h = DMatrix::<C64>::identity(n, n);
    if vv > 1e-30 {
        for i in 0..n {
            for j in 0..n {
                h[(i, j)] -= v[i] * v[j].conj() * (2.0 / vv);
            }
        }
    }
    Ok(h * ph.conj())
}

/// The `N × 2(N−1)` matrix mapping real chart coordinates to the complex
/// displacement of `x̃`: row `j < N−1` has `1` in column `2j` and `i` in
/// column `2j+1`; the last row is zero.
pub fn chart_pattern(n: usize) -> DMatrix<C64> {
    let d = 2 * n.saturating_sub(1);
    let mut a = DMatrix::<C64>::zeros(n, d);
    for j in 0..n.saturating_sub(1) {
        a[(j, 2 * j)] = C64::new(1.0, 0.0);
        a[(j, 2 * j + 1)] = C64::new(0.0, 1.0);
    }
    a
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    anchor: ProjectivePoint,
    r: DMatrix<C64>,
}

/// Chart coordinates together with the chart that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartPoint {
    pub x: Vec<f64>,
    pub chart: Chart,
}

impl Chart {
    pub fn new(anchor: &ProjectivePoint) -> Result<Self> {
        if anchor.dim() < 2 {
            return Err(Error::InvalidDimension("chart needs dimension N >= 2".into()));
        }
        Ok(Chart {
            anchor: anchor.clone(),
            r: unitary_to_last(anchor.rep())?,
        })
    }

    pub fn anchor(&self) -> &ProjectivePoint {
        &self.anchor
    }

    pub fn r(&self) -> &DMatrix<C64> {
        &self.r
    }

    pub fn dim(&self) -> usize {
        self.anchor.dim()
    }

    /// `β([κ])`.
    pub fn coords(&self, kappa: &[C64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if kappa.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: kappa.len(),
            });
        }
        let kt = &self.r * nalgebra::DVector::from_column_slice(kappa);
        let last = kt[n - 1];
        if last.norm() <= CHART_DOMAIN_TOL * norm(kappa) {
            return Err(Error::ChartDomain);
        }
        Ok((0..n - 1)
            .flat_map(|j| {
                let q = kt[j] / last;
                [q.re, q.im]
            })
            .collect())
    }

    pub fn forward(&self, kappa: &ProjectivePoint) -> Result<ChartPoint> {
        Ok(ChartPoint {
            x: self.coords(kappa.rep())?,
            chart: self.clone(),
        })
    }

    /// `R* x̃` with `x̃ = (x₁ + i x₂, …, 1)`: an unnormalized representative
    /// of `β⁻¹(x)`.
    pub fn inverse_unnormalized(&self, x: &[f64]) -> Result<Vec<C64>> {
        let n = self.dim();
        if x.len() != 2 * (n - 1) {
            return Err(Error::DimensionMismatch {
                expected: 2 * (n - 1),
                got: x.len(),
            });
        }
        let mut xt: Vec<C64> = x.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect();
        xt.push(C64::new(1.0, 0.0));
        let v = self.r.adjoint() * nalgebra::DVector::from_vec(xt);
        Ok(v.iter().copied().collect())
    }

    /// `β⁻¹(x)`.
    pub fn inverse(&self, x: &[f64]) -> Result<ProjectivePoint> {
        ProjectivePoint::new(self.inverse_unnormalized(x)?)
    }
}

pub fn chart_forward(kappa: &ProjectivePoint, anchor: &ProjectivePoint) -> Result<ChartPoint> {
    Chart::new(anchor)?.forward(kappa)
}

pub fn chart_inverse(x: &[f64], anchor: &ProjectivePoint) -> Result<ProjectivePoint> {
    Chart::new(anchor)?.inverse(x)
}
