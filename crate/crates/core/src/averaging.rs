//! Baseline averaging model: average the batches, apply a phase, min-max
//! normalize the real part.

use serde::{Deserialize, Serialize};

use crate::algebra::{norm, C64};
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::phase::{extract_spectrum_flagged, max_min, DegenerateFlags, SpectrumResult};

/// Column means `Z_ν = (1/B) Σ_b Y_{b,ν}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedSignal(pub Vec<C64>);

/// Phase applied before taking the real part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PhaseChoice {
    Fixed(f64),
    /// Maximum method on the centered, normalized average.
    Auto,
}

pub fn average(y: &DataMatrix) -> Result<AveragedSignal> {
    let b = y.n_batches();
    if b == 0 {
        return Err(Error::EmptyData);
    }
    let mut z = vec![C64::new(0.0, 0.0); y.n_freq()];
    for row in y.rows() {
        for (acc, v) in z.iter_mut().zip(row) {
            *acc += v;
        }
    }
    z.iter_mut().for_each(|v| *v /= b as f64);
    Ok(AveragedSignal(z))
}

/// `I = (Ĩ − min Ĩ) / (max Ĩ − min Ĩ)` with `Ĩ = Re(e^{iλ}Z)`.
///
/// The returned `omega` is `Im(e^{iλ}Z)` centered and divided by the same
/// range, so both parts share one scale.
pub fn averaging_spectrum(z: &AveragedSignal, choice: PhaseChoice) -> Result<SpectrumResult> {
    let z = &z.0;
    if z.is_empty() {
        return Err(Error::EmptyData);
    }
    let (lambda, flipped, flags) = match choice {
        PhaseChoice::Fixed(l) => (l, false, DegenerateFlags::default()),
        PhaseChoice::Auto => {
            let m: C64 = z.iter().sum::<C64>() / z.len() as f64;
            let zc: Vec<C64> = z.iter().map(|v| v - m).collect();
            let nz = norm(&zc);
            if !(nz > 0.0) {
                return Err(Error::DegenerateSpectrum);
            }
            let zc: Vec<C64> = zc.iter().map(|v| v / nz).collect();
            let s = extract_spectrum_flagged(&zc);
            if s.degenerate_flags.near_m1 {
                return Err(Error::PhaseDegenerate);
            }
            (s.lambda_opt, s.flipped, s.degenerate_flags)
        }
    };
    let u = C64::from_polar(1.0, lambda);
    let it: Vec<f64> = z.iter().map(|v| (u * v).re).collect();
    let wt: Vec<f64> = z.iter().map(|v| (u * v).im).collect();
    let (mx, mn) = max_min(&it);
    let range = mx - mn;
    if !(range > 0.0) {
        return Err(Error::DegenerateSpectrum);
    }
    let wm = wt.iter().sum::<f64>() / wt.len() as f64;
    Ok(SpectrumResult {
        i: it.iter().map(|v| (v - mn) / range).collect(),
        omega: wt.iter().map(|v| (v - wm) / range).collect(),
        lambda_opt: lambda.rem_euclid(std::f64::consts::TAU),
        flipped,
        degenerate_flags: flags,
    })
}
