//! Parametric bootstrap bands for the spectrum `I` and the wave `ω`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{norm, sym_eigenvalues, Mat2, Spd2, C64};
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::het::{fit_het, HetFitReport, HetOptions, HetParams};
use crate::hom::{fit_hom, FitReport, HomOptions, HomParams};
use crate::phase::{dot, extract_spectrum, SpectrumResult};
use crate::simulate::{simulate_het, simulate_hom};

/// A fitted model to resample from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum FittedModel {
    Hom(FitReport),
    Het(HetFitReport),
}

impl FittedModel {
    pub fn kappa(&self) -> &[C64] {
        match self {
            FittedModel::Hom(f) => &f.params.kappa,
            FittedModel::Het(f) => &f.params.kappa,
        }
    }

    pub fn phi(&self) -> &[C64] {
        match self {
            FittedModel::Hom(f) => &f.params.phi,
            FittedModel::Het(f) => &f.params.phi,
        }
    }

    /// `Σ̂` for the homoscedastic model, `Σ̂₀` for the heteroscedastic one.
    pub fn sigma(&self) -> Spd2 {
        match self {
            FittedModel::Hom(f) => f.params.sigma,
            FittedModel::Het(f) => f.params.sigma0,
        }
    }

    pub fn converged(&self) -> bool {
        match self {
            FittedModel::Hom(f) => f.converged,
            FittedModel::Het(f) => f.converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub level: f64,
    pub bias_correct: bool,
    pub pilot_replicates: usize,
    pub seed: u64,
    /// Refit options; the warm start is set from the fit being resampled.
    pub hom: HomOptions,
    pub het: HetOptions,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            replicates: 500,
            level: 0.95,
            bias_correct: false,
            pilot_replicates: 50,
            seed: 0,
            hom: HomOptions::default(),
            het: HetOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasCorrection {
    /// `mean(Σ̂*) − Σ̂`; may be indefinite.
    pub sigma_additive: [[f64; 2]; 2],
    /// `mean(‖φ̂*‖) / ‖φ̂‖`.
    pub phi_multiplicative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Successful replicates entering the bands.
    pub replicates: usize,
    pub failed: usize,
    pub level: f64,
    pub point: SpectrumResult,
    pub bands_i: Vec<Band>,
    pub bands_omega: Vec<Band>,
    pub bias: Option<BiasCorrection>,
}

/// Type-7 quantile (linear interpolation) of a sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// One replicate: simulate from `model`, refit with warm start, return the
/// refit together with its spectrum.
fn replicate(model: &FittedModel, seed: u64, opts: &BootstrapOptions) -> Result<(FittedModel, SpectrumResult)> {
    let refit = match model {
        FittedModel::Hom(f) => {
            let y = simulate_hom(&f.params, seed)?;
            let o = HomOptions {
                init: Some((f.params.phi.clone(), f.params.kappa.clone())),
                ..opts.hom.clone()
            };
            FittedModel::Hom(fit_hom(&y, &o)?)
        }
        FittedModel::Het(f) => {
            let y = simulate_het(&f.params, seed)?;
            let o = HetOptions {
                hom: HomOptions {
                    init: Some((f.params.phi.clone(), f.params.kappa.clone())),
                    ..opts.het.hom.clone()
                },
                ..opts.het.clone()
            };
            FittedModel::Het(fit_het(&y, &o)?)
        }
    };
    let spec = extract_spectrum(refit.kappa())?;
    Ok((refit, spec))
}

fn run_round(
    model: &FittedModel,
    count: usize,
    seed: u64,
    opts: &BootstrapOptions,
) -> Result<Vec<(FittedModel, SpectrumResult)>> {
    let results: Vec<Result<(FittedModel, SpectrumResult)>> = (0..count)
        .into_par_iter()
        .map(|i| replicate(model, seed ^ i as u64, opts))
        .collect();
    let failed = results.iter().filter(|r| r.is_err()).count();
    if failed as f64 > 0.05 * count as f64 {
        let first = results
            .iter()
            .find_map(|r| r.as_ref().err())
            .map(|e| e.to_string())
            .unwrap_or_default();
        return Err(Error::RefitFailure {
            failed,
            total: count,
            first,
        });
    }
    Ok(results.into_iter().filter_map(|r| r.ok()).collect())
}

/// Projects a symmetric matrix onto SPD by clamping eigenvalues at
/// `1e-12·trace`.
fn clamp_spd(m: &Mat2) -> Result<Spd2> {
    let e = nalgebra::SymmetricEigen::new(*m);
    let tr = e.eigenvalues.iter().map(|l| l.abs()).sum::<f64>();
    let floor = (1e-12 * tr).max(f64::MIN_POSITIVE);
    let d = e.eigenvalues.map(|l| l.max(floor));
    Spd2::new(e.eigenvectors * Mat2::from_diagonal(&d) * e.eigenvectors.transpose())
}

fn with_corrected(model: &FittedModel, sigma: Spd2, phi_scale: f64) -> FittedModel {
    let scale = |phi: &[C64]| phi.iter().map(|f| f / phi_scale).collect::<Vec<_>>();
    match model {
        FittedModel::Hom(f) => FittedModel::Hom(FitReport {
            params: HomParams {
                phi: scale(&f.params.phi),
                sigma,
                ..f.params.clone()
            },
            ..f.clone()
        }),
        FittedModel::Het(f) => FittedModel::Het(HetFitReport {
            params: HetParams {
                phi: scale(&f.params.phi),
                sigma0: sigma,
                ..f.params.clone()
            },
            ..f.clone()
        }),
    }
}

/// Pilot-round bias estimate: additive for `Σ`, multiplicative for `φ`.
fn estimate_bias(model: &FittedModel, opts: &BootstrapOptions) -> Result<BiasCorrection> {
    let pilot = run_round(model, opts.pilot_replicates.max(2), !opts.seed, opts)?;
    let m = pilot.len() as f64;
    let mean_sigma = pilot.iter().fold(Mat2::zeros(), |a, (f, _)| a + f.sigma().matrix()) / m;
    let add = mean_sigma - model.sigma().matrix();
    let phi_norm = norm(model.phi());
    let mean_phi = pilot.iter().map(|(f, _)| norm(f.phi())).sum::<f64>() / m;
    let mult = if phi_norm > 0.0 { mean_phi / phi_norm } else { 1.0 };
    Ok(BiasCorrection {
        sigma_additive: [[add[(0, 0)], add[(0, 1)]], [add[(1, 0)], add[(1, 1)]]],
        phi_multiplicative: mult,
    })
}

/// Resamples from the fitted model, refits each replicate, aligns its
/// spectrum with the point estimate, and forms per-frequency quantile bands
/// for `I` and `ω` separately. Replicate `i` uses seed `seed XOR i`; the
/// pilot round uses the complemented seed.
pub fn parametric_bootstrap(fit: &FittedModel, opts: &BootstrapOptions) -> Result<BootstrapResult> {
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(Error::Precondition(format!("level {} not in (0, 1)", opts.level)));
    }
    if opts.replicates < 2 {
        return Err(Error::TooFewSamples {
            min: 2,
            got: opts.replicates,
        });
    }
    if !fit.converged() {
        log::warn!("bootstrapping a fit that did not converge");
    }
    let point = extract_spectrum(fit.kappa())?;
    let (model, bias) = if opts.bias_correct {
        let bias = estimate_bias(fit, opts)?;
        let a = Mat2::new(
            bias.sigma_additive[0][0],
            bias.sigma_additive[0][1],
            bias.sigma_additive[1][0],
            bias.sigma_additive[1][1],
        );
        let corrected = fit.sigma().matrix() - a;
        let (_, l2) = sym_eigenvalues(&corrected);
        if l2 <= 0.0 {
            log::warn!("bias-corrected covariance clamped to SPD");
        }
        let mult = if bias.phi_multiplicative > 0.0 {
            bias.phi_multiplicative
        } else {
            1.0
        };
        (with_corrected(fit, clamp_spd(&corrected)?, mult), Some(bias))
    } else {
        (fit.clone(), None)
    };

    let reps = run_round(&model, opts.replicates, opts.seed, opts)?;
    let n = point.i.len();
    let mut cols_i = vec![Vec::with_capacity(reps.len()); n];
    let mut cols_w = vec![Vec::with_capacity(reps.len()); n];
    for (_, s) in &reps {
        let sign = if dot(&s.i, &point.i) < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            cols_i[j].push(sign * s.i[j]);
            cols_w[j].push(sign * s.omega[j]);
        }
    }
    let lo = (1.0 - opts.level) / 2.0;
    let hi = 1.0 - lo;
    let band = |mut v: Vec<f64>| {
        v.sort_by(|a, b| a.total_cmp(b));
        Band {
            lower: quantile_sorted(&v, lo),
            upper: quantile_sorted(&v, hi),
        }
    };
    Ok(BootstrapResult {
        replicates: reps.len(),
        failed: opts.replicates - reps.len(),
        level: opts.level,
        point,
        bands_i: cols_i.into_iter().map(band).collect(),
        bands_omega: cols_w.into_iter().map(band).collect(),
        bias,
    })
}

/// Convenience wrapper fitting the requested model first.
pub fn bootstrap_data(y: &DataMatrix, het: bool, opts: &BootstrapOptions) -> Result<BootstrapResult> {
    let fit = if het {
        FittedModel::Het(fit_het(y, &opts.het)?)
    } else {
        FittedModel::Hom(fit_hom(y, &opts.hom)?)
    };
    parametric_bootstrap(&fit, opts)
}
