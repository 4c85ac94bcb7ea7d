//! Goodness of fit, flat-region noise level and model comparison.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::algebra::{vec_of, Spd2, C64};
use crate::averaging::{average, averaging_spectrum, PhaseChoice};
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::het::{fit_het, sigma_b, HetOptions, HetParams};
use crate::hom::{fit_hom, HomOptions, HomParams};
use crate::phase::{extract_spectrum, max_min};

/// Parameters whose residuals can be standardized.
#[derive(Debug, Clone, Copy)]
pub enum ModelRef<'a> {
    Hom(&'a HomParams),
    Het(&'a HetParams),
}

/// `Σ^{-1/2} vec(Y_{b,ν} − fitted)` for every cell, row-major.
pub fn standardized_residuals(y: &DataMatrix, model: ModelRef<'_>) -> Result<Vec<[f64; 2]>> {
    let (bn, n1) = (y.n_batches(), y.n_freq());
    let (nb, nk) = match model {
        ModelRef::Hom(p) => (p.psi.len(), p.kappa.len()),
        ModelRef::Het(p) => (p.psi.len(), p.kappa.len()),
    };
    if nb != bn || nk != n1 {
        return Err(Error::DimensionMismatch {
            expected: bn * n1,
            got: nb * nk,
        });
    }
    let mut out = Vec::with_capacity(bn * n1);
    for b in 0..bn {
        let (w, fit): (_, Box<dyn Fn(usize) -> C64>) = match model {
            ModelRef::Hom(p) => (checked_inv_sqrt(&p.sigma)?, Box::new(move |nu| p.fitted(b, nu))),
            ModelRef::Het(p) => (
                checked_inv_sqrt(&sigma_b(p, b).map_err(|_| Error::SingularSigma)?)?,
                Box::new(move |nu| p.fitted(b, nu)),
            ),
        };
        for nu in 0..n1 {
            let r = w * vec_of(y.get(b, nu) - fit(nu));
            out.push([r[0], r[1]]);
        }
    }
    Ok(out)
}

fn checked_inv_sqrt(s: &Spd2) -> Result<crate::algebra::Mat2> {
    if !(s.det() > 0.0) {
        return Err(Error::SingularSigma);
    }
    Ok(s.inv_sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d: f64,
    pub p: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub p_real: f64,
    pub p_imag: f64,
    pub ks_stat_real: f64,
    pub ks_stat_imag: f64,
    pub n: usize,
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if !(lambda > 0.0) {
        return 1.0;
    }
    let p = if lambda < 1.18 {
        // Small-λ form converges fast where the alternating series does not.
        let pi2 = std::f64::consts::PI.powi(2);
        let s: f64 = (1..=100)
            .map(|k| {
                let m = (2 * k - 1) as f64;
                (-m * m * pi2 / (8.0 * lambda * lambda)).exp()
            })
            .sum();
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s
    } else {
        2.0 * (1..=100)
            .map(|k| {
                let kf = k as f64;
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * kf * kf * lambda * lambda).exp()
            })
            .sum::<f64>()
    };
    p.clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov test against `N(0, 1)` with the asymptotic
/// p-value at `λ = √n·D`. No correction for estimated parameters.
pub fn ks_test(sample: &[f64]) -> Result<KsResult> {
    let n = sample.len();
    if n < 8 {
        return Err(Error::TooFewSamples { min: 8, got: n });
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateData("non-finite sample".into()));
    }
    let mut s = sample.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let norm = Normal::new(0.0, 1.0).expect("standard normal");
    let nf = n as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = norm.cdf(x);
            ((i + 1) as f64 / nf - f).max(f - i as f64 / nf)
        })
        .fold(0.0, f64::max);
    Ok(KsResult {
        d,
        p: kolmogorov_survival(nf.sqrt() * d),
        n,
    })
}

/// KS tests on the real and imaginary parts of the pooled standardized
/// residuals.
pub fn gof(y: &DataMatrix, model: ModelRef<'_>) -> Result<GofReport> {
    let r = standardized_residuals(y, model)?;
    let re: Vec<f64> = r.iter().map(|v| v[0]).collect();
    let im: Vec<f64> = r.iter().map(|v| v[1]).collect();
    let a = ks_test(&re)?;
    let b = ks_test(&im)?;
    Ok(GofReport {
        p_real: a.p,
        p_imag: b.p,
        ks_stat_real: a.d,
        ks_stat_imag: b.d,
        n: a.n,
    })
}

/// Disjoint half-open index intervals `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(usize, usize)>", into = "Vec<(usize, usize)>")]
pub struct FlatRegions(Vec<(usize, usize)>);

impl TryFrom<Vec<(usize, usize)>> for FlatRegions {
    type Error = Error;
    fn try_from(v: Vec<(usize, usize)>) -> Result<Self> {
        let mut v = v;
        v.sort();
        if v.is_empty() {
            return Err(Error::RegionOutOfRange("no regions given".into()));
        }
        for (i, &(a, b)) in v.iter().enumerate() {
            if a >= b {
                return Err(Error::RegionOutOfRange(format!("[{a}, {b}) is empty")));
            }
            if i > 0 && v[i - 1].1 > a {
                return Err(Error::RegionOutOfRange(format!(
                    "[{}, {}) overlaps [{a}, {b})",
                    v[i - 1].0,
                    v[i - 1].1
                )));
            }
        }
        Ok(FlatRegions(v))
    }
}

impl From<FlatRegions> for Vec<(usize, usize)> {
    fn from(r: FlatRegions) -> Self {
        r.0
    }
}

impl FlatRegions {
    pub fn new(v: Vec<(usize, usize)>) -> Result<Self> {
        Self::try_from(v)
    }

    pub fn intervals(&self) -> &[(usize, usize)] {
        &self.0
    }

    fn check_range(&self, n: usize) -> Result<()> {
        match self.0.last() {
            Some(&(a, b)) if b > n => Err(Error::RegionOutOfRange(format!(
                "[{a}, {b}) exceeds spectrum length {n}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().flat_map(|&(a, b)| a..b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalize {
    MinMax,
    None,
}

/// Sample standard deviation (divisor `n − 1`) of `I` over the flat regions.
pub fn snr_flat_std(i: &[f64], regions: &FlatRegions, normalize: Normalize) -> Result<f64> {
    regions.check_range(i.len())?;
    let scaled: Vec<f64> = match normalize {
        Normalize::None => i.to_vec(),
        Normalize::MinMax => {
            let (mx, mn) = max_min(i);
            if !(mx > mn) {
                return Err(Error::DegenerateSpectrum);
            }
            i.iter().map(|v| (v - mn) / (mx - mn)).collect()
        }
    };
    let v: Vec<f64> = regions.indices().map(|j| scaled[j]).collect();
    if v.len() < 2 {
        return Err(Error::TooFewSamples { min: 2, got: v.len() });
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    Ok((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    #[serde(rename = "I")]
    pub i: Vec<f64>,
    pub flat_std: f64,
    pub gof: Option<GofReport>,
    pub loglik: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub models: Vec<ModelSummary>,
}

/// Fits the averaging and homoscedastic models (and optionally the
/// heteroscedastic one) and tabulates spectra, KS p-values and flat-region
/// standard deviations. All spectra are min-max rescaled before the
/// standard deviation is taken.
pub fn compare_models(y: &DataMatrix, regions: &FlatRegions, include_het: bool) -> Result<ComparisonReport> {
    let mut models = Vec::new();

    let avg = averaging_spectrum(&average(y)?, PhaseChoice::Auto)?;
    models.push(ModelSummary {
        model: "averaging".into(),
        flat_std: snr_flat_std(&avg.i, regions, Normalize::MinMax)?,
        i: avg.i,
        gof: None,
        loglik: None,
    });

    let hom = fit_hom(y, &HomOptions::default())?;
    let hs = extract_spectrum(&hom.params.kappa)?;
    models.push(ModelSummary {
        model: "hom".into(),
        flat_std: snr_flat_std(&hs.i, regions, Normalize::MinMax)?,
        i: hs.i,
        gof: Some(gof(y, ModelRef::Hom(&hom.params))?),
        loglik: Some(hom.loglik()),
    });

    if include_het {
        let het = fit_het(y, &HetOptions::default())?;
        let s = extract_spectrum(&het.params.kappa)?;
        models.push(ModelSummary {
            model: "het".into(),
            flat_std: snr_flat_std(&s.i, regions, Normalize::MinMax)?,
            i: s.i,
            gof: Some(gof(y, ModelRef::Het(&het.params))?),
            loglik: Some(het.loglik()),
        });
    }
    Ok(ComparisonReport { models })
}
