//! Parametric simulation of the homoscedastic and heteroscedastic drift
//! models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::algebra::{norm, Mat2, Spd2, Vec2, C64};
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::het::HetParams;
use crate::hom::HomParams;

/// Per-batch sequence generator for `ψ` or `φ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Generator {
    Constant {
        value: C64,
    },
    /// `z_b = z_{b−1} e^{i σ_θ g} + σ_a (g' + i g'')` from `z_0 = start`.
    RandomWalk {
        start: C64,
        #[serde(default)]
        step_sd: f64,
        #[serde(default)]
        phase_sd: f64,
    },
    /// Independent `mean + sd·(g + i g')/√2`.
    Iid {
        mean: C64,
        sd: f64,
    },
    User {
        values: Vec<C64>,
    },
}

impl Generator {
    fn validate(&self, b: usize, name: &str) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(format!("{name}: {m}")));
        match self {
            Generator::Constant { value } if !value.is_finite() => bad("non-finite value".into()),
            Generator::RandomWalk {
                start,
                step_sd,
                phase_sd,
            } if !start.is_finite() || !(*step_sd >= 0.0) || !(*phase_sd >= 0.0) => {
                bad("random walk needs finite start and non-negative step sizes".into())
            }
            Generator::Iid { mean, sd } if !mean.is_finite() || !(*sd >= 0.0) => {
                bad("iid needs finite mean and non-negative sd".into())
            }
            Generator::User { values } if values.len() != b => {
                bad(format!("user vector has length {}, expected {b}", values.len()))
            }
            Generator::User { values } if values.iter().any(|v| !v.is_finite()) => bad("non-finite user value".into()),
            _ => Ok(()),
        }
    }

    /// Draws `b` values.
    pub fn generate(&self, b: usize, rng: &mut impl Rng) -> Vec<C64> {
        match self {
            Generator::Constant { value } => vec![*value; b],
            Generator::RandomWalk {
                start,
                step_sd,
                phase_sd,
            } => {
                let mut z = *start;
                (0..b)
                    .map(|_| {
                        let out = z;
                        let th: f64 = rng.sample(StandardNormal);
                        let (gr, gi): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                        z = z * C64::from_polar(1.0, phase_sd * th) + C64::new(gr, gi) * *step_sd;
                        out
                    })
                    .collect()
            }
            Generator::Iid { mean, sd } => (0..b)
                .map(|_| {
                    let (gr, gi): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                    mean + C64::new(gr, gi) * (sd / std::f64::consts::SQRT_2)
                })
                .collect(),
            Generator::User { values } => values.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NoiseSpec {
    Hom { sigma: Spd2 },
    Het { sigma0: Spd2, sigma_tilde: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    #[serde(rename = "B")]
    pub b: usize,
    #[serde(rename = "N_plus_1")]
    pub n_plus_1: usize,
    pub psi_gen: Generator,
    pub phi_gen: Generator,
    /// Mean-zero, unit-norm spectrum direction.
    pub kappa0: Vec<C64>,
    /// Spectrum mean `c` of the heteroscedastic model.
    #[serde(default)]
    pub c: C64,
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.b == 0 || self.n_plus_1 < 2 {
            return Err(Error::InvalidSpec(format!(
                "need B >= 1 and N+1 >= 2, got B = {}, N+1 = {}",
                self.b, self.n_plus_1
            )));
        }
        if self.kappa0.len() != self.n_plus_1 {
            return Err(Error::InvalidSpec(format!(
                "kappa0 has length {}, expected {}",
                self.kappa0.len(),
                self.n_plus_1
            )));
        }
        if self.kappa0.iter().any(|v| !v.is_finite()) || !self.c.is_finite() {
            return Err(Error::InvalidSpec("non-finite kappa0 or c".into()));
        }
        let mean: C64 = self.kappa0.iter().sum::<C64>() / self.n_plus_1 as f64;
        if mean.norm() > 1e-10 || (norm(&self.kappa0) - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidSpec("kappa0 must be mean-zero with unit norm".into()));
        }
        if let NoiseSpec::Het { sigma_tilde, .. } = self.noise {
            if !(sigma_tilde >= 0.0) || !sigma_tilde.is_finite() {
                return Err(Error::InvalidSpec("sigma_tilde must be finite and >= 0".into()));
            }
        }
        self.psi_gen.validate(self.b, "psi_gen")?;
        self.phi_gen.validate(self.b, "phi_gen")
    }
}

/// Draws one data matrix from `spec`. Generators consume the stream first
/// (`ψ` then `φ`), then the noise in row-major order.
pub fn simulate(spec: &SimSpec) -> Result<DataMatrix> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let psi = spec.psi_gen.generate(spec.b, &mut rng);
    let phi = spec.phi_gen.generate(spec.b, &mut rng);
    let kb: Vec<C64> = spec.kappa0.iter().map(|k| k + spec.c).collect();
    let chol: Vec<Mat2> = match &spec.noise {
        NoiseSpec::Hom { sigma } => vec![sigma.cholesky_lower(); spec.b],
        NoiseSpec::Het { sigma0, sigma_tilde } => psi
            .iter()
            .map(|&p| {
                let v = Vec2::new(-p.im, p.re);
                let s = sigma0.matrix() + v * v.transpose() * (sigma_tilde * sigma_tilde);
                Spd2::new(s).map(|m| m.cholesky_lower())
            })
            .collect::<Result<_>>()?,
    };
    let out = draw(&psi, &phi, &kb, &chol, &mut rng);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSpec("generators produced non-finite values".into()));
    }
    DataMatrix::new(out, spec.b, spec.n_plus_1)
}

fn draw(psi: &[C64], phi: &[C64], kb: &[C64], chol: &[Mat2], rng: &mut impl Rng) -> Vec<C64> {
    let mut out = Vec::with_capacity(psi.len() * kb.len());
    for b in 0..psi.len() {
        for k in kb {
            let z = Vec2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            let e = chol[b] * z;
            out.push(psi[b] + phi[b] * k + C64::new(e[0], e[1]));
        }
    }
    out
}

/// Data from fitted homoscedastic parameters.
pub fn simulate_hom(params: &HomParams, seed: u64) -> Result<DataMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chol = vec![params.sigma.cholesky_lower(); params.psi.len()];
    let v = draw(&params.psi, &params.phi, &params.kappa, &chol, &mut rng);
    DataMatrix::new(v, params.psi.len(), params.kappa.len())
}

/// Data from fitted heteroscedastic parameters.
pub fn simulate_het(params: &HetParams, seed: u64) -> Result<DataMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chol: Vec<Mat2> = (0..params.psi.len())
        .map(|b| crate::het::sigma_b(params, b).map(|s| s.cholesky_lower()))
        .collect::<Result<_>>()?;
    let kb: Vec<C64> = params.kappa.iter().map(|k| k + params.c).collect();
    let v = draw(&params.psi, &params.phi, &kb, &chol, &mut rng);
    DataMatrix::new(v, params.psi.len(), params.kappa.len())
}
