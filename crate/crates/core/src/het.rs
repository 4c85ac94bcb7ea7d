//! Heteroscedastic drift model
//! `Y_{b,ν} = ψ_b + φ_b (κ_ν + c) + ε_{b,ν}`, `ε_{b,ν} ~ N(0, Σ_b)` with
//! `Σ_b = Σ₀ + σ̃² vec(iψ_b) vec(iψ_b)ᵀ`.

use serde::{Deserialize, Serialize};

use crate::algebra::{comp_of, mat_of, norm, sym_eigenvalues, vec_of, Mat2, Spd2, Vec2, C64};
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::hom::{fit_hom, HomOptions};
use crate::optim::{lbfgsb, nelder_mead, LbfgsbOptions, NelderMeadOptions};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HetParams {
    pub psi: Vec<C64>,
    pub phi: Vec<C64>,
    /// Mean-zero, unit-norm spectrum direction.
    pub kappa: Vec<C64>,
    /// Spectrum mean.
    pub c: C64,
    pub sigma_tilde: f64,
    pub sigma0: Spd2,
}

impl HetParams {
    /// Fitted values `ψ_b + φ_b (κ_ν + c)`.
    pub fn fitted(&self, b: usize, nu: usize) -> C64 {
        self.psi[b] + self.phi[b] * (self.kappa[nu] + self.c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HetFitReport {
    pub params: HetParams,
    pub loglik_trace: Vec<f64>,
    pub n_iter: usize,
    pub converged: bool,
    /// Set when an eigenvalue of `Σ̂₀` fell below the boundary guard.
    pub boundary_warning: bool,
}

impl HetFitReport {
    pub fn loglik(&self) -> f64 {
        self.loglik_trace.last().copied().unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HetOptions {
    pub maxiter: usize,
    pub min_delta_loglik: f64,
    /// First iteration that runs the `Δ_c` re-centering step.
    pub start_c_opt: usize,
    /// Lower eigenvalue guard for `Σ₀`.
    pub delta: f64,
    /// Pins `σ̃` to the given value instead of estimating it.
    pub fix_sigma_tilde: Option<f64>,
    pub hom: HomOptions,
}

impl Default for HetOptions {
    fn default() -> Self {
        HetOptions {
            maxiter: 200,
            min_delta_loglik: 1e-4,
            start_c_opt: 25,
            delta: 1e-20,
            fix_sigma_tilde: None,
            hom: HomOptions::default(),
        }
    }
}

/// `vec(iψ) = (−Im ψ, Re ψ)`.
fn phase_dir(psi: C64) -> Vec2 {
    Vec2::new(-psi.im, psi.re)
}

fn sigma_b_raw(sigma0: &Mat2, sigma_tilde: f64, psi: C64) -> Mat2 {
    let v = phase_dir(psi);
    sigma0 + v * v.transpose() * (sigma_tilde * sigma_tilde)
}

/// `Σ_b = Σ₀ + σ̃² vec(iψ_b) vec(iψ_b)ᵀ`.
pub fn sigma_b(params: &HetParams, b: usize) -> Result<Spd2> {
    let psi = *params.psi.get(b).ok_or(Error::IndexOutOfRange {
        index: b,
        len: params.psi.len(),
    })?;
    Spd2::new(sigma_b_raw(params.sigma0.matrix(), params.sigma_tilde, psi)).map_err(|_| Error::SingularSigmaB(b))
}

fn check_dims(y: &DataMatrix, params: &HetParams) -> Result<()> {
    for (want, got) in [
        (y.n_batches(), params.psi.len()),
        (y.n_batches(), params.phi.len()),
        (y.n_freq(), params.kappa.len()),
    ] {
        if want != got {
            return Err(Error::DimensionMismatch { expected: want, got });
        }
    }
    Ok(())
}

/// `Σ_ν r rᵀ` for residuals of batch `b`.
fn batch_scatter(y: &DataMatrix, params: &HetParams, b: usize) -> Mat2 {
    let mut s = Mat2::zeros();
    for (nu, v) in y.row(b).iter().enumerate() {
        let r = vec_of(v - params.fitted(b, nu));
        s += r * r.transpose();
    }
    s
}

/// Gaussian log-density of `n` residuals with scatter `s` and covariance
/// `sig`; `None` if `sig` is not positive definite.
fn gauss_ll(s: &Mat2, sig: &Mat2, n: f64) -> Option<f64> {
    let det = sig.determinant();
    if !(det > 0.0) || !(sig[(0, 0)] > 0.0) {
        return None;
    }
    let p = sig.try_inverse()?;
    Some(-0.5 * (p * s).trace() - 0.5 * n * det.ln() - n * LN_2PI)
}

/// Per-batch log-likelihood contributions.
pub fn het_loglik_per_batch(y: &DataMatrix, params: &HetParams) -> Result<Vec<f64>> {
    check_dims(y, params)?;
    let n = y.n_freq() as f64;
    (0..y.n_batches())
        .map(|b| {
            let sig = sigma_b_raw(params.sigma0.matrix(), params.sigma_tilde, params.psi[b]);
            gauss_ll(&batch_scatter(y, params, b), &sig, n).ok_or(Error::SingularSigmaB(b))
        })
        .collect()
}

pub fn het_loglik(y: &DataMatrix, params: &HetParams) -> Result<f64> {
    Ok(het_loglik_per_batch(y, params)?.iter().sum())
}

/// Gradient of the log-likelihood in `(σ̃, l₁₁, l₂₁, l₂₂)` where
/// `Σ₀ = L Lᵀ` with `L` the lower Cholesky factor.
pub fn het_grad_sigma(y: &DataMatrix, params: &HetParams) -> Result<[f64; 4]> {
    check_dims(y, params)?;
    let scat: Vec<Mat2> = (0..y.n_batches()).map(|b| batch_scatter(y, params, b)).collect();
    let l = params.sigma0.cholesky_lower();
    let (_, g) =
        sigma_objective(&scat, &params.psi, y.n_freq() as f64, params.sigma_tilde, &l).ok_or(Error::SingularSigma)?;
    Ok(g)
}

/// Log-likelihood and its gradient in `(σ̃, l₁₁, l₂₁, l₂₂)` given per-batch
/// residual scatters.
fn sigma_objective(scat: &[Mat2], psi: &[C64], n: f64, sigma_tilde: f64, l: &Mat2) -> Option<(f64, [f64; 4])> {
    let sigma0 = l * l.transpose();
    let mut ll = 0.0;
    let mut g_total = Mat2::zeros();
    let mut d_st = 0.0;
    for (s, &p) in scat.iter().zip(psi) {
        let v = phase_dir(p);
        let sig = sigma0 + v * v.transpose() * (sigma_tilde * sigma_tilde);
        let det = sig.determinant();
        if !(det > 0.0) || !(sig[(0, 0)] > 0.0) {
            return None;
        }
        let pm = sig.try_inverse()?;
        ll += -0.5 * (pm * s).trace() - 0.5 * n * det.ln() - n * LN_2PI;
        let gb = (pm * s * pm - pm * n) * 0.5;
        d_st += 2.0 * sigma_tilde * (v.transpose() * gb * v)[(0, 0)];
        g_total += gb;
    }
    let gl = g_total * l * 2.0;
    Some((ll, [d_st, gl[(0, 0)], gl[(1, 0)], gl[(1, 1)]]))
}

/// Per-batch `φ_b` given `κ̆ = κ + c`, `ψ` and per-batch precisions.
fn phi_gls(y: &DataMatrix, psi: &[C64], kb: &[C64], prec: &[Mat2]) -> Result<Vec<C64>> {
    let ms: Vec<Mat2> = kb.iter().map(|&k| mat_of(k)).collect();
    (0..y.n_batches())
        .map(|b| {
            let p = &prec[b];
            let mut k = Mat2::zeros();
            let mut rhs = Vec2::zeros();
            for (m, v) in ms.iter().zip(y.row(b)) {
                let q = m.transpose() * p;
                k += q * m;
                rhs += q * vec_of(v - psi[b]);
            }
            let ki = k.try_inverse().ok_or(Error::ZeroDirection)?;
            Ok(comp_of(&(ki * rhs)))
        })
        .collect()
}

/// `κ̆_ν` given `φ`, `ψ` and per-batch precisions.
fn kappa_gls(y: &DataMatrix, psi: &[C64], phi: &[C64], prec: &[Mat2]) -> Result<Vec<C64>> {
    let mut k = Mat2::zeros();
    let qs: Vec<Mat2> = phi
        .iter()
        .zip(prec)
        .map(|(&f, p)| {
            let m = mat_of(f);
            let q = m.transpose() * p;
            k += q * m;
            q
        })
        .collect();
    let ki = k.try_inverse().ok_or(Error::ZeroDirection)?;
    let mut rhs = vec![Vec2::zeros(); y.n_freq()];
    for b in 0..y.n_batches() {
        for (acc, v) in rhs.iter_mut().zip(y.row(b)) {
            *acc += qs[b] * vec_of(v - psi[b]);
        }
    }
    Ok(rhs.iter().map(|r| comp_of(&(ki * r))).collect())
}

/// Splits `κ̆` into a unit-norm mean-zero `κ` and a mean `c`, moving the
/// scale into `φ`.
fn decompose(kb: &[C64], phi: &mut [C64]) -> (Vec<C64>, C64) {
    let m: C64 = kb.iter().sum::<C64>() / kb.len() as f64;
    let mut kappa: Vec<C64> = kb.iter().map(|k| k - m).collect();
    let r = norm(&kappa);
    if r > 0.0 {
        kappa.iter_mut().for_each(|k| *k /= r);
        phi.iter_mut().for_each(|f| *f *= r);
        (kappa, m / r)
    } else {
        (kappa, m)
    }
}

/// Sufficient statistics of batch `b` for the `ψ_b` update: with
/// `a_ν = Y_{b,ν} − φ_b κ̆_ν`, returns `(Σ a aᵀ, mean a)`.
fn psi_stats(y: &DataMatrix, b: usize, phi: C64, kb: &[C64]) -> (Mat2, Vec2) {
    let mut a2 = Mat2::zeros();
    let mut a1 = Vec2::zeros();
    for (v, k) in y.row(b).iter().zip(kb) {
        let a = vec_of(v - phi * k);
        a2 += a * a.transpose();
        a1 += a;
    }
    (a2, a1 / kb.len() as f64)
}

fn psi_batch_ll(a2: &Mat2, abar: &Vec2, n: f64, sigma0: &Mat2, st: f64, psi: C64) -> f64 {
    let p = vec_of(psi);
    let cross = abar * p.transpose();
    let s = a2 - (cross + cross.transpose()) * n + p * p.transpose() * n;
    gauss_ll(&s, &sigma_b_raw(sigma0, st, psi), n).unwrap_or(f64::NEG_INFINITY)
}

/// Initial `(σ̃, Σ₀)` by least squares of per-batch residual covariances
/// on `vec(iψ_b)vec(iψ_b)ᵀ` with a matrix intercept.
fn regression_init(s: &[Mat2], psi: &[C64]) -> (f64, Mat2) {
    let nb = s.len() as f64;
    let psi_m: Vec<Mat2> = psi
        .iter()
        .map(|&p| {
            let v = phase_dir(p);
            v * v.transpose()
        })
        .collect();
    let idx = [(0, 0), (0, 1), (1, 1)];
    let sbar = s.iter().fold(Mat2::zeros(), |a, m| a + m) / nb;
    let pbar = psi_m.iter().fold(Mat2::zeros(), |a, m| a + m) / nb;
    let (mut num, mut den) = (0.0, 0.0);
    for (sm, pm) in s.iter().zip(&psi_m) {
        for &(i, j) in &idx {
            let dp = pm[(i, j)] - pbar[(i, j)];
            num += (sm[(i, j)] - sbar[(i, j)]) * dp;
            den += dp * dp;
        }
    }
    let mut slope = if den > 0.0 { num / den } else { 0.0 };
    if !(slope >= 0.0) {
        log::warn!("negative initial phase-noise variance {slope:e} clamped to 0");
        slope = 0.0;
    }
    (slope.sqrt(), sbar - pbar * slope)
}

/// Lifts eigenvalues of a symmetric matrix to at least `floor`.
fn clamp_eigen(m: &Mat2, floor: f64) -> Mat2 {
    let e = nalgebra::SymmetricEigen::new(*m);
    let d = e.eigenvalues.map(|l| l.max(floor));
    e.eigenvectors * Mat2::from_diagonal(&d) * e.eigenvectors.transpose()
}

fn lower_cholesky(m: &Mat2) -> Mat2 {
    let l11 = m[(0, 0)].sqrt();
    let l21 = m[(1, 0)] / l11;
    let l22 = (m[(1, 1)] - l21 * l21).max(0.0).sqrt();
    Mat2::new(l11, 0.0, l21, l22)
}

fn to_spd(m: &Mat2, delta: f64) -> Result<Spd2> {
    Spd2::new(*m).or_else(|_| {
        let floor = (1e-13 * m.trace()).max(delta);
        Spd2::new(clamp_eigen(m, floor)).map_err(|_| Error::SingularSigma)
    })
}

/// Algorithm: homoscedastic start, regression initialization of
/// `(σ̃, Σ₀)`, then sweeps of
/// `(σ̃, Σ₀)` bounded quasi-Newton → `φ` GLS → `κ̆` GLS → renormalize →
/// per-batch `ψ` simplex → (from `start_c_opt`) `Δ_c` simplex.
/// Convergence is tested after each complete sweep.
pub fn fit_het(y: &DataMatrix, opts: &HetOptions) -> Result<HetFitReport> {
    let hom = fit_hom(y, &opts.hom)?;
    let (bn, n1) = (y.n_batches(), y.n_freq());
    let n = n1 as f64;
    let hp = hom.params;
    let mut psi = hp.psi.clone();
    let mut phi = hp.phi.clone();
    let mut kappa = hp.kappa.clone();
    let mut c = C64::new(0.0, 0.0);

    let data_scale = (y.centered().1.norm_sqr() / (bn * n1) as f64)
        .sqrt()
        .max(f64::MIN_POSITIVE);

    let scat_of = |psi: &[C64], phi: &[C64], kappa: &[C64], c: C64| -> Vec<Mat2> {
        (0..bn)
            .map(|b| {
                let mut s = Mat2::zeros();
                for (nu, v) in y.row(b).iter().enumerate() {
                    let r = vec_of(v - psi[b] - phi[b] * (kappa[nu] + c));
                    s += r * r.transpose();
                }
                s
            })
            .collect()
    };

    let s_init: Vec<Mat2> = scat_of(&psi, &phi, &kappa, c).into_iter().map(|s| s / n).collect();
    let (st_reg, s0_reg) = regression_init(&s_init, &psi);
    let floor = (1e-6 * hp.sigma.trace()).max(opts.delta);
    let mut sigma0 = clamp_eigen(&s0_reg, floor);
    let psi_rms = (psi.iter().map(|p| p.norm_sqr()).sum::<f64>() / bn as f64).sqrt();
    let s_l = (sigma0.trace() / 2.0).sqrt();
    let s_st = if psi_rms > 0.0 { s_l / psi_rms } else { 1.0 };
    let mut sigma_tilde = match opts.fix_sigma_tilde {
        Some(v) => v.abs(),
        // Zero is a stationary point in σ̃; start slightly inside.
        None if st_reg == 0.0 => 1e-3 * s_st,
        None => st_reg,
    };

    let sqrt_delta = opts.delta.sqrt();
    let norm_ll = (bn * n1) as f64;
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut n_iter = 0;
    while n_iter < opts.maxiter.max(1) {
        let k = n_iter;
        n_iter += 1;

        // (σ̃, Σ₀)
        let scat = scat_of(&psi, &phi, &kappa, c);
        let l0 = lower_cholesky(&sigma0);
        let z0 = [sigma_tilde / s_st, l0[(0, 0)] / s_l, l0[(1, 0)] / s_l, l0[(1, 1)] / s_l];
        let (lo_st, hi_st) = match opts.fix_sigma_tilde {
            Some(_) => (z0[0], z0[0]),
            None => (0.0, f64::INFINITY),
        };
        let lower = [lo_st, sqrt_delta / s_l, f64::NEG_INFINITY, sqrt_delta / s_l];
        let upper = [hi_st, f64::INFINITY, f64::INFINITY, f64::INFINITY];
        let m = lbfgsb(
            |z: &[f64]| {
                let l = Mat2::new(z[1] * s_l, 0.0, z[2] * s_l, z[3] * s_l);
                match sigma_objective(&scat, &psi, n, z[0] * s_st, &l) {
                    Some((ll, g)) => (
                        -ll / norm_ll,
                        vec![
                            -g[0] * s_st / norm_ll,
                            -g[1] * s_l / norm_ll,
                            -g[2] * s_l / norm_ll,
                            -g[3] * s_l / norm_ll,
                        ],
                    ),
                    None => (f64::INFINITY, vec![0.0; 4]),
                }
            },
            &z0,
            &lower,
            &upper,
            LbfgsbOptions::default(),
        );
        sigma_tilde = m.x[0] * s_st;
        let l = Mat2::new(m.x[1] * s_l, 0.0, m.x[2] * s_l, m.x[3] * s_l);
        sigma0 = l * l.transpose();

        // φ, κ̆, renormalize
        let prec: Vec<Mat2> = psi
            .iter()
            .map(|&p| {
                sigma_b_raw(&sigma0, sigma_tilde, p)
                    .try_inverse()
                    .ok_or(Error::SingularSigmaB(0))
            })
            .collect::<Result<_>>()?;
        let kb: Vec<C64> = kappa.iter().map(|k| k + c).collect();
        phi = phi_gls(y, &psi, &kb, &prec)?;
        let kb = kappa_gls(y, &psi, &phi, &prec)?;
        let (kn, cn) = decompose(&kb, &mut phi);
        kappa = kn;
        c = cn;

        // ψ per batch
        let kb: Vec<C64> = kappa.iter().map(|k| k + c).collect();
        for b in 0..bn {
            let (a2, abar) = psi_stats(y, b, phi[b], &kb);
            let sig = sigma_b_raw(&sigma0, sigma_tilde, psi[b]);
            let step = (sig.trace() / n).sqrt().max(1e-8 * data_scale);
            let res = nelder_mead(
                |x: &[f64]| -psi_batch_ll(&a2, &abar, n, &sigma0, sigma_tilde, C64::new(x[0], x[1])),
                &[psi[b].re, psi[b].im],
                &[step, step],
                NelderMeadOptions {
                    max_evals: 200,
                    xtol: 1e-8 * data_scale,
                },
            );
            psi[b] = C64::new(res.x[0], res.x[1]);
        }

        // Δ_c: residuals unchanged, only Σ_b moves with ψ.
        if k >= opts.start_c_opt && sigma_tilde > 0.0 {
            let scat = scat_of(&psi, &phi, &kappa, c);
            let ll_shift = |d: C64| -> f64 {
                scat.iter()
                    .enumerate()
                    .map(|(b, s)| {
                        gauss_ll(s, &sigma_b_raw(&sigma0, sigma_tilde, psi[b] - d * phi[b]), n)
                            .unwrap_or(f64::NEG_INFINITY)
                    })
                    .sum()
            };
            let phi_rms = (phi.iter().map(|p| p.norm_sqr()).sum::<f64>() / bn as f64).sqrt();
            let step = if phi_rms > 0.0 {
                0.05 * psi_rms.max(data_scale) / phi_rms
            } else {
                1.0
            };
            let res = nelder_mead(
                |x: &[f64]| -ll_shift(C64::new(x[0], x[1])),
                &[0.0, 0.0],
                &[step, step],
                NelderMeadOptions {
                    max_evals: 200,
                    xtol: 1e-8 * step,
                },
            );
            let d = C64::new(res.x[0], res.x[1]);
            for (p, f) in psi.iter_mut().zip(&phi) {
                *p -= d * f;
            }
            c += d;
        }

        let scat = scat_of(&psi, &phi, &kappa, c);
        let l = (0..bn)
            .map(|b| gauss_ll(&scat[b], &sigma_b_raw(&sigma0, sigma_tilde, psi[b]), n))
            .sum::<Option<f64>>()
            .filter(|v| v.is_finite())
            .ok_or_else(|| {
                Error::OptimizerFailure(format!(
                    "non-finite log-likelihood at iteration {n_iter} (σ̃ = {sigma_tilde:e})"
                ))
            })?;
        let gain = trace.last().map(|prev| l - prev);
        trace.push(l);
        if let Some(g) = gain {
            if g < opts.min_delta_loglik {
                converged = true;
                break;
            }
        }
    }

    let (l1, l2) = sym_eigenvalues(&sigma0);
    let boundary_warning = l2 < opts.delta;
    if boundary_warning {
        log::warn!("Σ₀ eigenvalue {l2:e} below guard {:e}", opts.delta);
    }
    log::debug!("het fit: {n_iter} iterations, Σ₀ eigenvalues ({l1:e}, {l2:e})");
    Ok(HetFitReport {
        params: HetParams {
            psi,
            phi,
            kappa,
            c,
            sigma_tilde,
            sigma0: to_spd(&sigma0, opts.delta)?,
        },
        loglik_trace: trace,
        n_iter,
        converged,
        boundary_warning,
    })
}

/// `ψ₁` and the batch-1 direction used by the divergent sequence.
fn boundary_setup(y: &DataMatrix) -> Result<(C64, Vec<C64>)> {
    if y.n_batches() == 0 || y.n_freq() == 0 {
        return Err(Error::EmptyData);
    }
    if y.values().iter().all(|v| *v == C64::new(0.0, 0.0)) {
        return Err(Error::DegenerateFirstBatch("Y = 0".into()));
    }
    let row = y.row(0);
    let psi1 = row.iter().sum::<C64>() / row.len() as f64;
    if psi1.norm() == 0.0 {
        return Err(Error::DegenerateFirstBatch("first-batch row sum is zero".into()));
    }
    let centered = row.iter().map(|v| v - psi1).collect();
    Ok((psi1, centered))
}

/// Log-likelihood of the divergent sequence at `k = 10^log10_k`.
fn boundary_ll_log10(psi1: C64, d1: &[C64], y: &DataMatrix, log10_k: f64) -> f64 {
    let n = y.n_freq() as f64;
    let ln_k = log10_k * std::f64::consts::LN_10;
    let a2 = psi1.norm_sqr();
    let first = 0.5 * n * (ln_k - (2.0 * a2 * a2).ln()) - n * LN_2PI;
    // √(1 − 1/k), accurate for k near 1.
    let s = (-(-ln_k).exp_m1()).sqrt();
    let i = C64::new(0.0, 1.0);
    let rest: f64 = (1..y.n_batches())
        .map(|b| {
            let rr: f64 = y
                .row(b)
                .iter()
                .zip(d1)
                .map(|(v, d)| (v + i * s * psi1 + i * d).norm_sqr())
                .sum();
            -0.5 * rr / a2 - n * a2.ln() - n * LN_2PI
        })
        .sum();
    first + rest
}

/// Log-likelihood of the explicit parameter sequence with
/// `Σ₀⁽ᵏ⁾ = |ψ₁|² diag(1/k, 1)` in the `(ψ₁, iψ₁)` frame, `σ̃ = 1`, batch 1
/// fitted exactly and `Σ_b = |ψ₁|² I` for the other batches.
pub fn boundary_sequence_loglik(y: &DataMatrix, k: f64) -> Result<f64> {
    if !(k >= 1.0) {
        return Err(Error::Precondition(format!("k must be >= 1, got {k}")));
    }
    let (psi1, d1) = boundary_setup(y)?;
    Ok(boundary_ll_log10(psi1, &d1, y, k.log10()))
}

/// Where the divergent sequence first reaches a given log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryKstar {
    pub log10_k: f64,
    /// `log10(|ψ₁|²/k*)`: the smallest eigenvalue of `Σ₀⁽ᵏ*⁾`.
    pub log10_min_eigenvalue: f64,
}

/// Smallest `k* ≥ 1` with sequence log-likelihood `≥ loglik_fit`, reported
/// on a log10 scale since it can exceed the `f64` range.
pub fn boundary_kstar(loglik_fit: f64, y: &DataMatrix) -> Result<BoundaryKstar> {
    let (psi1, d1) = boundary_setup(y)?;
    let f = |l: f64| boundary_ll_log10(psi1, &d1, y, l) - loglik_fit;
    let out = |l: f64| BoundaryKstar {
        log10_k: l,
        log10_min_eigenvalue: psi1.norm_sqr().log10() - l,
    };
    if f(0.0) >= 0.0 {
        return Ok(out(0.0));
    }
    // Below 10^17 the other batches still depend on k; scan then bisect.
    const SCAN_END: f64 = 17.0;
    let mut prev = 0.0;
    let steps = 1700;
    for i in 1..=steps {
        let l = SCAN_END * i as f64 / steps as f64;
        if f(l) >= 0.0 {
            let (mut a, mut b) = (prev, l);
            for _ in 0..100 {
                let m = 0.5 * (a + b);
                if f(m) >= 0.0 {
                    b = m;
                } else {
                    a = m;
                }
            }
            return Ok(out(b));
        }
        prev = l;
    }
    // Beyond the scan the sequence is affine in log10 k with slope
    // (N+1)/2 · ln 10.
    let slope = 0.5 * y.n_freq() as f64 * std::f64::consts::LN_10;
    let f_end = f(SCAN_END);
    Ok(out(SCAN_END - f_end / slope))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationCheck {
    /// `min_b vec(ψ_b/|ψ_b|)ᵀ Σ₀ vec(ψ_b/|ψ_b|)`.
    pub min_marginal: f64,
    /// `max_b |ψ_b|² σ̃⁴ / 2`.
    pub max_quadratic: f64,
    /// `min_marginal / max_quadratic`, infinite when the latter is 0.
    pub ratio: f64,
}

pub fn truncation_check(params: &HetParams) -> TruncationCheck {
    let s0 = params.sigma0.matrix();
    let min_marginal = params
        .psi
        .iter()
        .filter(|p| p.norm() > 0.0)
        .map(|p| {
            let u = vec_of(p / p.norm());
            (u.transpose() * s0 * u)[(0, 0)]
        })
        .fold(f64::INFINITY, f64::min);
    let st4 = params.sigma_tilde.powi(4);
    let max_quadratic = params.psi.iter().map(|p| p.norm_sqr() * st4 / 2.0).fold(0.0, f64::max);
    let ratio = if max_quadratic > 0.0 {
        min_marginal / max_quadratic
    } else {
        f64::INFINITY
    };
    TruncationCheck {
        min_marginal,
        max_quadratic,
        ratio,
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::hom::{hom_loglik, HomParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn rand_spd(rng: &mut impl Rng) -> Spd2 {
        let a = rng.gen_range(0.3..2.0);
        let d = rng.gen_range(0.3..2.0);
        let b = rng.gen_range(-0.2..0.2);
        Spd2::from_entries(a, b, d).unwrap()
    }

    pub(crate) fn unit_mean_zero(rng: &mut impl Rng, n: usize) -> Vec<C64> {
        let v: Vec<C64> = (0..n)
            .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let m: C64 = v.iter().sum::<C64>() / n as f64;
        let v: Vec<C64> = v.iter().map(|z| z - m).collect();
        let r = norm(&v);
        v.iter().map(|z| z / r).collect()
    }

    /// Draws data from the model with the given parameters.
    pub(crate) fn simulate(rng: &mut impl Rng, p: &HetParams) -> DataMatrix {
        let (bn, n1) = (p.psi.len(), p.kappa.len());
        let mut vals = Vec::with_capacity(bn * n1);
        for b in 0..bn {
            let l = sigma_b(p, b).unwrap().cholesky_lower();
            for nu in 0..n1 {
                let z = Vec2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
                let e = l * z;
                vals.push(p.fitted(b, nu) + c(e[0], e[1]));
            }
        }
        DataMatrix::new(vals, bn, n1).unwrap()
    }

    fn rand_params(rng: &mut impl Rng, bn: usize, n1: usize, st: f64) -> HetParams {
        HetParams {
            psi: (0..bn)
                .map(|_| c(rng.gen_range(1.0..4.0), rng.gen_range(-4.0..4.0)))
                .collect(),
            phi: (0..bn)
                .map(|_| c(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
                .collect(),
            kappa: unit_mean_zero(rng, n1),
            c: c(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)),
            sigma_tilde: st,
            sigma0: rand_spd(rng),
        }
    }

    #[test]
    fn sigma_b_examples() {
        let mut p = HetParams {
            psi: vec![c(1.0, 0.0), c(0.0, 2.0)],
            phi: vec![c(1.0, 0.0); 2],
            kappa: vec![c(1.0, 0.0)],
            c: c(0.0, 0.0),
            sigma_tilde: 0.0,
            sigma0: Spd2::from_entries(2.0, 0.1, 1.0).unwrap(),
        };
        assert_eq!(sigma_b(&p, 0).unwrap(), p.sigma0);
        p.sigma_tilde = 0.5;
        let s = sigma_b(&p, 0).unwrap();
        let d = s.matrix() - p.sigma0.matrix();
        assert!((d - Mat2::new(0.0, 0.0, 0.0, 0.25)).abs().max() < 1e-15);
        // Correction for ψ = 2i lies along vec(i·2i) = (−2, 0).
        let d = sigma_b(&p, 1).unwrap().matrix() - p.sigma0.matrix();
        assert!((d - Mat2::new(1.0, 0.0, 0.0, 0.0)).abs().max() < 1e-15);
        // The correction annihilates vec(ψ_b).
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for _ in 0..20 {
            p.psi[0] = c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let d = sigma_b(&p, 0).unwrap().matrix() - p.sigma0.matrix();
            assert!((d * vec_of(p.psi[0])).norm() < 1e-13);
        }
        assert_eq!(sigma_b(&p, 5), Err(Error::IndexOutOfRange { index: 5, len: 2 }));
    }

    #[test]
    fn zero_residual_identity_covariance_constant() {
        let p = HetParams {
            psi: vec![c(1.0, 1.0), c(-1.0, 2.0)],
            phi: vec![c(1.0, 0.0), c(0.0, 1.0)],
            kappa: vec![c(0.5, 0.0), c(-0.5, 0.0), c(0.0, 0.5)],
            c: c(0.1, 0.0),
            sigma_tilde: 0.0,
            sigma0: Spd2::identity(),
        };
        let vals: Vec<C64> = (0..2)
            .flat_map(|b| (0..3).map(move |nu| (b, nu)))
            .map(|(b, nu)| p.fitted(b, nu))
            .collect();
        let y = DataMatrix::new(vals, 2, 3).unwrap();
        let want = -(2.0 * 3.0) * (2.0 * std::f64::consts::PI).ln();
        assert!((het_loglik(&y, &p).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn nesting_with_homoscedastic_loglik() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let p = rand_params(&mut rng, 6, 5, 0.0);
        let y = simulate(&mut rng, &p);
        // With c folded into ψ, ψ_b + φ_b c is the row mean of the fit.
        let hp = HomParams {
            psi: p.psi.iter().zip(&p.phi).map(|(s, f)| s + f * p.c).collect(),
            phi: p.phi.clone(),
            kappa: p.kappa.clone(),
            sigma: p.sigma0,
        };
        // Shift each row so its mean matches the fitted row mean; then raw
        // and centered residuals coincide.
        let mut vals = Vec::new();
        for b in 0..6 {
            let rm: C64 = y.row(b).iter().sum::<C64>() / 5.0;
            for nu in 0..5 {
                vals.push(y.get(b, nu) - rm + hp.psi[b]);
            }
        }
        let y2 = DataMatrix::new(vals, 6, 5).unwrap();
        let a = het_loglik(&y2, &p).unwrap();
        let b = hom_loglik(&y2.centered().1, &hp).unwrap();
        assert!((a - b).abs() < 1e-9 * a.abs(), "{a} vs {b}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let st = rng.gen_range(0.0..0.3);
            let p = rand_params(&mut rng, 5, 6, st);
            let y = simulate(&mut rng, &p);
            let g = het_grad_sigma(&y, &p).unwrap();
            let l = p.sigma0.cholesky_lower();
            let theta = [st, l[(0, 0)], l[(1, 0)], l[(1, 1)]];
            let eval = |t: &[f64; 4]| {
                let lm = Mat2::new(t[1], 0.0, t[2], t[3]);
                let q = HetParams {
                    sigma_tilde: t[0],
                    sigma0: Spd2::new(lm * lm.transpose()).unwrap(),
                    ..p.clone()
                };
                het_loglik(&y, &q).unwrap()
            };
            let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            for i in 0..4 {
                let h = 1e-6 * (1.0 + theta[i].abs());
                let (mut tp, mut tm) = (theta, theta);
                tp[i] += h;
                tm[i] -= h;
                let fd = (eval(&tp) - eval(&tm)) / (2.0 * h);
                worst = worst.max((fd - g[i]).abs() / gnorm.max(1.0));
            }
        }
        assert!(worst < 1e-5, "max relative error {worst:e}");
    }

    #[test]
    fn psi_update_separates_over_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let p = rand_params(&mut rng, 3, 6, 0.25);
        let y = simulate(&mut rng, &p);
        let kb: Vec<C64> = p.kappa.iter().map(|k| k + p.c).collect();
        let n = 6.0;
        let s0 = *p.sigma0.matrix();
        let opts = NelderMeadOptions {
            max_evals: 2000,
            xtol: 1e-10,
        };
        let mut sep = Vec::new();
        for b in 0..3 {
            let (a2, abar) = psi_stats(&y, b, p.phi[b], &kb);
            let r = nelder_mead(
                |x: &[f64]| -psi_batch_ll(&a2, &abar, n, &s0, 0.25, c(x[0], x[1])),
                &[p.psi[b].re, p.psi[b].im],
                &[0.3, 0.3],
                opts,
            );
            sep.extend(r.x);
        }
        let joint = nelder_mead(
            |x: &[f64]| {
                let q = HetParams {
                    psi: x.chunks(2).map(|v| c(v[0], v[1])).collect(),
                    ..p.clone()
                };
                -het_loglik(&y, &q).unwrap()
            },
            &sep.iter().map(|v| v + 0.05).collect::<Vec<_>>(),
            &[0.3; 6],
            NelderMeadOptions {
                max_evals: 20000,
                xtol: 1e-10,
            },
        );
        for (a, b) in sep.iter().zip(&joint.x) {
            assert!((a - b).abs() < 1e-5, "{sep:?} vs {:?}", joint.x);
        }
    }

    #[test]
    fn truncation_hand_instance() {
        let p = HetParams {
            psi: vec![c(2.0, 0.0)],
            phi: vec![c(1.0, 0.0)],
            kappa: vec![c(1.0, 0.0)],
            c: c(0.0, 0.0),
            sigma_tilde: 1.0,
            sigma0: Spd2::identity(),
        };
        let t = truncation_check(&p);
        assert_eq!((t.min_marginal, t.max_quadratic), (1.0, 2.0));
        let q = HetParams { sigma_tilde: 0.0, ..p };
        assert_eq!(truncation_check(&q).max_quadratic, 0.0);
    }

    #[test]
    fn boundary_sequence_first_batch_term() {
        let psi1 = c(1.5, -0.5);
        let row = vec![c(2.0, 0.0), c(1.0, -1.0), c(1.5, -0.5)];
        let y = DataMatrix::from_rows(&[row]).unwrap();
        assert!((y.row(0).iter().sum::<C64>() / 3.0 - psi1).norm() < 1e-15);
        let k = 2.0 * psi1.norm_sqr().powi(2);
        let want = -3.0 * (2.0 * std::f64::consts::PI).ln();
        assert!((boundary_sequence_loglik(&y, k).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn boundary_sequence_matches_direct_loglik() {
        let mut rng = ChaCha8Rng::seed_from_u64(65);
        let p = rand_params(&mut rng, 4, 5, 0.1);
        let y = simulate(&mut rng, &p);
        let k: f64 = 37.0;
        let row = y.row(0);
        let psi1 = row.iter().sum::<C64>() / 5.0;
        let d: Vec<C64> = row.iter().map(|v| v - psi1).collect();
        let r = norm(&d);
        let i = c(0.0, 1.0);
        let s = (1.0 - 1.0 / k).sqrt();
        let u = vec_of(psi1);
        let w = vec_of(i * psi1);
        let params = HetParams {
            psi: (0..4).map(|b| if b == 0 { psi1 } else { -i * s * psi1 }).collect(),
            phi: (0..4).map(|b| if b == 0 { c(r, 0.0) } else { -i * r }).collect(),
            kappa: d.iter().map(|v| v / r).collect(),
            c: c(0.0, 0.0),
            sigma_tilde: 1.0,
            sigma0: Spd2::new(u * u.transpose() / k + w * w.transpose()).unwrap(),
        };
        let direct = het_loglik(&y, &params).unwrap();
        let seq = boundary_sequence_loglik(&y, k).unwrap();
        assert!((direct - seq).abs() < 1e-9 * direct.abs(), "{direct} vs {seq}");
    }

    #[test]
    fn boundary_sequence_diverges_like_log_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        let p = rand_params(&mut rng, 5, 8, 0.1);
        let y = simulate(&mut rng, &p);
        let a = boundary_sequence_loglik(&y, 1e2).unwrap();
        let b = boundary_sequence_loglik(&y, 1e6).unwrap();
        let want = 4.0 * 1e4f64.ln();
        // Other batches shift slightly through ψ_b⁽ᵏ⁾; batch 1 alone is exact.
        assert!(((b - a) - want).abs() < 0.05 * want, "{} vs {want}", b - a);
        let y1 = DataMatrix::from_rows(&[y.row(0).to_vec()]).unwrap();
        let d1 = boundary_sequence_loglik(&y1, 1e6).unwrap() - boundary_sequence_loglik(&y1, 1e2).unwrap();
        assert!((d1 - want).abs() < 1e-10 * want);
        let ks = boundary_kstar(b, &y).unwrap();
        assert!((ks.log10_k - 6.0).abs() < 1e-6, "{ks:?}");
        let big = boundary_ll_log10(
            y.row(0).iter().sum::<C64>() / 8.0,
            &y.row(0)
                .iter()
                .map(|v| v - y.row(0).iter().sum::<C64>() / 8.0)
                .collect::<Vec<_>>(),
            &y,
            250.0,
        );
        let ks = boundary_kstar(big, &y).unwrap();
        assert!((ks.log10_k - 250.0).abs() < 1e-6, "{ks:?}");
    }

    #[test]
    fn boundary_requires_nonzero_first_batch_mean() {
        let y = DataMatrix::from_rows(&[vec![c(1.0, 0.0), c(-1.0, 0.0)]]).unwrap();
        assert!(matches!(
            boundary_sequence_loglik(&y, 2.0),
            Err(Error::DegenerateFirstBatch(_))
        ));
        let z = DataMatrix::from_rows(&[vec![c(0.0, 0.0); 2]]).unwrap();
        assert!(matches!(boundary_kstar(0.0, &z), Err(Error::DegenerateFirstBatch(_))));
    }

    #[test]
    fn delta_c_shift_leaves_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let p = rand_params(&mut rng, 3, 4, 0.2);
        let d = c(0.3, -0.2);
        let q = HetParams {
            psi: p.psi.iter().zip(&p.phi).map(|(s, f)| s - d * f).collect(),
            c: p.c + d,
            ..p.clone()
        };
        for b in 0..3 {
            for nu in 0..4 {
                assert!((p.fitted(b, nu) - q.fitted(b, nu)).norm() < 1e-13);
            }
            assert_ne!(sigma_b(&p, b).unwrap(), sigma_b(&q, b).unwrap());
        }
    }

    #[test]
    fn fit_trace_monotone_and_nesting() {
        let mut rng = ChaCha8Rng::seed_from_u64(68);
        let mut p = rand_params(&mut rng, 40, 8, 0.0);
        p.psi.iter_mut().for_each(|v| *v *= 3.0);
        let y = simulate(&mut rng, &p);
        let hom = fit_hom(&y, &HomOptions::default()).unwrap();
        let het = fit_het(
            &y,
            &HetOptions {
                fix_sigma_tilde: Some(0.0),
                ..Default::default()
            },
        )
        .unwrap();
        assert!((het.loglik() - hom.loglik()).abs() < 1e-3);
        let free = fit_het(&y, &HetOptions::default()).unwrap();
        for w in free.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
        assert!(free.loglik() >= hom.loglik() - 1e-6);
        assert!(!free.boundary_warning);
    }

    #[test]
    fn fit_recovers_phase_noise_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(69);
        let mut p = rand_params(&mut rng, 150, 10, 0.15);
        p.psi = (0..150)
            .map(|_| C64::from_polar(rng.gen_range(4.0..8.0), rng.gen_range(0.0..std::f64::consts::TAU)))
            .collect();
        let y = simulate(&mut rng, &p);
        let fit = fit_het(&y, &HetOptions::default()).unwrap();
        let st = fit.params.sigma_tilde;
        assert!((st - 0.15).abs() < 0.3 * 0.15, "σ̃ = {st}");
        for w in fit.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
    }
}
