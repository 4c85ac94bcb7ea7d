//! Loss `ρ` on complex projective space, its Fréchet functions, the
//! Lipschitz prefactor, the sandwich covariance in the chart `β`, the
//! delta-method spectrum covariance, and the profile gradient in `P`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{bul_raw, dia_raw, mahal_inner_raw, norm, proj_distance, Mat2, ProjectivePoint, Spd2, Vec2, C64};
use crate::chart::{chart_pattern, Chart};
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::helmert::helmert_matrix;
use crate::phase::{dot, extract_spectrum, jacobian_g_unsigned};

fn check_len(want: usize, got: usize) -> Result<()> {
    if want != got {
        return Err(Error::DimensionMismatch { expected: want, got });
    }
    Ok(())
}

/// `ρ(Y, [κ]) = ⟨Y,Y⟩_P − (κ●_P Y)ᵀ (κ⋄_P κ)⁻¹ (κ●_P Y)`.
pub fn rho(y: &[C64], kappa: &ProjectivePoint, p: &Spd2) -> Result<f64> {
    check_len(kappa.dim(), y.len())?;
    Ok(rho_raw(y, kappa.rep(), p.matrix()))
}

fn rho_raw(y: &[C64], kappa: &[C64], p: &Mat2) -> f64 {
    let b = bul_raw(kappa, p, y);
    let k = dia_raw(kappa, p, kappa);
    let kinv = k.try_inverse().unwrap_or_else(Mat2::zeros);
    mahal_inner_raw(y, p, y) - (b.transpose() * kinv * b)[(0, 0)]
}

/// `φ̂(κ, P, Y) = comp((κ⋄_P κ)⁻¹ (κ●_P Y))`.
pub fn phi_hat(kappa: &[C64], p: &Mat2, y: &[C64]) -> C64 {
    let b = bul_raw(kappa, p, y);
    let k = dia_raw(kappa, p, kappa);
    let v = k.try_inverse().unwrap_or_else(Mat2::zeros) * b;
    C64::new(v[0], v[1])
}

/// `d_P(Y, φ̂κ)²` evaluated from the definition.
pub fn rho_direct(y: &[C64], kappa: &ProjectivePoint, p: &Spd2) -> Result<f64> {
    check_len(kappa.dim(), y.len())?;
    let f = phi_hat(kappa.rep(), p.matrix(), y);
    let r: Vec<C64> = y.iter().zip(kappa.rep()).map(|(v, k)| v - f * k).collect();
    Ok(mahal_inner_raw(&r, p.matrix(), &r))
}

/// Lipschitz prefactor `ρ̇(Y, P)` with respect to the projective distance.
pub fn rho_dot_bound(y: &[C64], p: &Spd2) -> Result<f64> {
    let (l1, l2) = p.eigenvalues();
    if !(l1 > l2) {
        return Err(Error::Precondition("precision must have distinct eigenvalues".into()));
    }
    let n = y.len() as f64;
    let q = (l1 * l1 + l2 * l2) / (l1 * l2);
    let s2 = std::f64::consts::SQRT_2;
    Ok(l1.sqrt() * q * ((l1 + 2.0) * (2.0 * n).sqrt() + 8.0 * s2 * n + 32.0 * s2 * n * q) * norm(y).powi(2))
}

/// Whether `|ρ(Y,[κ]) − ρ(Y,[κ'])| ≤ ρ̇(Y,P) d([κ],[κ'])` holds for all pairs.
pub fn check_lipschitz(y: &[C64], p: &Spd2, pairs: &[(ProjectivePoint, ProjectivePoint)]) -> Result<bool> {
    let bound = rho_dot_bound(y, p)?;
    for (a, b) in pairs {
        let lhs = (rho(y, a, p)? - rho(y, b, p)?).abs();
        if lhs > bound * proj_distance(a, b)? {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationF {
    /// Monte-Carlo mean of `ρ(ε, [κ])`.
    pub noise_part: f64,
    pub noise_se: f64,
    /// `2N − 2`.
    pub noise_closed_form: f64,
    /// Mean of `ρ(φκ⁰, [κ])` over the supplied `φ` samples.
    pub signal_part: f64,
    /// `(η̃² − η̃⁴/4) λ₂ mean|φ|²` with `η̃ = d([κ],[κ⁰])`.
    pub signal_lower_bound: f64,
}

const MC_CHUNK: usize = 1024;

/// Draws `n` complex vectors with i.i.d. `N(0, Σ)` entries from one seed.
fn gaussian_vectors(seed: u64, count: usize, n: usize, chol: &Mat2) -> Vec<Vec<C64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            (0..n)
                .map(|_| {
                    let z = Vec2::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
                    let e = chol * z;
                    C64::new(e[0], e[1])
                })
                .collect()
        })
        .collect()
}

/// Mean and standard error of `f(ε)` over `count` draws of `ε`, chunked with
/// per-chunk seeds `seed XOR chunk` and summed in chunk order.
pub(crate) fn mc_mean<F>(seed: u64, count: usize, n: usize, sigma: &Spd2, f: F) -> (f64, f64)
where
    F: Fn(&[C64]) -> f64 + Sync,
{
    let chol = sigma.cholesky_lower();
    let chunks = count.div_ceil(MC_CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let m = MC_CHUNK.min(count - c * MC_CHUNK);
            gaussian_vectors(seed ^ c as u64, m, n, &chol)
                .iter()
                .map(|e| f(e))
                .fold((0.0, 0.0), |(s, q), v| (s + v, q + v * v))
        })
        .collect();
    let (s, q) = sums.iter().fold((0.0, 0.0), |(a, b), (s, q)| (a + s, b + q));
    let m = count as f64;
    let mean = s / m;
    let var = ((q - m * mean * mean) / (m - 1.0)).max(0.0);
    (mean, (var / m).sqrt())
}

/// Splits the population Fréchet function at `[κ]` into its noise and
/// signal contributions.
pub fn population_f_decomposition(
    kappa: &ProjectivePoint,
    kappa0: &ProjectivePoint,
    p: &Spd2,
    phi_samples: &[C64],
    eps_mc: usize,
    seed: u64,
) -> Result<PopulationF> {
    let n = kappa.dim();
    check_len(n, kappa0.dim())?;
    if eps_mc < 2 {
        return Err(Error::TooFewSamples { min: 2, got: eps_mc });
    }
    if phi_samples.is_empty() {
        return Err(Error::EmptyData);
    }
    let sigma = p.inverse();
    let pm = *p.matrix();
    let (noise_part, noise_se) = mc_mean(seed, eps_mc, n, &sigma, |e| rho_raw(e, kappa.rep(), &pm));
    let signal_part = phi_samples
        .iter()
        .map(|f| {
            let y: Vec<C64> = kappa0.rep().iter().map(|k| f * k).collect();
            rho_raw(&y, kappa.rep(), &pm)
        })
        .sum::<f64>()
        / phi_samples.len() as f64;
    let eta = proj_distance(kappa, kappa0)?;
    let c_phi = phi_samples.iter().map(|f| f.norm_sqr()).sum::<f64>() / phi_samples.len() as f64;
    let (_, l2) = p.eigenvalues();
    Ok(PopulationF {
        noise_part,
        noise_se,
        noise_closed_form: 2.0 * n as f64 - 2.0,
        signal_part,
        signal_lower_bound: (eta * eta - eta.powi(4) / 4.0) * l2 * c_phi,
    })
}

/// Mean Hessian, gradient second moment and derived covariances of
/// `x ↦ ρ(Y_b, β⁻¹(x))` at `x = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichCov {
    pub h_hat: DMatrix<f64>,
    pub g_hat: DMatrix<f64>,
    /// `H⁻¹ G H⁻¹`.
    pub cov_beta: DMatrix<f64>,
    /// `J cov_beta Jᵀ / B` in Helmert coordinates.
    pub cov_i: DMatrix<f64>,
    pub n_batches: usize,
}

/// Gradient and Hessian of `x ↦ ρ(y, [κ(x)])` at `x = 0`, where
/// `κ(x) = κ + Σ x_i d_i` is affine in the chart coordinates.
fn rho_derivatives(y: &[C64], kappa: &[C64], d: &[Vec<C64>], p: &Mat2) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let m = d.len();
    let b = bul_raw(kappa, p, y);
    let k = dia_raw(kappa, p, kappa);
    let kinv = k.try_inverse().ok_or(Error::SingularHessian)?;
    let u = kinv * b;
    let mut grad = DVector::zeros(m);
    let mut w: Vec<Vec2> = Vec::with_capacity(m);
    for i in 0..m {
        let db = bul_raw(&d[i], p, y);
        let dk = dia_raw(&d[i], p, kappa) + dia_raw(kappa, p, &d[i]);
        grad[i] = -(2.0 * db.dot(&u) - (u.transpose() * dk * u)[(0, 0)]);
        w.push(db - dk * u);
    }
    let mut hess = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let kij = dia_raw(&d[i], p, &d[j]) + dia_raw(&d[j], p, &d[i]);
            let v = -2.0 * (w[j].transpose() * kinv * w[i])[(0, 0)] + (u.transpose() * kij * u)[(0, 0)];
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok((grad, hess))
}

/// Chart directions `d_i = R* A e_i`.
fn chart_directions(chart: &Chart) -> Vec<Vec<C64>> {
    let ra = chart.r().adjoint() * chart_pattern(chart.dim());
    (0..ra.ncols())
        .map(|c| ra.column(c).iter().copied().collect())
        .collect()
}

/// Per-batch gradients and Hessians of `ρ` in the chart anchored at `[κ̂]`.
pub fn chart_derivatives(
    yh: &DataMatrix,
    kappa_hat: &ProjectivePoint,
    p: &Spd2,
) -> Result<Vec<(DVector<f64>, DMatrix<f64>)>> {
    check_len(kappa_hat.dim(), yh.n_freq())?;
    let chart = Chart::new(kappa_hat)?;
    let d = chart_directions(&chart);
    let k0 = chart.inverse_unnormalized(&vec![0.0; d.len()])?;
    yh.rows().map(|row| rho_derivatives(row, &k0, &d, p.matrix())).collect()
}

/// Sandwich covariance for `β([κ̂])` and its delta-method push-forward to
/// the real spectrum. `yh` holds Helmertized, centered batches (`B × N`).
pub fn sandwich_covariance(yh: &DataMatrix, kappa_hat: &ProjectivePoint, p: &Spd2) -> Result<SandwichCov> {
    let bn = yh.n_batches();
    if bn == 0 {
        return Err(Error::EmptyData);
    }
    let per = chart_derivatives(yh, kappa_hat, p)?;
    let m = per[0].0.len();
    let mut h = DMatrix::zeros(m, m);
    let mut g = DMatrix::zeros(m, m);
    for (gr, he) in &per {
        h += he;
        g += gr * gr.transpose();
    }
    h /= bn as f64;
    g /= bn as f64;
    let chol = h.clone().cholesky().ok_or(Error::SingularHessian)?;
    let hinv = chol.inverse();
    let cov_beta = symmetrize(&hinv * &g * &hinv);
    let j = crate::phase::jacobian_g(kappa_hat.rep())?;
    let cov_i = symmetrize(&j * &cov_beta * j.transpose() / bn as f64);
    Ok(SandwichCov {
        h_hat: h,
        g_hat: g,
        cov_beta,
        cov_i,
        n_batches: bn,
    })
}

/// Delta-method covariance of the spectrum in the original `N+1`
/// frequency coordinates, for the direction `κ = Hᵀ κ_H`.
pub fn spectrum_covariance_full(cov: &SandwichCov, kappa_hat: &ProjectivePoint) -> Result<DMatrix<f64>> {
    let n = kappa_hat.dim();
    let h = helmert_matrix(n + 1)?;
    let full = h.apply_transpose(kappa_hat.rep())?;
    let spec = extract_spectrum(&full)?;
    let (j, base) = jacobian_g_unsigned(kappa_hat.rep())?;
    let ht = h.matrix().transpose();
    let jf = &ht * j;
    let base_full = &ht * DVector::from_vec(base);
    let s = if dot(base_full.as_slice(), &spec.i) < 0.0 {
        -1.0
    } else {
        1.0
    };
    let jf = jf * s;
    Ok(symmetrize(&jf * &cov.cov_beta * jf.transpose() / cov.n_batches as f64))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `∂F/∂P` at `([κ⁰], P⁰)` for the profile loss
/// `d_P(Y, φ̂κ)² − N log det P`, in the symmetric convention
/// (diagonal entries `∂/∂p₁₁`, `∂/∂p₂₂`; off-diagonal `∂/∂p₁₂`).
///
/// With `K = κ⁰⋄_{P⁰}κ⁰` and `X = κ̄⁰⋄_{K⁻¹}κ̄⁰` the value is `−(2X − diag X)`.
pub fn inconsistency_gradient(kappa0: &ProjectivePoint, p0: &Spd2) -> Result<Mat2> {
    let x = conj_dia_kinv(kappa0.rep(), p0.matrix())?;
    Ok(-(x * 2.0 - Mat2::from_diagonal(&x.diagonal())))
}

fn conj_dia_kinv(kappa: &[C64], p: &Mat2) -> Result<Mat2> {
    let k = dia_raw(kappa, p, kappa);
    let kinv = k.try_inverse().ok_or(Error::ZeroDirection)?;
    let kb: Vec<C64> = kappa.iter().map(|z| z.conj()).collect();
    Ok(dia_raw(&kb, &kinv, &kb))
}

/// Closed-form expected profile loss at `[κ⁰]` under noise `Σ⁰`:
/// `N tr(Σ⁰P) − tr((κ⋄_P κ)⁻¹ (κ⋄_{PΣ⁰P} κ)) − N log det P`.
pub fn profile_f_closed_form(kappa0: &ProjectivePoint, p: &Mat2, sigma0: &Spd2) -> Result<f64> {
    let n = kappa0.dim() as f64;
    let s = sigma0.matrix();
    let k = dia_raw(kappa0.rep(), p, kappa0.rep());
    let kinv = k.try_inverse().ok_or(Error::ZeroDirection)?;
    let psp = p * s * p;
    let k2 = dia_raw(kappa0.rep(), &psp, kappa0.rep());
    let det = p.determinant();
    if !(det > 0.0) {
        return Err(Error::NotSpd("P".into()));
    }
    Ok(n * (s * p).trace() - (kinv * k2).trace() - n * det.ln())
}

/// Monte-Carlo profile loss `E ρ(Y, ([κ⁰], P))` for `Y = φκ⁰ + ε`.
///
/// The signal contributes nothing at `[κ⁰]`, so only `ε` is sampled; the
/// same seed gives common random numbers across different `P`.
pub fn profile_f_mc(kappa0: &ProjectivePoint, p: &Mat2, sigma0: &Spd2, n_mc: usize, seed: u64) -> (f64, f64) {
    let n = kappa0.dim();
    let logdet = p.determinant().ln();
    let (m, se) = mc_mean(seed, n_mc, n, sigma0, |e| rho_raw(e, kappa0.rep(), p));
    (m - n as f64 * logdet, se)
}
