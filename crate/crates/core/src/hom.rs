//! Homoscedastic drift model `Y_{b,ν} = ψ_b + φ_b κ_ν + ε_{b,ν}` with
//! `ε ~ N(0, Σ)` i.i.d. over batches and frequencies.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::algebra::{comp_of, mat_of, norm, vec_of, Mat2, Spd2, Vec2, C64};
use crate::data::DataMatrix;
use crate::error::{Error, Result};

const TWO_PI: f64 = std::f64::consts::TAU;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomParams {
    pub psi: Vec<C64>,
    pub phi: Vec<C64>,
    pub kappa: Vec<C64>,
    pub sigma: Spd2,
}

impl HomParams {
    /// Fitted values `ψ_b + φ_b κ_ν`.
    pub fn fitted(&self, b: usize, nu: usize) -> C64 {
        self.psi[b] + self.phi[b] * self.kappa[nu]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: HomParams,
    pub loglik_trace: Vec<f64>,
    pub n_iter: usize,
    pub converged: bool,
}

impl FitReport {
    pub fn loglik(&self) -> f64 {
        self.loglik_trace.last().copied().unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomOptions {
    pub maxiter: usize,
    pub min_delta_loglik: f64,
    /// Known noise covariance; skips the `Σ` update.
    pub sigma_known: Option<Spd2>,
    /// Warm start `(φ, κ)` replacing the SVD initialization.
    pub init: Option<(Vec<C64>, Vec<C64>)>,
}

impl Default for HomOptions {
    fn default() -> Self {
        HomOptions {
            maxiter: 200,
            min_delta_loglik: 1e-4,
            sigma_known: None,
            init: None,
        }
    }
}

fn check_shapes(yc: &DataMatrix, phi_len: Option<usize>, kappa_len: Option<usize>) -> Result<()> {
    if let Some(l) = phi_len {
        if l != yc.n_batches() {
            return Err(Error::DimensionMismatch {
                expected: yc.n_batches(),
                got: l,
            });
        }
    }
    if let Some(l) = kappa_len {
        if l != yc.n_freq() {
            return Err(Error::DimensionMismatch {
                expected: yc.n_freq(),
                got: l,
            });
        }
    }
    Ok(())
}

/// `Σ_{b,ν} r_{bν} r_{bν}ᵀ` for `r = vec(Ỹ_{bν} − φ_b κ_ν)`.
pub(crate) fn residual_scatter(phi: &[C64], kappa: &[C64], yc: &DataMatrix) -> Mat2 {
    let mut s = Mat2::zeros();
    for (b, row) in yc.rows().enumerate() {
        for (nu, y) in row.iter().enumerate() {
            let r = vec_of(y - phi[b] * kappa[nu]);
            s += r * r.transpose();
        }
    }
    s
}

/// Log-likelihood of centered data:
/// `−(B(N+1)/2) log((2π)² det Σ) − ½ Σ_b ‖Ỹ_b − φ_b κ‖²_P`.
pub fn hom_loglik(yc: &DataMatrix, params: &HomParams) -> Result<f64> {
    check_shapes(yc, Some(params.phi.len()), Some(params.kappa.len()))?;
    let det = params.sigma.det();
    if !(det > 0.0) {
        return Err(Error::SingularSigma);
    }
    let p = params.sigma.inverse();
    let s = residual_scatter(&params.phi, &params.kappa, yc);
    let m = (yc.n_batches() * yc.n_freq()) as f64;
    Ok(-0.5 * m * (TWO_PI * TWO_PI * det).ln() - 0.5 * (p.matrix() * s).trace())
}

/// Conditional MLE of `κ` given `φ` and `P = Σ⁻¹`.
pub fn kappa_mle(phi: &[C64], p: &Spd2, yc: &DataMatrix) -> Result<Vec<C64>> {
    check_shapes(yc, Some(phi.len()), None)?;
    if !(norm(phi) > 0.0) {
        return Err(Error::ZeroDirection);
    }
    let pm = p.matrix();
    let q: Vec<Mat2> = phi.iter().map(|&f| mat_of(f).transpose() * pm).collect();
    let k = q
        .iter()
        .zip(phi)
        .fold(Mat2::zeros(), |acc, (qb, &f)| acc + qb * mat_of(f));
    let kinv = k.try_inverse().ok_or(Error::ZeroDirection)?;
    let mut rhs = vec![Vec2::zeros(); yc.n_freq()];
    for (b, row) in yc.rows().enumerate() {
        for (acc, y) in rhs.iter_mut().zip(row) {
            *acc += q[b] * vec_of(*y);
        }
    }
    Ok(rhs.iter().map(|r| comp_of(&(kinv * r))).collect())
}

/// Conditional MLE of `φ` given `κ` and `P = Σ⁻¹`.
pub fn phi_mle(kappa: &[C64], p: &Spd2, yc: &DataMatrix) -> Result<Vec<C64>> {
    check_shapes(yc, None, Some(kappa.len()))?;
    if !(norm(kappa) > 0.0) {
        return Err(Error::ZeroDirection);
    }
    let pm = p.matrix();
    let q: Vec<Mat2> = kappa.iter().map(|&k| mat_of(k).transpose() * pm).collect();
    let k = q
        .iter()
        .zip(kappa)
        .fold(Mat2::zeros(), |acc, (qn, &kn)| acc + qn * mat_of(kn));
    let kinv = k.try_inverse().ok_or(Error::ZeroDirection)?;
    Ok(yc
        .rows()
        .map(|row| {
            let rhs = row
                .iter()
                .zip(&q)
                .fold(Vec2::zeros(), |acc, (y, qn)| acc + qn * vec_of(*y));
            comp_of(&(kinv * rhs))
        })
        .collect())
}

/// Residual second moment `(1/(B(N+1))) Σ r rᵀ`. May be singular for exact
/// fits, hence a plain matrix.
pub fn sigma_mle(phi: &[C64], kappa: &[C64], yc: &DataMatrix) -> Result<Mat2> {
    check_shapes(yc, Some(phi.len()), Some(kappa.len()))?;
    let m = (yc.n_batches() * yc.n_freq()) as f64;
    Ok(residual_scatter(phi, kappa, yc) / m)
}

/// Lifts the smallest eigenvalue of a PSD estimate so it validates as SPD.
///
/// `scale` is the mean squared modulus of the centered data, used as the
/// absolute floor for exact fits.
pub(crate) fn regularize_sigma(m: &Mat2, scale: f64) -> Result<Spd2> {
    let (_, l2) = crate::algebra::sym_eigenvalues(m);
    let tr = m.trace().max(0.0);
    let floor = (1e-13 * tr).max(1e-24 * scale).max(f64::MIN_POSITIVE);
    let out = if l2 < floor {
        log::debug!("covariance estimate lifted by {:e}", floor - l2);
        m + Mat2::identity() * (floor - l2)
    } else {
        *m
    };
    Spd2::new(out).map_err(|_| Error::SingularSigma)
}

/// Leading singular triplet of the centered data as `(φ, κ)` with
/// `Ỹ ≈ φ κᵀ`, `‖κ‖ = 1`.
pub(crate) fn svd_init(yc: &DataMatrix) -> Result<(Vec<C64>, Vec<C64>)> {
    let m = DMatrix::from_row_slice(yc.n_batches(), yc.n_freq(), yc.values());
    let svd = m.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::DegenerateData("SVD failed".into())),
    };
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let k = order[0];
    let s0 = sv[k];
    if !(s0 > 0.0) {
        return Err(Error::DegenerateData("rank-0 centered matrix".into()));
    }
    if order.len() > 1 && sv[order[1]] >= s0 * (1.0 - 1e-12) {
        log::warn!("tied leading singular values; using the first factor");
    }
    let phi = u.column(k).iter().map(|z| z * s0).collect();
    let kappa = vt.row(k).iter().copied().collect();
    Ok((phi, kappa))
}

/// Subtracts the mean of `κ`, renormalizes, and rotates so the entry of
/// largest modulus is real positive. `φ` absorbs scale and phase.
pub(crate) fn normalize_gauge(phi: &mut [C64], kappa: &mut [C64]) {
    let m: C64 = kappa.iter().sum::<C64>() / kappa.len() as f64;
    kappa.iter_mut().for_each(|k| *k -= m);
    rescale(phi, kappa);
    let j = kappa
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .map(|(j, _)| j)
        .unwrap_or(0);
    let a = kappa[j].norm();
    if a > 0.0 {
        let u = kappa[j].conj() / a;
        kappa.iter_mut().for_each(|k| *k *= u);
        phi.iter_mut().for_each(|f| *f *= u.conj());
    }
}

/// `κ ← κ/‖κ‖`, `φ ← φ‖κ‖`.
pub(crate) fn rescale(phi: &mut [C64], kappa: &mut [C64]) {
    let r = norm(kappa);
    if r > 0.0 {
        kappa.iter_mut().for_each(|k| *k /= r);
        phi.iter_mut().for_each(|f| *f *= r);
    }
}

/// Alternating conditional maximization: `Σ → φ → κ → renormalize`,
/// starting from the rank-one SVD of the row-centered data.
///
/// The returned `Σ` is the one used in the last sweep, i.e. the one that
/// enters the final log-likelihood value.
pub fn fit_hom(y: &DataMatrix, opts: &HomOptions) -> Result<FitReport> {
    let (bn, n1) = (y.n_batches(), y.n_freq());
    if bn == 0 || n1 == 0 {
        return Err(Error::EmptyData);
    }
    if bn < 2 || n1 < 3 {
        return Err(Error::InvalidDimension(format!(
            "need B >= 2 and N+1 >= 3, got B = {bn}, N+1 = {n1}"
        )));
    }
    let (psi, yc) = y.centered();
    let scale = yc.norm_sqr() / (bn * n1) as f64;
    if !(scale > 0.0) {
        return Err(Error::DegenerateData("rank-0 centered matrix".into()));
    }
    let (mut phi, mut kappa) = match &opts.init {
        Some((f, k)) => {
            check_shapes(&yc, Some(f.len()), Some(k.len()))?;
            (f.clone(), k.clone())
        }
        None => svd_init(&yc)?,
    };
    rescale(&mut phi, &mut kappa);

    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut sigma = opts.sigma_known.unwrap_or_else(Spd2::identity);
    let mut n_iter = 0;
    while n_iter < opts.maxiter.max(1) {
        n_iter += 1;
        if opts.sigma_known.is_none() {
            sigma = regularize_sigma(&sigma_mle(&phi, &kappa, &yc)?, scale)?;
        }
        let p = sigma.inverse();
        phi = phi_mle(&kappa, &p, &yc)?;
        kappa = kappa_mle(&phi, &p, &yc)?;
        rescale(&mut phi, &mut kappa);
        let params = HomParams {
            psi: psi.clone(),
            phi: phi.clone(),
            kappa: kappa.clone(),
            sigma,
        };
        let l = hom_loglik(&yc, &params)?;
        if !l.is_finite() {
            return Err(Error::OptimizerFailure("non-finite log-likelihood".into()));
        }
        let gain = trace.last().map(|prev| l - prev);
        trace.push(l);
        if let Some(g) = gain {
            if g < opts.min_delta_loglik {
                converged = true;
                break;
            }
        }
    }
    normalize_gauge(&mut phi, &mut kappa);
    Ok(FitReport {
        params: HomParams { psi, phi, kappa, sigma },
        loglik_trace: trace,
        n_iter,
        converged,
    })
}
