//! Numerical validation suite: fourteen checks of the estimators against
//! closed forms, finite differences and Monte-Carlo oracles.
//!
//! Every threshold is a named constant below. [`Scale::Quick`] shrinks
//! replicate counts for smoke runs; only [`Scale::Full`] corresponds to the
//! stated acceptance sizes and runtime budgets.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{norm, proj_distance, Mat2, ProjectivePoint, Spd2, Vec2, C64};
use crate::bootstrap::{parametric_bootstrap, BootstrapOptions, BootstrapResult, FittedModel};
use crate::chart::Chart;
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::frechet::{
    check_lipschitz, inconsistency_gradient, mc_mean, population_f_decomposition, rho, sandwich_covariance,
    spectrum_covariance_full,
};
use crate::helmert::{helmertize, helmertize_data};
use crate::het::{boundary_sequence_loglik, fit_het, het_grad_sigma, het_loglik, HetOptions, HetParams};
use crate::hom::{fit_hom, hom_loglik, kappa_mle, phi_mle, sigma_mle, HomOptions, HomParams};
use crate::phase::{extract_spectrum, jacobian_g, max_method_lambda, MaxPhase};
use crate::simulate::{simulate, simulate_het, Generator, NoiseSpec, SimSpec};

/// Pinned tolerances and sizes.
pub mod thresholds {
    pub const C1_INSTANCES: usize = 20;
    pub const C1_B: usize = 40;
    pub const C1_N1: usize = 16;
    /// Gradient norm at the conditional maximizer relative to the gradient
    /// norm at the random starting point of that block.
    pub const C1_REL_GRAD: f64 = 1e-6;
    pub const C1_BUDGET_S: f64 = 10.0;

    pub const C2_INSTANCES: usize = 10;
    pub const C2_TOL: f64 = 1e-8;

    pub const C3_REPLICATES: usize = 50;
    pub const C3_BATCHES: [usize; 3] = [50, 200, 800];
    pub const C3_N1: usize = 16;
    pub const C3_MAX_MEDIAN_AT_LARGEST: f64 = 0.05;
    pub const C3_BUDGET_S: f64 = 120.0;

    pub const C4_POINTS: usize = 10;
    pub const C4_DRAWS: usize = 100_000;
    pub const C4_N: usize = 8;
    pub const C4_SE_MULT: f64 = 3.0;
    pub const C4_BUDGET_S: f64 = 30.0;

    pub const C5_SWEEPS: usize = 10_000;

    pub const C6_POINTS: usize = 100;
    pub const C6_TOL: f64 = 1e-10;

    pub const C7_POINTS: usize = 20;
    pub const C7_REL_TOL: f64 = 1e-4;

    pub const C8_REPLICATES: usize = 500;
    pub const C8_B: usize = 2000;
    pub const C8_N1: usize = 8;
    pub const C8_MAX_REL_FROBENIUS: f64 = 0.20;
    pub const C8_LEVEL: f64 = 0.95;
    pub const C8_COVERAGE_SLACK: f64 = 0.03;
    pub const C8_BUDGET_S: f64 = 600.0;

    pub const C9_POINTS: usize = 20;
    pub const C9_MIN_FROBENIUS: f64 = 1e-6;
    pub const C9_DRAWS: usize = 20_000;
    /// Bonferroni-style multiplier for 60 simultaneous comparisons.
    pub const C9_SE_MULT: f64 = 4.0;

    pub const C10_EXACT_REL_TOL: f64 = 1e-12;
    pub const C10_SLOPE_REL_TOL: f64 = 0.01;
    pub const C10_LOG10_K_RANGE: (f64, f64) = (2.0, 6.0);

    pub const C11_REPLICATES: usize = 20;
    pub const C11_B: usize = 300;
    pub const C11_N1: usize = 16;
    pub const C11_SIGMA_TILDE_REL: f64 = 0.15;
    pub const C11_GRAD_REL: f64 = 1e-5;
    pub const C11_NESTING_ABS: f64 = 1e-3;
    pub const C11_BUDGET_S: f64 = 300.0;

    pub const C12_POINTS: usize = 100;
    pub const C12_GRID: usize = 1_000_000;
    pub const C12_GRID_TOL: f64 = 1e-10;
    pub const C12_INVARIANCE_TOL: f64 = 1e-12;

    pub const C13_DRAWS: usize = 100_000;
    pub const C13_N1: usize = 4;
    pub const C13_SE_MULT: f64 = 3.0;

    pub const C14_DATASETS: usize = 200;
    pub const C14_REPLICATES: usize = 500;
    pub const C14_LEVEL: f64 = 0.95;
    pub const C14_COVERAGE_RANGE: (f64, f64) = (0.90, 0.99);
    pub const C14_MIN_FRACTION: f64 = 0.90;
}

use thresholds::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Full,
    Quick,
}

impl Scale {
    fn n(self, full: usize, quick: usize) -> usize {
        match self {
            Scale::Full => full,
            Scale::Quick => quick,
        }
    }

    fn budget(self, s: f64) -> Option<f64> {
        match self {
            Scale::Full => Some(s),
            Scale::Quick => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] criterion {:>2} {}: {} ({:.1} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

pub const CRITERIA: [(u8, &str); 14] = [
    (1, "closed-form MLE stationarity"),
    (2, "rank-one SVD equivalence"),
    (3, "consistency of the spectrum direction"),
    (4, "noise part of the population Frechet function"),
    (5, "Lipschitz bound of the loss"),
    (6, "chart distance identity"),
    (7, "spectrum-map Jacobian"),
    (8, "central limit theorem and sandwich coverage"),
    (9, "inconsistency gradient"),
    (10, "boundary maxima of the phase-noise likelihood"),
    (11, "phase-noise model recovery"),
    (12, "phase extraction"),
    (13, "Helmertized noise covariance"),
    (14, "bootstrap determinism and coverage"),
];

/// Runs one criterion. `seed` offsets every internal seed.
pub fn run_criterion(id: u8, scale: Scale, seed: u64) -> Result<CriterionReport> {
    let name = CRITERIA
        .iter()
        .find(|c| c.0 == id)
        .ok_or_else(|| Error::Precondition(format!("unknown criterion {id}")))?
        .1;
    let t = Instant::now();
    let (mut passed, mut detail, budget) = match id {
        1 => c01(scale, seed)?,
        2 => c02(scale, seed)?,
        3 => c03(scale, seed)?,
        4 => c04(scale, seed)?,
        5 => c05(scale, seed)?,
        6 => c06(scale, seed)?,
        7 => c07(scale, seed)?,
        8 => c08(scale, seed)?,
        9 => c09(scale, seed)?,
        10 => c10(scale, seed)?,
        11 => c11(scale, seed)?,
        12 => c12(scale, seed)?,
        13 => c13(scale, seed)?,
        _ => c14(scale, seed)?,
    };
    let seconds = t.elapsed().as_secs_f64();
    if let Some(b) = budget {
        if seconds > b {
            passed = false;
            detail.push_str(&format!("; runtime {seconds:.1} s exceeds budget {b} s"));
        }
    }
    Ok(CriterionReport {
        id,
        name: name.to_string(),
        passed,
        detail,
        seconds,
    })
}

pub fn run_all(scale: Scale, seed: u64) -> Vec<Result<CriterionReport>> {
    CRITERIA.iter().map(|c| run_criterion(c.0, scale, seed)).collect()
}

type Outcome = Result<(bool, String, Option<f64>)>;

fn rng_for(seed: u64, criterion: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ (criterion << 48));
    r.set_stream(stream);
    r
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn rand_cvec(rng: &mut impl Rng, n: usize) -> Vec<C64> {
    (0..n)
        .map(|_| c(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect()
}

fn rand_point(rng: &mut impl Rng, n: usize) -> ProjectivePoint {
    ProjectivePoint::new(rand_cvec(rng, n)).expect("nonzero Gaussian vector")
}

/// Unit-norm, mean-zero direction of length `n1`.
fn rand_direction(rng: &mut impl Rng, n1: usize) -> Vec<C64> {
    let v = center(&rand_cvec(rng, n1));
    let r = norm(&v);
    v.iter().map(|z| z / r).collect()
}

fn center(v: &[C64]) -> Vec<C64> {
    let m = v.iter().sum::<C64>() / v.len() as f64;
    v.iter().map(|z| z - m).collect()
}

/// SPD matrix with eigenvalues in `[lo, hi]` and a random orientation.
fn rand_spd(rng: &mut impl Rng, lo: f64, hi: f64) -> Spd2 {
    let a = rng.gen_range(lo..hi);
    let b = rng.gen_range(lo..hi);
    let t: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let (s, co) = t.sin_cos();
    let r = Mat2::new(co, -s, s, co);
    Spd2::new(r * Mat2::new(a, 0.0, 0.0, b) * r.transpose()).expect("eigenvalues are positive")
}

fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// Criterion 1 ----------------------------------------------------------------

/// Finite-difference gradient of `x ↦ ℓ(x)` over real coordinates.
fn fd_grad(x: &[f64], f: &dyn Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let h = 1e-6 * (1.0 + x[i].abs());
            let g = |t: f64| {
                let mut y = x.to_vec();
                y[i] = t;
                f(&y)
            };
            central_diff(g, x[i], h)
        })
        .collect()
}

fn flatten(z: &[C64]) -> Vec<f64> {
    z.iter().flat_map(|v| [v.re, v.im]).collect()
}

fn unflatten(x: &[f64]) -> Vec<C64> {
    x.chunks_exact(2).map(|p| c(p[0], p[1])).collect()
}

fn c01(scale: Scale, seed: u64) -> Outcome {
    let count = scale.n(C1_INSTANCES, 5);
    let worst: Vec<[f64; 3]> = (0..count)
        .into_par_iter()
        .map(|inst| -> Result<[f64; 3]> {
            let mut rng = rng_for(seed, 1, inst as u64);
            let spec = SimSpec {
                b: C1_B,
                n_plus_1: C1_N1,
                psi_gen: Generator::Iid {
                    mean: c(1.0, 1.0),
                    sd: 1.0,
                },
                phi_gen: Generator::Iid {
                    mean: c(2.0, 0.0),
                    sd: 1.0,
                },
                kappa0: rand_direction(&mut rng, C1_N1),
                c: C64::new(0.0, 0.0),
                noise: NoiseSpec::Hom {
                    sigma: rand_spd(&mut rng, 0.2, 1.0),
                },
                seed: rng.gen(),
            };
            let (_, yc) = simulate(&spec)?.centered();
            let phi0 = rand_cvec(&mut rng, C1_B);
            let kappa0 = rand_cvec(&mut rng, C1_N1);
            let sigma0 = rand_spd(&mut rng, 0.2, 1.0);
            let psi = vec![C64::new(0.0, 0.0); C1_B];
            let ll = |phi: &[C64], kappa: &[C64], sigma: Spd2| {
                hom_loglik(
                    &yc,
                    &HomParams {
                        psi: psi.clone(),
                        phi: phi.to_vec(),
                        kappa: kappa.to_vec(),
                        sigma,
                    },
                )
                .unwrap_or(f64::NAN)
            };
            let p0 = sigma0.inverse();

            let kappa_star = kappa_mle(&phi0, &p0, &yc)?;
            let fk = |x: &[f64]| ll(&phi0, &unflatten(x), sigma0);
            let rk = l2(&fd_grad(&flatten(&kappa_star), &fk)) / l2(&fd_grad(&flatten(&kappa0), &fk));

            let phi_star = phi_mle(&kappa0, &p0, &yc)?;
            let fp = |x: &[f64]| ll(&unflatten(x), &kappa0, sigma0);
            let rp = l2(&fd_grad(&flatten(&phi_star), &fp)) / l2(&fd_grad(&flatten(&phi0), &fp));

            let s_star = sigma_mle(&phi0, &kappa0, &yc)?;
            let fs = |x: &[f64]| match Spd2::new(Mat2::new(x[0], x[1], x[1], x[2])) {
                Ok(s) => ll(&phi0, &kappa0, s),
                Err(_) => f64::NAN,
            };
            let sv = |m: &Mat2| [m[(0, 0)], m[(0, 1)], m[(1, 1)]];
            let rs = l2(&fd_grad(&sv(&s_star), &fs)) / l2(&fd_grad(&sv(sigma0.matrix()), &fs));
            Ok([rk, rp, rs])
        })
        .collect::<Result<_>>()?;
    let m = worst
        .iter()
        .fold([0.0f64; 3], |a, w| [a[0].max(w[0]), a[1].max(w[1]), a[2].max(w[2])]);
    let passed = m.iter().all(|v| *v < C1_REL_GRAD);
    Ok((
        passed,
        format!(
            "{count} instances; max relative gradient kappa {:.1e}, phi {:.1e}, sigma {:.1e} (limit {C1_REL_GRAD:e})",
            m[0], m[1], m[2]
        ),
        scale.budget(C1_BUDGET_S),
    ))
}

// Criterion 2 ----------------------------------------------------------------

fn c02(scale: Scale, seed: u64) -> Outcome {
    let count = scale.n(C2_INSTANCES, 3);
    let (b, n1) = (40, 16);
    let mut worst_d: f64 = 0.0;
    let mut worst_m: f64 = 0.0;
    for inst in 0..count {
        let mut rng = rng_for(seed, 2, inst as u64);
        let r = rng.gen_range(0.05..0.5);
        let sigma = Spd2::scaled_identity(r)?;
        let spec = SimSpec {
            b,
            n_plus_1: n1,
            psi_gen: Generator::Iid {
                mean: c(0.5, -1.0),
                sd: 1.0,
            },
            phi_gen: Generator::Iid {
                mean: c(3.0, 1.0),
                sd: 1.0,
            },
            kappa0: rand_direction(&mut rng, n1),
            c: C64::new(0.0, 0.0),
            noise: NoiseSpec::Hom { sigma },
            seed: rng.gen(),
        };
        let y = simulate(&spec)?;
        let fit = fit_hom(
            &y,
            &HomOptions {
                maxiter: 10_000,
                min_delta_loglik: f64::MIN_POSITIVE,
                sigma_known: Some(sigma),
                init: None,
            },
        )?;
        let (_, yc) = y.centered();
        let m = DMatrix::from_row_slice(b, n1, yc.values());
        let svd = m.svd(true, true);
        let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
        let k = svd.singular_values.imax();
        let s0 = svd.singular_values[k];
        let v: Vec<C64> = vt.row(k).iter().copied().collect();
        let d = proj_distance(
            &ProjectivePoint::new(fit.params.kappa.clone())?,
            &ProjectivePoint::new(v.clone())?,
        )?;
        let mut dm: f64 = 0.0;
        for bi in 0..b {
            for nu in 0..n1 {
                let a = fit.params.phi[bi] * fit.params.kappa[nu];
                let e = u[(bi, k)] * s0 * v[nu];
                dm = dm.max((a - e).norm());
            }
        }
        worst_d = worst_d.max(d);
        worst_m = worst_m.max(dm / s0);
    }
    Ok((
        worst_d < C2_TOL && worst_m < C2_TOL,
        format!("{count} instances; max direction distance {worst_d:.1e}, max factor mismatch {worst_m:.1e} (limit {C2_TOL:e})"),
        None,
    ))
}

// Criterion 3 ----------------------------------------------------------------

fn drift_spec(rng: &mut impl Rng, b: usize, n1: usize, kappa0: Vec<C64>, sigma: Spd2) -> SimSpec {
    SimSpec {
        b,
        n_plus_1: n1,
        psi_gen: Generator::RandomWalk {
            start: c(2.0, -1.0),
            step_sd: 0.02,
            phase_sd: 0.0,
        },
        phi_gen: Generator::RandomWalk {
            start: c(1.0, 0.0),
            step_sd: 0.01,
            phase_sd: 0.02,
        },
        kappa0,
        c: C64::new(0.0, 0.0),
        noise: NoiseSpec::Hom { sigma },
        seed: rng.gen(),
    }
}

fn c03(scale: Scale, seed: u64) -> Outcome {
    let reps = scale.n(C3_REPLICATES, 10);
    let mut rng = rng_for(seed, 3, 0);
    let kappa0 = rand_direction(&mut rng, C3_N1);
    let k0 = ProjectivePoint::new(kappa0.clone())?;
    let sigma = Spd2::from_entries(0.02, 0.005, 0.01)?;
    let mut medians = Vec::new();
    for (i, &b) in C3_BATCHES.iter().enumerate() {
        let d: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|r| -> Result<f64> {
                let mut rng = rng_for(seed, 3, 1 + (i * 1000 + r) as u64);
                let y = simulate(&drift_spec(&mut rng, b, C3_N1, kappa0.clone(), sigma))?;
                let fit = fit_hom(
                    &y,
                    &HomOptions {
                        sigma_known: Some(sigma),
                        ..Default::default()
                    },
                )?;
                proj_distance(&ProjectivePoint::new(fit.params.kappa)?, &k0)
            })
            .collect::<Result<_>>()?;
        medians.push(median(d));
    }
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    let last = *medians.last().expect("three sizes");
    Ok((
        decreasing && last < C3_MAX_MEDIAN_AT_LARGEST,
        format!(
            "median distance over {reps} replicates at B = {:?}: {:.4}, {:.4}, {:.4} (largest must be < {C3_MAX_MEDIAN_AT_LARGEST})",
            C3_BATCHES, medians[0], medians[1], medians[2]
        ),
        scale.budget(C3_BUDGET_S),
    ))
}

// Criterion 4 ----------------------------------------------------------------

fn c04(scale: Scale, seed: u64) -> Outcome {
    let draws = scale.n(C4_DRAWS, 20_000);
    let mut worst: f64 = 0.0;
    for i in 0..C4_POINTS {
        let mut rng = rng_for(seed, 4, i as u64);
        let k = rand_point(&mut rng, C4_N);
        let p = rand_spd(&mut rng, 0.2, 5.0);
        let f = population_f_decomposition(&k, &k, &p, &[c(1.0, 0.0)], draws, rng.gen())?;
        worst = worst.max((f.noise_part - f.noise_closed_form).abs() / f.noise_se);
    }
    Ok((
        worst <= C4_SE_MULT,
        format!(
            "{C4_POINTS} directions, {draws} draws, target {}; max |mean - target| = {worst:.2} SE (limit {C4_SE_MULT})",
            2 * C4_N - 2
        ),
        scale.budget(C4_BUDGET_S),
    ))
}

// Criterion 5 ----------------------------------------------------------------

fn c05(scale: Scale, seed: u64) -> Outcome {
    let sweeps = scale.n(C5_SWEEPS, 1000);
    let violations: usize = (0..sweeps)
        .into_par_iter()
        .map(|i| -> Result<usize> {
            let mut rng = rng_for(seed, 5, i as u64);
            let n = rng.gen_range(2..=12);
            let amp = 10f64.powf(rng.gen_range(-2.0..2.0));
            let y: Vec<C64> = rand_cvec(&mut rng, n).iter().map(|z| z * amp).collect();
            let a = rand_point(&mut rng, n);
            // Half of the sweeps probe nearby pairs where the bound is tightest.
            let b = if i % 2 == 0 {
                rand_point(&mut rng, n)
            } else {
                let eps = 10f64.powf(rng.gen_range(-6.0..-1.0));
                let d = rand_cvec(&mut rng, n);
                ProjectivePoint::new(a.rep().iter().zip(&d).map(|(x, e)| x + e * eps).collect())?
            };
            let mut p = rand_spd(&mut rng, 0.05, 20.0);
            while {
                let (l1, l2) = p.eigenvalues();
                !(l1 > l2 * (1.0 + 1e-9))
            } {
                p = rand_spd(&mut rng, 0.05, 20.0);
            }
            Ok(usize::from(!check_lipschitz(&y, &p, &[(a, b)])?))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok((
        violations == 0,
        format!("{violations} violations in {sweeps} sweeps"),
        None,
    ))
}

// Criterion 6 ----------------------------------------------------------------

fn c06(_scale: Scale, seed: u64) -> Outcome {
    let mut worst_stated: f64 = 0.0;
    let mut worst_doubled: f64 = 0.0;
    for i in 0..C6_POINTS {
        let mut rng = rng_for(seed, 6, i as u64);
        let n = rng.gen_range(2..=10);
        let anchor = rand_point(&mut rng, n);
        let chart = Chart::new(&anchor)?;
        let r = 10f64.powf(rng.gen_range(-3.0..2.0));
        let x: Vec<f64> = (0..2 * (n - 1))
            .map(|_| rng.sample::<f64, _>(StandardNormal) * r)
            .collect();
        let d = proj_distance(&chart.inverse(&x)?, &anchor)?;
        let q = 1.0 / (l2(&x).powi(2) + 1.0).sqrt();
        worst_stated = worst_stated.max((d * d - (1.0 - q)).abs());
        worst_doubled = worst_doubled.max((d * d - 2.0 * (1.0 - q)).abs());
    }
    Ok((
        worst_stated < C6_TOL,
        format!(
            "max |d^2 - (1 - 1/sqrt(|x|^2+1))| = {worst_stated:.2e} (limit {C6_TOL:e}); \
             max |d^2 - 2(1 - 1/sqrt(|x|^2+1))| = {worst_doubled:.2e}"
        ),
        None,
    ))
}

// Criterion 7 ----------------------------------------------------------------

fn c07(_scale: Scale, seed: u64) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let mut i = 0u64;
    while done < C7_POINTS {
        let mut rng = rng_for(seed, 7, i);
        i += 1;
        let n = rng.gen_range(3..=10);
        let k = rand_point(&mut rng, n);
        let s = crate::algebra::tdot(k.rep(), k.rep()).norm();
        let spec = match extract_spectrum(k.rep()) {
            Ok(sp) if s > 0.05 => sp,
            _ => continue,
        };
        let (mx, mn) = crate::phase::max_min(&spec.i);
        if (mx.abs() - mn.abs()).abs() < 0.05 {
            continue;
        }
        let j = jacobian_g(k.rep())?;
        let chart = Chart::new(&k)?;
        let m = 2 * (n - 1);
        let mut jn = DMatrix::<f64>::zeros(n, m);
        let h = 1e-6;
        for col in 0..m {
            let g = |t: f64| -> Result<Vec<f64>> {
                let mut x = vec![0.0; m];
                x[col] = t;
                Ok(extract_spectrum(chart.inverse(&x)?.rep())?.i)
            };
            let (gp, gm) = (g(h)?, g(-h)?);
            for row in 0..n {
                jn[(row, col)] = (gp[row] - gm[row]) / (2.0 * h);
            }
        }
        worst = worst.max((&j - &jn).norm() / j.norm());
        done += 1;
    }
    let n = 6;
    let mut e = vec![C64::new(0.0, 0.0); n];
    e[n - 1] = C64::new(1.0, 0.0);
    let sv = jacobian_g(&e)?.singular_values();
    let smax = sv.max();
    let rank = sv.iter().filter(|s| **s > 1e-10 * smax).count();
    Ok((
        worst < C7_REL_TOL && rank == n - 1,
        format!(
            "{C7_POINTS} directions; max relative Frobenius error {worst:.1e} (limit {C7_REL_TOL:e}); rank at e_N (N = {n}) is {rank}, expected {}",
            n - 1
        ),
        None,
    ))
}

// Criterion 8 ----------------------------------------------------------------

struct ClTReplicate {
    beta: Vec<f64>,
    cov_beta_at_truth: DMatrix<f64>,
    covered: Vec<bool>,
}

fn c08(scale: Scale, seed: u64) -> Outcome {
    let reps = scale.n(C8_REPLICATES, 60);
    let b = scale.n(C8_B, 500);
    let mut rng = rng_for(seed, 8, 0);
    let kappa0 = rand_direction(&mut rng, C8_N1);
    let i0 = extract_spectrum(&kappa0)?.i;
    let k0h = ProjectivePoint::new(helmertize(&kappa0)?)?;
    let chart0 = Chart::new(&k0h)?;
    let sigma = Spd2::from_entries(0.05, 0.01, 0.02)?;
    let p = sigma.inverse();
    let z = statrs::distribution::ContinuousCDF::inverse_cdf(
        &statrs::distribution::Normal::new(0.0, 1.0).expect("standard normal"),
        0.5 + C8_LEVEL / 2.0,
    );
    let out: Vec<ClTReplicate> = (0..reps)
        .into_par_iter()
        .map(|r| -> Result<ClTReplicate> {
            let mut rng = rng_for(seed, 8, 1 + r as u64);
            let y = simulate(&drift_spec(&mut rng, b, C8_N1, kappa0.clone(), sigma))?;
            let fit = fit_hom(
                &y,
                &HomOptions {
                    sigma_known: Some(sigma),
                    min_delta_loglik: 1e-8,
                    ..Default::default()
                },
            )?;
            let yh = helmertize_data(&y)?;
            let kh = ProjectivePoint::new(helmertize(&fit.params.kappa)?)?;
            let beta: Vec<f64> = chart0.coords(kh.rep())?.iter().map(|v| v * (b as f64).sqrt()).collect();
            let at_truth = sandwich_covariance(&yh, &k0h, &p)?;
            let at_hat = sandwich_covariance(&yh, &kh, &p)?;
            let cov_i = spectrum_covariance_full(&at_hat, &kh)?;
            let ihat = extract_spectrum(&fit.params.kappa)?.i;
            let covered = (0..C8_N1)
                .map(|nu| (ihat[nu] - i0[nu]).abs() <= z * cov_i[(nu, nu)].max(0.0).sqrt())
                .collect();
            Ok(ClTReplicate {
                beta,
                cov_beta_at_truth: at_truth.cov_beta,
                covered,
            })
        })
        .collect::<Result<_>>()?;
    let m = out[0].beta.len();
    let nr = out.len() as f64;
    let mean: Vec<f64> = (0..m)
        .map(|j| out.iter().map(|o| o.beta[j]).sum::<f64>() / nr)
        .collect();
    let mut emp = DMatrix::<f64>::zeros(m, m);
    let mut sand = DMatrix::<f64>::zeros(m, m);
    for o in &out {
        let d = nalgebra::DVector::from_iterator(m, o.beta.iter().zip(&mean).map(|(a, b)| a - b));
        emp += &d * d.transpose();
        sand += &o.cov_beta_at_truth;
    }
    emp /= nr - 1.0;
    sand /= nr;
    let rel = (&emp - &sand).norm() / sand.norm();
    let hits = out.iter().flat_map(|o| o.covered.iter()).filter(|c| **c).count();
    let coverage = hits as f64 / (out.len() * C8_N1) as f64;
    let per_freq: Vec<f64> = (0..C8_N1)
        .map(|nu| out.iter().filter(|o| o.covered[nu]).count() as f64 / nr)
        .collect();
    let (lo, hi) = (C8_LEVEL - C8_COVERAGE_SLACK, C8_LEVEL + C8_COVERAGE_SLACK);
    Ok((
        rel < C8_MAX_REL_FROBENIUS && coverage >= lo && coverage <= hi,
        format!(
            "{reps} replicates at B = {b}; relative Frobenius gap {rel:.3} (limit {C8_MAX_REL_FROBENIUS}); \
             pooled coverage {coverage:.3} in [{lo:.2}, {hi:.2}]; per-frequency {:.3}..{:.3}",
            per_freq.iter().cloned().fold(f64::INFINITY, f64::min),
            per_freq.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        ),
        scale.budget(C8_BUDGET_S),
    ))
}

// Criterion 9 ----------------------------------------------------------------

fn c09(scale: Scale, seed: u64) -> Outcome {
    let draws = scale.n(C9_DRAWS, 5000);
    let mut min_norm = f64::INFINITY;
    let mut worst: f64 = 0.0;
    for i in 0..C9_POINTS {
        let mut rng = rng_for(seed, 9, i as u64);
        let n = rng.gen_range(3..=8);
        let k = rand_point(&mut rng, n);
        let p0 = rand_spd(&mut rng, 0.3, 3.0);
        let sigma0 = p0.inverse();
        let g = inconsistency_gradient(&k, &p0)?;
        min_norm = min_norm.min(g.norm());
        let mc_seed: u64 = rng.gen();
        let h = 1e-5;
        let dirs = [
            (Mat2::new(1.0, 0.0, 0.0, 0.0), g[(0, 0)]),
            (Mat2::new(0.0, 1.0, 1.0, 0.0), g[(0, 1)]),
            (Mat2::new(0.0, 0.0, 0.0, 1.0), g[(1, 1)]),
        ];
        for (e, want) in dirs {
            let pp = Spd2::new(p0.matrix() + e * h)?;
            let pm = Spd2::new(p0.matrix() - e * h)?;
            let (m, se) = mc_mean(mc_seed, draws, n, &sigma0, |eps| {
                (rho(eps, &k, &pp).unwrap_or(f64::NAN) - rho(eps, &k, &pm).unwrap_or(f64::NAN)) / (2.0 * h)
            });
            let logdet = (pp.det().ln() - pm.det().ln()) / (2.0 * h);
            let fd = m - n as f64 * logdet;
            worst = worst.max((fd - want).abs() / se.max(1e-12));
        }
    }
    Ok((
        min_norm > C9_MIN_FROBENIUS && worst <= C9_SE_MULT,
        format!(
            "{C9_POINTS} points; min Frobenius norm {min_norm:.3e} (limit {C9_MIN_FROBENIUS:e}); \
             max |FD - analytic| = {worst:.2} SE (limit {C9_SE_MULT})"
        ),
        None,
    ))
}

// Criterion 10 ---------------------------------------------------------------

fn c10(_scale: Scale, seed: u64) -> Outcome {
    let mut rng = rng_for(seed, 10, 0);
    let n1 = 16;
    let mut worst_exact: f64 = 0.0;
    for _ in 0..10 {
        let row: Vec<C64> = rand_cvec(&mut rng, n1).iter().map(|z| z + c(2.0, 1.0)).collect();
        let psi1 = row.iter().sum::<C64>() / n1 as f64;
        let y1 = DataMatrix::from_rows(&[row])?;
        for &k in &[1.0, 37.0, 1e2, 1e6, 1e12] {
            let want = 0.5 * n1 as f64 * (k / (2.0 * psi1.norm_sqr().powi(2))).ln()
                - n1 as f64 * (2.0 * std::f64::consts::PI).ln();
            let got = boundary_sequence_loglik(&y1, k)?;
            worst_exact = worst_exact.max((got - want).abs() / want.abs().max(1.0));
        }
    }
    // Batch means near ψ₁ keep the other batches' terms nearly constant.
    let rows: Vec<Vec<C64>> = (0..4)
        .map(|_| rand_cvec(&mut rng, n1).iter().map(|z| z * 0.3 + c(2.0, 1.0)).collect())
        .collect();
    let y = DataMatrix::from_rows(&rows)?;
    let (a, b) = C10_LOG10_K_RANGE;
    let pts: Vec<(f64, f64)> = (0..=40)
        .map(|i| {
            let l = a + (b - a) * i as f64 / 40.0;
            let lk = l * std::f64::consts::LN_10;
            boundary_sequence_loglik(&y, 10f64.powf(l)).map(|v| (lk, v))
        })
        .collect::<Result<_>>()?;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let slope =
        pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let target = 0.5 * n1 as f64;
    let rel = (slope / target - 1.0).abs();
    Ok((
        worst_exact < C10_EXACT_REL_TOL && rel < C10_SLOPE_REL_TOL,
        format!(
            "first-batch term max relative error {worst_exact:.1e} (limit {C10_EXACT_REL_TOL:e}); \
             slope in log k over 10^{a}..10^{b} is {slope:.4} vs {target} (relative {rel:.2e}, limit {C10_SLOPE_REL_TOL})"
        ),
        None,
    ))
}

// Criterion 11 ---------------------------------------------------------------

fn het_truth(rng: &mut impl Rng, b: usize, n1: usize) -> HetParams {
    let psi = Generator::RandomWalk {
        start: c(4.0, 3.0),
        step_sd: 0.3,
        phase_sd: 0.2,
    };
    let phi = Generator::RandomWalk {
        start: c(3.0, 0.0),
        step_sd: 0.05,
        phase_sd: 0.05,
    };
    HetParams {
        psi: psi.generate(b, rng),
        phi: phi.generate(b, rng),
        kappa: rand_direction(rng, n1),
        c: c(0.1, -0.05),
        sigma_tilde: 0.15,
        sigma0: Spd2::from_entries(0.5, 0.1, 0.3).expect("SPD"),
    }
}

fn c11(scale: Scale, seed: u64) -> Outcome {
    let reps = scale.n(C11_REPLICATES, 4);
    let b = scale.n(C11_B, 150);
    let results: Vec<(f64, f64, Option<f64>)> = (0..reps)
        .into_par_iter()
        .map(|r| -> Result<(f64, f64, Option<f64>)> {
            let mut rng = rng_for(seed, 11, r as u64);
            let truth = het_truth(&mut rng, b, C11_N1);
            let y = simulate_het(&truth, rng.gen())?;

            let g = het_grad_sigma(&y, &truth)?;
            let l = truth.sigma0.cholesky_lower();
            let theta = [truth.sigma_tilde, l[(0, 0)], l[(1, 0)], l[(1, 1)]];
            let eval = |t: &[f64]| {
                let lm = Mat2::new(t[1], 0.0, t[2], t[3]);
                match Spd2::new(lm * lm.transpose()) {
                    Ok(s) => het_loglik(
                        &y,
                        &HetParams {
                            sigma_tilde: t[0],
                            sigma0: s,
                            ..truth.clone()
                        },
                    )
                    .unwrap_or(f64::NAN),
                    Err(_) => f64::NAN,
                }
            };
            let fd = fd_grad(&theta, &eval);
            let grad_err = l2(&fd.iter().zip(&g).map(|(a, b)| a - b).collect::<Vec<_>>()) / l2(&g);

            let fit = fit_het(&y, &HetOptions::default())?;
            let nest = if r < 3 {
                let hom = fit_hom(&y, &HomOptions::default())?;
                let pinned = fit_het(
                    &y,
                    &HetOptions {
                        fix_sigma_tilde: Some(0.0),
                        ..Default::default()
                    },
                )?;
                Some((pinned.loglik() - hom.loglik()).abs())
            } else {
                None
            };
            Ok((fit.params.sigma_tilde / truth.sigma_tilde, grad_err, nest))
        })
        .collect::<Result<_>>()?;
    let med = median(results.iter().map(|r| r.0).collect());
    let grad = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let nest = results.iter().filter_map(|r| r.2).fold(0.0, f64::max);
    let rel = (med - 1.0).abs();
    Ok((
        rel < C11_SIGMA_TILDE_REL && grad < C11_GRAD_REL && nest < C11_NESTING_ABS,
        format!(
            "{reps} replicates at B = {b}; median ratio of estimated to true phase-noise scale {med:.3} \
             (limit +-{C11_SIGMA_TILDE_REL}); max gradient relative error {grad:.1e} (limit {C11_GRAD_REL:e}); \
             nesting gap {nest:.1e} (limit {C11_NESTING_ABS:e})"
        ),
        scale.budget(C11_BUDGET_S),
    ))
}

// Criterion 12 ---------------------------------------------------------------

fn re_norm_sqr(kappa: &[C64], lambda: f64) -> f64 {
    let u = C64::from_polar(1.0, lambda);
    kappa.iter().map(|z| (u * z).re.powi(2)).sum()
}

fn c12(scale: Scale, seed: u64) -> Outcome {
    let grid = scale.n(C12_GRID, 20_000);
    let res: Vec<(f64, f64)> = (0..C12_POINTS)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64)> {
            let mut rng = rng_for(seed, 12, i as u64);
            let n = rng.gen_range(2..=16);
            let k = rand_cvec(&mut rng, n);
            let best = match max_method_lambda(&k) {
                MaxPhase::Pair([a, _]) => re_norm_sqr(&k, a),
                MaxPhase::AllPhases => re_norm_sqr(&k, 0.0),
            };
            let step = std::f64::consts::TAU / grid as f64;
            let gmax = (0..grid)
                .map(|j| re_norm_sqr(&k, j as f64 * step))
                .fold(f64::NEG_INFINITY, f64::max);
            let base = extract_spectrum(&k)?;
            let mut inv: f64 = 0.0;
            for _ in 0..5 {
                let u = C64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU));
                let rot: Vec<C64> = k.iter().map(|z| z * u).collect();
                let s = extract_spectrum(&rot)?;
                for (a, b) in s.i.iter().zip(&base.i) {
                    inv = inv.max((a - b).abs());
                }
            }
            Ok((gmax - best, inv))
        })
        .collect::<Result<_>>()?;
    let shortfall = res.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    let inv = res.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok((
        shortfall <= C12_GRID_TOL && inv <= C12_INVARIANCE_TOL,
        format!(
            "{C12_POINTS} directions; max grid value minus closed-form value {shortfall:.1e} over {grid} points \
             (limit {C12_GRID_TOL:e}); max phase-invariance deviation {inv:.1e} (limit {C12_INVARIANCE_TOL:e})"
        ),
        None,
    ))
}

// Criterion 13 ---------------------------------------------------------------

fn c13(scale: Scale, seed: u64) -> Outcome {
    let draws = scale.n(C13_DRAWS, 20_000);
    let mut rng = rng_for(seed, 13, 0);
    let sigma = Spd2::from_entries(1.3, -0.4, 0.6)?;
    let chol = sigma.cholesky_lower();
    let n = C13_N1 - 1;
    let samples: Vec<Vec<Vec2>> = (0..draws)
        .map(|_| {
            let row: Vec<C64> = (0..C13_N1)
                .map(|_| {
                    let e = chol * Vec2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
                    c(e[0], e[1])
                })
                .collect();
            let m = row.iter().sum::<C64>() / C13_N1 as f64;
            let centered: Vec<C64> = row.iter().map(|z| z - m).collect();
            helmertize(&centered)
                .expect("length >= 2")
                .iter()
                .map(|z| Vec2::new(z.re, z.im))
                .collect()
        })
        .collect();
    let nd = draws as f64;
    let mut worst: f64 = 0.0;
    for j in 0..n {
        for k in j..n {
            for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                if j == k && a > b {
                    continue;
                }
                let prods: Vec<f64> = samples.iter().map(|s| s[j][a] * s[k][b]).collect();
                let mean = prods.iter().sum::<f64>() / nd;
                let var = prods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (nd - 1.0);
                let se = (var / nd).sqrt();
                let want = if j == k { sigma.matrix()[(a, b)] } else { 0.0 };
                worst = worst.max((mean - want).abs() / se);
            }
        }
    }
    Ok((
        worst <= C13_SE_MULT,
        format!(
            "{draws} draws, {n} Helmert coordinates; max deviation of covariance entries from target {worst:.2} SE (limit {C13_SE_MULT})"
        ),
        None,
    ))
}

// Criterion 14 ---------------------------------------------------------------

fn c14(scale: Scale, seed: u64) -> Outcome {
    let datasets = scale.n(C14_DATASETS, 20);
    let replicates = scale.n(C14_REPLICATES, 100);
    let (b, n1) = (50, 12);
    // A dominant positive peak keeps the sign of the spectrum identifiable;
    // with |max I| close to |min I| the sign rule flips on whole datasets.
    let peaked: Vec<C64> = (0..n1)
        .map(|j| {
            let x = j as f64;
            let g = (-(x - 4.0).powi(2) / 2.0).exp();
            c(g - 0.4 * (-(x - 8.0).powi(2) / 1.5).exp(), 0.1 * g)
        })
        .collect();
    let kappa0 = ProjectivePoint::new(center(&peaked))?.into_rep();
    let i0 = extract_spectrum(&kappa0)?.i;
    let sigma = Spd2::from_entries(0.02, 0.004, 0.01)?;
    let opts = |s: u64| BootstrapOptions {
        replicates,
        level: C14_LEVEL,
        seed: s,
        bias_correct: true,
        ..Default::default()
    };
    let fit_of = |rng: &mut ChaCha8Rng| -> Result<FittedModel> {
        let y = simulate(&drift_spec(rng, b, n1, kappa0.clone(), sigma))?;
        Ok(FittedModel::Hom(fit_hom(&y, &HomOptions::default())?))
    };

    let first = fit_of(&mut rng_for(seed, 14, 1))?;
    let a: BootstrapResult = parametric_bootstrap(&first, &opts(7))?;
    let a2 = parametric_bootstrap(&first, &opts(7))?;
    let deterministic = a == a2;

    // Datasets run sequentially; each bootstrap is parallel internally.
    let mut hits = vec![0usize; n1];
    for d in 0..datasets {
        let mut r = rng_for(seed, 14, 2 + d as u64);
        let fit = fit_of(&mut r)?;
        let res = parametric_bootstrap(&fit, &opts(r.gen()))?;
        for (nu, band) in res.bands_i.iter().enumerate() {
            if band.lower <= i0[nu] && i0[nu] <= band.upper {
                hits[nu] += 1;
            }
        }
    }
    let cov: Vec<f64> = hits.iter().map(|h| *h as f64 / datasets as f64).collect();
    let (lo, hi) = C14_COVERAGE_RANGE;
    let ok = cov.iter().filter(|c| **c >= lo && **c <= hi).count();
    let frac = ok as f64 / n1 as f64;
    Ok((
        deterministic && frac >= C14_MIN_FRACTION,
        format!(
            "repeat with identical seed identical: {deterministic}; {datasets} datasets x {replicates} bias-corrected replicates; \
             {ok}/{n1} frequencies with coverage in [{lo}, {hi}] (need fraction >= {C14_MIN_FRACTION}); coverage {:.3}..{:.3}",
            cov.iter().cloned().fold(f64::INFINITY, f64::min),
            cov.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        ),
        None,
    ))
}
