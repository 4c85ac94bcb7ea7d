//! Spectrum extraction from a projective point `[κ]`: the maximum method
//! for the phase, the sign flip, singularity detection and the Jacobian of
//! the composed map in chart coordinates.

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::algebra::{norm, tdot, C64};
use crate::chart::{chart_pattern, unitary_to_last};
use crate::error::{Error, Result};

/// Relative tolerance on `|κᵀκ| / ‖κ‖²` below which the phase is undetermined.
pub const M1_TOL: f64 = 1e-12;
/// Absolute tolerance on `||max I| − |min I||` below which the sign is undetermined.
pub const M2_TOL: f64 = 1e-12;

/// Maximizers of `λ ↦ ‖Re(e^{iλ}κ)‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaxPhase {
    Pair([f64; 2]),
    AllPhases,
}

pub fn max_method_lambda(kappa: &[C64]) -> MaxPhase {
    let s = tdot(kappa, kappa);
    let n2 = norm(kappa).powi(2);
    if s.norm() < M1_TOL * n2 {
        return MaxPhase::AllPhases;
    }
    let a = arg_0_2pi(s);
    MaxPhase::Pair([PI - a / 2.0, TAU - a / 2.0])
}

/// Argument in `[0, 2π)`.
fn arg_0_2pi(z: C64) -> f64 {
    let a = z.arg();
    if a < 0.0 {
        a + TAU
    } else {
        a
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegenerateFlags {
    pub near_m1: bool,
    pub near_m2: bool,
}

/// Real spectrum `I = Re(e^{iλ}κ)` and wave `ω = Im(e^{iλ}κ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    #[serde(rename = "I")]
    pub i: Vec<f64>,
    pub omega: Vec<f64>,
    pub lambda_opt: f64,
    pub flipped: bool,
    #[serde(default)]
    pub degenerate_flags: DegenerateFlags,
}

/// Applies `λ = −Arg(κᵀκ)/2` and then flips the sign so that
/// `|max I| > |min I|`. Never fails; degeneracies are reported in the flags.
pub fn extract_spectrum_flagged(kappa: &[C64]) -> SpectrumResult {
    let s = tdot(kappa, kappa);
    let n2 = norm(kappa).powi(2);
    let near_m1 = s.norm() < M1_TOL * n2;
    let lambda0 = if near_m1 { 0.0 } else { -arg_0_2pi(s) / 2.0 };
    let u = C64::from_polar(1.0, lambda0);
    let rotated: Vec<C64> = kappa.iter().map(|z| z * u).collect();
    let mut i: Vec<f64> = rotated.iter().map(|z| z.re).collect();
    let mut omega: Vec<f64> = rotated.iter().map(|z| z.im).collect();
    let (mx, mn) = max_min(&i);
    let near_m2 = (mx.abs() - mn.abs()).abs() < M2_TOL;
    let flipped = mx.abs() < mn.abs();
    let mut lambda = lambda0;
    if flipped {
        i.iter_mut().for_each(|v| *v = -*v);
        omega.iter_mut().for_each(|v| *v = -*v);
        lambda += PI;
    }
    SpectrumResult {
        i,
        omega,
        lambda_opt: lambda.rem_euclid(TAU),
        flipped,
        degenerate_flags: DegenerateFlags { near_m1, near_m2 },
    }
}

/// As [`extract_spectrum_flagged`] but fails on the singularity sets.
pub fn extract_spectrum(kappa: &[C64]) -> Result<SpectrumResult> {
    let r = extract_spectrum_flagged(kappa);
    if r.degenerate_flags.near_m1 {
        return Err(Error::PhaseDegenerate);
    }
    if r.degenerate_flags.near_m2 {
        return Err(Error::SignDegenerate);
    }
    Ok(r)
}

pub(crate) fn max_min(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::NEG_INFINITY, f64::INFINITY), |(a, b), &x| (a.max(x), b.min(x)))
}

/// Jacobian at `x = 0` of `x ↦ Re(e^{−iα(x)/2} β⁻¹(x))` before the sign
/// flip, together with the unflipped spectrum `Re(e^{−iα/2}κ⁰)`.
///
/// `α(x) = Arg(wᵀw)` for the representative `w = R* x̃ / ‖x̃‖` of `β⁻¹(x)`.
pub fn jacobian_g_unsigned(kappa0: &[C64]) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let n = kappa0.len();
    if n < 2 {
        return Err(Error::InvalidDimension(format!("jacobian needs N >= 2, got {n}")));
    }
    let nk = norm(kappa0);
    if !(nk > 0.0) {
        return Err(Error::ZeroDirection);
    }
    let k0: Vec<C64> = kappa0.iter().map(|z| z / nk).collect();
    let s = tdot(&k0, &k0);
    let r = s.norm();
    if r < M1_TOL {
        return Err(Error::SingularityM1M2);
    }
    let alpha = arg_0_2pi(s);
    let rot = C64::from_polar(1.0, -alpha / 2.0);
    let rmat = unitary_to_last(&k0)?;
    let ra = rmat.adjoint() * chart_pattern(n);
    let i_unit = C64::new(0.0, 1.0);
    let cols = ra.ncols();
    let mut j = DMatrix::<f64>::zeros(n, cols);
    for c in 0..cols {
        let t: C64 = (0..n).map(|row| k0[row] * ra[(row, c)]).sum();
        let coef = (i_unit * s.conj() * t / (r * r)).re;
        for row in 0..n {
            let v = i_unit * k0[row] * coef + ra[(row, c)];
            j[(row, c)] = (rot * v).re;
        }
    }
    let base = k0.iter().map(|z| (rot * z).re).collect();
    Ok((j, base))
}

/// Jacobian `J_x g(0)` of the spectrum map in the chart anchored at `κ⁰`.
///
/// `κ⁰` is a Helmertized direction of length `N`; the result is
/// `N × 2(N−1)`.
pub fn jacobian_g(kappa0: &[C64]) -> Result<DMatrix<f64>> {
    let spec = extract_spectrum(kappa0).map_err(|_| Error::SingularityM1M2)?;
    let (j, base) = jacobian_g_unsigned(kappa0)?;
    let sign = if dot(&base, &spec.i) < 0.0 { -1.0 } else { 1.0 };
    Ok(j * sign)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::ProjectivePoint;
    use crate::chart::Chart;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn rand_unit(rng: &mut impl Rng, n: usize) -> Vec<C64> {
        let v: Vec<C64> = (0..n)
            .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        ProjectivePoint::new(v).unwrap().into_rep()
    }

    fn re_norm_sqr(k: &[C64], l: f64) -> f64 {
        let u = C64::from_polar(1.0, l);
        k.iter().map(|z| (u * z).re.powi(2)).sum()
    }

    #[test]
    fn real_kappa_gives_pi_and_two_pi() {
        let k = ProjectivePoint::new(vec![c(1.0, 0.0), c(-2.0, 0.0), c(0.5, 0.0)])
            .unwrap()
            .into_rep();
        match max_method_lambda(&k) {
            MaxPhase::Pair([a, b]) => {
                assert!((a - PI).abs() < 1e-15 && (b - TAU).abs() < 1e-15);
                assert!((re_norm_sqr(&k, a) - 1.0).abs() < 1e-14);
                assert!((re_norm_sqr(&k, b) - 1.0).abs() < 1e-14);
            }
            MaxPhase::AllPhases => panic!("expected a pair"),
        }
    }

    #[test]
    fn isotropic_kappa_has_all_phases() {
        let s = 1.0 / 2f64.sqrt();
        assert_eq!(max_method_lambda(&[c(s, 0.0), c(0.0, s)]), MaxPhase::AllPhases);
        let r = extract_spectrum_flagged(&[c(s, 0.0), c(0.0, s)]);
        assert!(r.degenerate_flags.near_m1);
        assert_eq!(extract_spectrum(&[c(s, 0.0), c(0.0, s)]), Err(Error::PhaseDegenerate));
    }

    #[test]
    fn max_method_beats_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let k = rand_unit(&mut rng, 6);
            let MaxPhase::Pair([a, _]) = max_method_lambda(&k) else {
                panic!()
            };
            let best = re_norm_sqr(&k, a);
            for j in 0..10_000 {
                let l = TAU * j as f64 / 10_000.0;
                assert!(best >= re_norm_sqr(&k, l) - 1e-12);
            }
        }
    }

    #[test]
    fn real_dominant_kappa_is_its_own_spectrum() {
        let k = ProjectivePoint::new(vec![c(3.0, 0.0), c(-1.0, 0.0), c(-2.0, 0.0)])
            .unwrap()
            .into_rep();
        let r = extract_spectrum(&k).unwrap();
        assert!(!r.flipped);
        for (a, b) in r.i.iter().zip(&k) {
            assert!((a - b.re).abs() < 1e-15);
        }
        assert!(r.omega.iter().all(|w| w.abs() < 1e-15));
        let neg: Vec<C64> = k.iter().map(|z| -z).collect();
        let r2 = extract_spectrum(&neg).unwrap();
        assert!(r2.i.iter().zip(&r.i).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn spectrum_is_phase_invariant_and_well_formed() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..50 {
            let k = rand_unit(&mut rng, 7);
            let base = extract_spectrum(&k).unwrap();
            let (mx, mn) = max_min(&base.i);
            assert!(mx.abs() > mn.abs());
            let ni: f64 = base.i.iter().map(|v| v * v).sum();
            let nw: f64 = base.omega.iter().map(|v| v * v).sum();
            assert!((ni + nw - 1.0).abs() < 1e-12);
            assert!(ni >= nw);
            assert!((0.0..TAU).contains(&base.lambda_opt));
            let u = C64::from_polar(1.0, base.lambda_opt);
            for (z, v) in k.iter().zip(&base.i) {
                assert!(((u * z).re - v).abs() < 1e-14);
            }
            for _ in 0..100 {
                let mu = rng.gen_range(0.0..TAU);
                let rot: Vec<C64> = k.iter().map(|z| z * C64::from_polar(1.0, mu)).collect();
                let r = extract_spectrum(&rot).unwrap();
                for (a, b) in r.i.iter().zip(&base.i) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn sign_degenerate_is_reported() {
        let s = 1.0 / 2f64.sqrt();
        let k = [c(s, 0.0), c(-s, 0.0)];
        assert_eq!(extract_spectrum(&k), Err(Error::SignDegenerate));
    }

    #[test]
    fn jacobian_at_last_basis_vector_is_re_a() {
        for n in [3usize, 5, 8] {
            let mut e = vec![c(0.0, 0.0); n];
            e[n - 1] = c(1.0, 0.0);
            let j = jacobian_g(&e).unwrap();
            let a = chart_pattern(n);
            for r in 0..n {
                for col in 0..2 * (n - 1) {
                    assert!((j[(r, col)].abs() - a[(r, col)].re.abs()).abs() < 1e-15);
                }
            }
            let sv = j.clone().svd(false, false).singular_values;
            let rank = sv.iter().filter(|&&s| s > 1e-10).count();
            assert_eq!(rank, n - 1);
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut done = 0;
        while done < 10 {
            let n = 5;
            let k = rand_unit(&mut rng, n);
            let Ok(spec) = extract_spectrum(&k) else { continue };
            let (mx, mn) = max_min(&spec.i);
            if (mx.abs() - mn.abs()).abs() < 0.05 || tdot(&k, &k).norm() < 0.05 {
                continue;
            }
            let anchor = ProjectivePoint::new(k.clone()).unwrap();
            let chart = Chart::new(&anchor).unwrap();
            let j = jacobian_g(&k).unwrap();
            let h = 1e-6;
            let d = 2 * (n - 1);
            let mut fd = DMatrix::<f64>::zeros(n, d);
            for col in 0..d {
                let mut xp = vec![0.0; d];
                let mut xm = vec![0.0; d];
                xp[col] = h;
                xm[col] = -h;
                let gp = extract_spectrum(chart.inverse(&xp).unwrap().rep()).unwrap().i;
                let gm = extract_spectrum(chart.inverse(&xm).unwrap().rep()).unwrap().i;
                for r in 0..n {
                    fd[(r, col)] = (gp[r] - gm[r]) / (2.0 * h);
                }
            }
            assert!((&j - &fd).amax() < 1e-4 * j.amax());
            done += 1;
        }
    }
}
