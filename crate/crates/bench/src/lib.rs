//! Fixtures shared by the benchmarks.

use driftspec::{simulate, DataMatrix, Generator, NoiseSpec, SimSpec, Spd2, C64};
use num_complex::Complex64;

/// Mean-zero, unit-norm direction with two peaks of different phase.
pub fn two_peak_kappa(n_plus_1: usize) -> Vec<C64> {
    let n = n_plus_1 as f64;
    let mut k: Vec<C64> = (0..n_plus_1)
        .map(|i| {
            let x = i as f64 / n;
            let g = (-(x - 0.35).powi(2) / 0.004).exp();
            let h = 0.6 * (-(x - 0.7).powi(2) / 0.002).exp();
            Complex64::new(g - h, 0.15 * g)
        })
        .collect();
    let mean = k.iter().sum::<C64>() / n;
    k.iter_mut().for_each(|v| *v -= mean);
    let norm = k.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    k.iter_mut().for_each(|v| *v /= norm);
    k
}

fn spec(b: usize, n_plus_1: usize, noise: NoiseSpec, seed: u64) -> SimSpec {
    SimSpec {
        b,
        n_plus_1,
        psi_gen: Generator::RandomWalk {
            start: Complex64::new(0.5, 0.2),
            step_sd: 0.05,
            phase_sd: 0.02,
        },
        phi_gen: Generator::Iid {
            mean: Complex64::new(2.0, 1.0),
            sd: 0.3,
        },
        kappa0: two_peak_kappa(n_plus_1),
        c: Complex64::new(0.3, 0.0),
        noise,
        seed,
    }
}

fn sigma() -> Spd2 {
    Spd2::from_entries(0.02, 0.005, 0.01).expect("fixed SPD matrix")
}

/// Homoscedastic data with `b` batches of `n_plus_1` frequencies.
pub fn hom_data(b: usize, n_plus_1: usize) -> DataMatrix {
    simulate(&spec(b, n_plus_1, NoiseSpec::Hom { sigma: sigma() }, 1)).expect("valid spec")
}

/// Phase-noise data with `b` batches of `n_plus_1` frequencies.
pub fn het_data(b: usize, n_plus_1: usize) -> DataMatrix {
    let noise = NoiseSpec::Het {
        sigma0: sigma(),
        sigma_tilde: 0.05,
    };
    simulate(&spec(b, n_plus_1, noise, 2)).expect("valid spec")
}
