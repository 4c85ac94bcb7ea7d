//! Drift-aware estimation of phase-corrected spectra from batched complex
//! measurement matrices.
//!
//! The data matrix `Y` has one row per batch and one column per frequency.
//! Each row is modelled as an offset `ψ_b` plus a complex scale `φ_b` times a
//! shared spectrum direction `κ`, observed in bivariate Gaussian noise. The
//! crate fits this model with homoscedastic or phase-noise (heteroscedastic)
//! covariance, extracts the real spectrum by the maximum method, and provides
//! asymptotic and bootstrap uncertainty, goodness-of-fit diagnostics and
//! file I/O.

// `!(x > 0.0)` also rejects NaN; index loops mirror the matrix formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod algebra;
pub mod averaging;
pub mod bootstrap;
pub mod chart;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod frechet;
pub mod helmert;
pub mod het;
pub mod hom;
pub mod io;
pub mod optim;
pub mod phase;
pub mod simulate;
pub mod validation;

pub use algebra::{
    bul, comp_of, dia, mahal_dist, mahal_inner, mahal_norm, mat_of, optimal_position, proj_distance, vec_of, Mat2,
    ProjectivePoint, Spd2, Vec2, C64,
};
pub use averaging::{average, averaging_spectrum, AveragedSignal, PhaseChoice};
pub use bootstrap::{
    bootstrap_data, parametric_bootstrap, Band, BiasCorrection, BootstrapOptions, BootstrapResult, FittedModel,
};
pub use chart::{chart_forward, chart_inverse, Chart, ChartPoint};
pub use data::DataMatrix;
pub use diagnostics::{
    compare_models, gof, ks_test, snr_flat_std, standardized_residuals, ComparisonReport, FlatRegions, GofReport,
    KsResult, ModelRef, Normalize,
};
pub use error::{Error, Result};
pub use frechet::{
    inconsistency_gradient, population_f_decomposition, rho, sandwich_covariance, spectrum_covariance_full,
    PopulationF, SandwichCov,
};
pub use helmert::{dehelmertize, helmertize, helmertize_data, HelmertBasis};
pub use het::{
    boundary_kstar, boundary_sequence_loglik, fit_het, het_loglik, sigma_b, truncation_check, BoundaryKstar,
    HetFitReport, HetOptions, HetParams,
};
pub use hom::{fit_hom, hom_loglik, FitReport, HomOptions, HomParams};
pub use io::{read_csv, read_result, write_csv, write_result, OutputFormat, ResultDoc, RunConfig};
pub use phase::{extract_spectrum, jacobian_g, max_method_lambda, SpectrumResult};
pub use simulate::{simulate, simulate_het, simulate_hom, Generator, NoiseSpec, SimSpec};
