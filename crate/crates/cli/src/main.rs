use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use driftspec::diagnostics::{ModelRef, Normalize};
use driftspec::io::{BandsDoc, ModelKind};
use driftspec::validation::{run_criterion, Scale, CRITERIA};
use driftspec::{
    average, averaging_spectrum, bootstrap::BootstrapOptions, compare_models, extract_spectrum, fit_het, fit_hom, gof,
    helmertize, helmertize_data, parametric_bootstrap, read_csv, read_result, sandwich_covariance, simulate,
    snr_flat_std, spectrum_covariance_full, write_csv, write_result, DataMatrix, Error, FittedModel, FlatRegions,
    OutputFormat, PhaseChoice, ProjectivePoint, ResultDoc, RunConfig, SimSpec,
};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_CONVERGENCE: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "driftspec",
    version,
    about = "Drift-model spectrum estimation for batched complex data"
)]
struct Cli {
    /// Master seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel maps.
    #[arg(long, global = true, env = "DRIFTSPEC_THREADS")]
    threads: Option<usize>,
    /// TOML run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Column average and its phase-corrected real part.
    Average {
        data: PathBuf,
        /// Fixed phase in radians instead of the maximum method.
        #[arg(long)]
        phase: Option<f64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Fit the homoscedastic drift model.
    FitHom {
        data: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Fit the phase-noise (heteroscedastic) drift model.
    FitHet {
        data: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long)]
        start_c_opt: Option<usize>,
        /// Pin the phase-noise scale instead of estimating it.
        #[arg(long)]
        fix_sigma_tilde: Option<f64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Draw a data matrix from a JSON simulation spec.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parametric bootstrap bands for the spectrum.
    Bootstrap {
        /// Data CSV to fit, or a result file with `--from-fit`.
        input: PathBuf,
        /// Treat the input as a previously written fit result.
        #[arg(long)]
        from_fit: bool,
        /// Defaults to the configured model, else hom.
        #[arg(long, value_enum)]
        model: Option<DriftModel>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        level: Option<f64>,
        #[arg(long)]
        bias_correct: bool,
        #[arg(long, default_value_t = 50)]
        pilot_replicates: usize,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Sandwich covariance and normal-theory bands for the spectrum.
    ///
    /// Assumes the drift amplitudes have a finite fourth moment; this is not
    /// checked from data.
    Asymptotics {
        data: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Kolmogorov-Smirnov tests on standardized residuals.
    Gof {
        data: PathBuf,
        /// Defaults to the configured model, else hom.
        #[arg(long, value_enum)]
        model: Option<DriftModel>,
        /// Reuse parameters from a result file instead of refitting.
        #[arg(long)]
        fit_result: Option<PathBuf>,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Standard deviation of the spectrum over flat regions.
    Snr {
        data: PathBuf,
        /// Defaults to the configured model.
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
        /// Half-open index ranges, e.g. `0:10,30:40`.
        #[arg(long)]
        regions: Option<String>,
        #[arg(long, value_enum, default_value_t = NormArg::MinMax)]
        normalize: NormArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit averaging and drift models side by side.
    Compare {
        data: PathBuf,
        #[arg(long)]
        regions: Option<String>,
        /// Include the phase-noise model.
        #[arg(long)]
        het: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the numerical validation suite.
    ValidateTheory {
        /// Reduced replicate counts; runtime budgets are not enforced.
        #[arg(long)]
        quick: bool,
        /// Run only these criteria (repeatable).
        #[arg(long = "criterion")]
        criteria: Vec<u8>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    maxiter: Option<usize>,
    #[arg(long)]
    min_delta_loglik: Option<f64>,
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Output path; JSON goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
    /// Attach goodness-of-fit diagnostics to the result.
    #[arg(long)]
    gof: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum DriftModel {
    Hom,
    Het,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ModelArg {
    Averaging,
    Hom,
    Het,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum NormArg {
    MinMax,
    None,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum FormatArg {
    Json,
    CsvBundle,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => OutputFormat::Json,
            FormatArg::CsvBundle => OutputFormat::CsvBundle,
        }
    }
}

/// Failure carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            msg: msg.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_data_error() { EXIT_DATA } else { EXIT_CONVERGENCE };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    let cfg = match path {
        None => RunConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Failure::usage(format!("invalid config {}: {e}", p.display())))?
        }
    };
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(cfg)
}

fn apply_fit_args(cfg: &mut RunConfig, f: &FitArgs) -> CliResult<()> {
    if let Some(m) = f.maxiter {
        cfg.maxiter = m;
    }
    if let Some(d) = f.min_delta_loglik {
        cfg.min_delta_loglik = d;
    }
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))
}

fn run(cli: Cli) -> CliResult<u8> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Failure::usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot configure threads: {e}")))?;
    }
    let mut cfg = load_config(cli.config.as_deref())?;
    let seed = cli.seed.or(cfg.bootstrap.seed).unwrap_or(0);

    match cli.command {
        Command::Average { data, phase, out } => {
            let y = read_data(&data)?;
            let z = average(&y)?;
            let choice = phase.map_or(PhaseChoice::Auto, PhaseChoice::Fixed);
            let doc = ResultDoc::from_averaging(&z, averaging_spectrum(&z, choice)?);
            emit_doc(&doc, &out)?;
            Ok(0)
        }
        Command::FitHom { data, fit, out } => {
            apply_fit_args(&mut cfg, &fit)?;
            let y = read_data(&data)?;
            let doc = match fit_hom(&y, &cfg.hom_options()) {
                Ok(f) => {
                    let mut d = ResultDoc::from_hom(&f, spectrum_or_warn(&f.params.kappa));
                    if out.gof {
                        d.diagnostics = Some(gof(&y, ModelRef::Hom(&f.params))?);
                    }
                    d
                }
                Err(e) => failed_fit(ModelKind::Hom, e)?,
            };
            emit_doc(&doc, &out)?;
            Ok(converged_code(&doc))
        }
        Command::FitHet {
            data,
            fit,
            start_c_opt,
            fix_sigma_tilde,
            out,
        } => {
            apply_fit_args(&mut cfg, &fit)?;
            if let Some(s) = start_c_opt {
                cfg.start_c_opt = s;
            }
            let y = read_data(&data)?;
            let mut opts = cfg.het_options();
            opts.fix_sigma_tilde = fix_sigma_tilde;
            let doc = match fit_het(&y, &opts) {
                Ok(f) => {
                    let mut d = ResultDoc::from_het(&f, spectrum_or_warn(&f.params.kappa));
                    if out.gof {
                        d.diagnostics = Some(gof(&y, ModelRef::Het(&f.params))?);
                    }
                    d
                }
                Err(e) => failed_fit(ModelKind::Het, e)?,
            };
            emit_doc(&doc, &out)?;
            Ok(converged_code(&doc))
        }
        Command::Simulate { spec, out } => {
            let text = std::fs::read_to_string(&spec).map_err(Error::from)?;
            let mut s: SimSpec =
                serde_json::from_str(&text).map_err(|e| Error::InvalidSpec(format!("{}: {e}", spec.display())))?;
            if let Some(sd) = cli.seed {
                s.seed = sd;
            }
            write_csv(&simulate(&s)?, &out)?;
            Ok(0)
        }
        Command::Bootstrap {
            input,
            from_fit,
            model,
            replicates,
            level,
            bias_correct,
            pilot_replicates,
            fit,
            out,
        } => {
            apply_fit_args(&mut cfg, &fit)?;
            if let Some(r) = replicates {
                cfg.bootstrap.replicates = r;
            }
            if let Some(l) = level {
                cfg.bootstrap.level = l;
            }
            cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
            let fitted = if from_fit {
                read_result(&input)?.to_fitted()?
            } else {
                let y = read_data(&input)?;
                match model.unwrap_or_else(|| drift_model(cfg.model)) {
                    DriftModel::Hom => FittedModel::Hom(fit_hom(&y, &cfg.hom_options())?),
                    DriftModel::Het => FittedModel::Het(fit_het(&y, &cfg.het_options())?),
                }
            };
            let opts = BootstrapOptions {
                replicates: cfg.bootstrap.replicates,
                level: cfg.bootstrap.level,
                bias_correct: bias_correct || cfg.bootstrap.bias_correct,
                pilot_replicates,
                seed,
                hom: cfg.hom_options(),
                het: cfg.het_options(),
            };
            let res = parametric_bootstrap(&fitted, &opts)?;
            let mut doc = ResultDoc::from_fitted(&fitted, Some(res.point.clone()));
            doc.bands = Some(BandsDoc::from(&res));
            emit_doc(&doc, &out)?;
            Ok(0)
        }
        Command::Asymptotics { data, level, fit, out } => {
            apply_fit_args(&mut cfg, &fit)?;
            if !(level > 0.0 && level < 1.0) {
                return Err(Failure::usage(format!("--level must lie in (0, 1), got {level}")));
            }
            let y = read_data(&data)?;
            let f = fit_hom(&y, &cfg.hom_options())?;
            let doc = asymptotics(&y, &f, level)?;
            emit_json(&doc, out.as_deref())?;
            Ok(converged_code(&doc.fit))
        }
        Command::Gof {
            data,
            model,
            fit_result,
            fit,
            out,
        } => {
            apply_fit_args(&mut cfg, &fit)?;
            let y = read_data(&data)?;
            let fitted = match fit_result {
                Some(p) => read_result(&p)?.to_fitted()?,
                None => match model.unwrap_or_else(|| drift_model(cfg.model)) {
                    DriftModel::Hom => FittedModel::Hom(fit_hom(&y, &cfg.hom_options())?),
                    DriftModel::Het => FittedModel::Het(fit_het(&y, &cfg.het_options())?),
                },
            };
            let r = match &fitted {
                FittedModel::Hom(f) => gof(&y, ModelRef::Hom(&f.params))?,
                FittedModel::Het(f) => gof(&y, ModelRef::Het(&f.params))?,
            };
            emit_json(&r, out.as_deref())?;
            Ok(0)
        }
        Command::Snr {
            data,
            model,
            regions,
            normalize,
            out,
        } => {
            let regions = pick_regions(regions.as_deref(), &cfg)?;
            let y = read_data(&data)?;
            let model = model.unwrap_or(match cfg.model {
                ModelKind::Averaging => ModelArg::Averaging,
                ModelKind::Hom => ModelArg::Hom,
                ModelKind::Het => ModelArg::Het,
            });
            let spectrum = match model {
                ModelArg::Averaging => averaging_spectrum(&average(&y)?, PhaseChoice::Auto)?,
                ModelArg::Hom => extract_spectrum(&fit_hom(&y, &cfg.hom_options())?.params.kappa)?,
                ModelArg::Het => extract_spectrum(&fit_het(&y, &cfg.het_options())?.params.kappa)?,
            };
            let norm = match normalize {
                NormArg::MinMax => Normalize::MinMax,
                NormArg::None => Normalize::None,
            };
            #[derive(Serialize)]
            struct SnrDoc {
                model: String,
                normalize: Normalize,
                regions: FlatRegions,
                flat_std: f64,
            }
            let doc = SnrDoc {
                model: format!("{model:?}").to_lowercase(),
                normalize: norm,
                flat_std: snr_flat_std(&spectrum.i, &regions, norm)?,
                regions,
            };
            emit_json(&doc, out.as_deref())?;
            Ok(0)
        }
        Command::Compare {
            data,
            regions,
            het,
            out,
        } => {
            let regions = pick_regions(regions.as_deref(), &cfg)?;
            let y = read_data(&data)?;
            emit_json(&compare_models(&y, &regions, het)?, out.as_deref())?;
            Ok(0)
        }
        Command::ValidateTheory { quick, criteria, out } => {
            let scale = if quick { Scale::Quick } else { Scale::Full };
            let ids: Vec<u8> = if criteria.is_empty() {
                CRITERIA.iter().map(|c| c.0).collect()
            } else {
                criteria
            };
            if let Some(bad) = ids.iter().find(|i| !CRITERIA.iter().any(|c| c.0 == **i)) {
                return Err(Failure::usage(format!("unknown criterion {bad}; valid ids are 1..=14")));
            }
            let mut reports = Vec::new();
            for id in ids {
                let r = run_criterion(id, scale, seed)?;
                print_line(&r.to_string());
                reports.push(r);
            }
            if let Some(p) = out {
                write_json_file(&reports, &p)?;
            }
            let failed = reports.iter().filter(|r| !r.passed).count();
            print_line(&format!(
                "{} of {} criteria passed",
                reports.len() - failed,
                reports.len()
            ));
            Ok(if failed == 0 { 0 } else { EXIT_CONVERGENCE })
        }
    }
}

/// Drift model for commands that need one; averaging falls back to hom.
fn drift_model(kind: ModelKind) -> DriftModel {
    match kind {
        ModelKind::Het => DriftModel::Het,
        ModelKind::Averaging | ModelKind::Hom => DriftModel::Hom,
    }
}

fn read_data(path: &Path) -> CliResult<DataMatrix> {
    read_csv(path).map_err(|e| Failure {
        code: EXIT_DATA,
        msg: format!("{}: {e}", path.display()),
    })
}

fn spectrum_or_warn(kappa: &[driftspec::C64]) -> Option<driftspec::SpectrumResult> {
    match extract_spectrum(kappa) {
        Ok(s) => Some(s),
        Err(e) => {
            log::warn!("spectrum not extracted: {e}");
            None
        }
    }
}

/// Numerical fit failures still produce a document so callers can inspect
/// the error; data errors abort.
fn failed_fit(model: ModelKind, e: Error) -> CliResult<ResultDoc> {
    if e.is_data_error() {
        return Err(e.into());
    }
    eprintln!("error: {e}");
    Ok(ResultDoc::failed(model, &e))
}

fn converged_code(doc: &ResultDoc) -> u8 {
    if doc.converged {
        0
    } else {
        EXIT_CONVERGENCE
    }
}

fn pick_regions(arg: Option<&str>, cfg: &RunConfig) -> CliResult<FlatRegions> {
    match (arg, &cfg.flat_regions) {
        (Some(s), _) => parse_regions(s),
        (None, Some(r)) => Ok(r.clone()),
        (None, None) => Err(Failure::usage(
            "flat regions required: pass --regions or set flat_regions in the config",
        )),
    }
}

fn parse_regions(s: &str) -> CliResult<FlatRegions> {
    let bad = || Failure::usage(format!("cannot parse regions {s:?}; expected e.g. 0:10,30:40"));
    let v = s
        .split(',')
        .map(|part| {
            let (a, b) = part.trim().split_once(':').ok_or_else(bad)?;
            Ok((
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            ))
        })
        .collect::<CliResult<Vec<(usize, usize)>>>()?;
    FlatRegions::new(v).map_err(|e| Failure::usage(e.to_string()))
}

fn emit_doc(doc: &ResultDoc, out: &OutArgs) -> CliResult<()> {
    match &out.out {
        Some(p) => Ok(write_result(doc, p, out.format.into())?),
        None if out.format == FormatArg::CsvBundle => Err(Failure::usage("--format csv-bundle needs --out <dir>")),
        None => {
            print_line(&doc.to_json()?);
            Ok(())
        }
    }
}

fn emit_json<T: Serialize>(v: &T, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(p) => write_json_file(v, p),
        None => {
            print_line(&to_json(v)?);
            Ok(())
        }
    }
}

/// Writes to stdout; a closed pipe ends the process quietly.
fn print_line(s: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if let Err(e) = writeln!(out, "{s}") {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: cannot write to stdout: {e}");
        std::process::exit(i32::from(EXIT_DATA));
    }
}

fn to_json<T: Serialize>(v: &T) -> CliResult<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Io(e.to_string()).into())
}

fn write_json_file<T: Serialize>(v: &T, p: &Path) -> CliResult<()> {
    std::fs::write(p, to_json(v)? + "\n").map_err(Error::from)?;
    Ok(())
}

#[derive(Serialize)]
struct AsymptoticsDoc {
    fit: ResultDoc,
    level: f64,
    #[serde(rename = "I_sd")]
    i_sd: Vec<f64>,
    #[serde(rename = "I_lower")]
    i_lower: Vec<f64>,
    #[serde(rename = "I_upper")]
    i_upper: Vec<f64>,
    /// Covariance of the chart coordinates, scaled by the batch count.
    cov_beta: Vec<Vec<f64>>,
}

fn asymptotics(y: &DataMatrix, f: &driftspec::FitReport, level: f64) -> CliResult<AsymptoticsDoc> {
    use statrs::distribution::{ContinuousCDF, Normal};
    let spec = extract_spectrum(&f.params.kappa)?;
    let yh = helmertize_data(y)?;
    let kh = ProjectivePoint::new(helmertize(&f.params.kappa)?)?;
    let p = f.params.sigma.inverse();
    let cov = sandwich_covariance(&yh, &kh, &p)?;
    let full = spectrum_covariance_full(&cov, &kh)?;
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(0.5 + level / 2.0);
    let i_sd: Vec<f64> = (0..spec.i.len()).map(|j| full[(j, j)].max(0.0).sqrt()).collect();
    let i_lower = spec.i.iter().zip(&i_sd).map(|(v, s)| v - z * s).collect();
    let i_upper = spec.i.iter().zip(&i_sd).map(|(v, s)| v + z * s).collect();
    let cb = &cov.cov_beta;
    Ok(AsymptoticsDoc {
        fit: ResultDoc::from_hom(f, Some(spec)),
        level,
        i_sd,
        i_lower,
        i_upper,
        cov_beta: (0..cb.nrows()).map(|r| cb.row(r).iter().copied().collect()).collect(),
    })
}
