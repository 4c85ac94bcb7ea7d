//! CSV data files, result documents and run configuration.
//!
//! CSV floats are written with 17 significant digits; JSON floats use the
//! shortest representation that parses back to the same binary64 value.
//! Both round trip bit-exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::algebra::C64;
use crate::averaging::AveragedSignal;
use crate::bootstrap::{BiasCorrection, BootstrapResult, FittedModel};
use crate::data::DataMatrix;
use crate::diagnostics::{FlatRegions, GofReport};
use crate::error::{Error, Result};
use crate::het::{HetFitReport, HetParams};
use crate::hom::{FitReport, HomParams};
use crate::phase::{DegenerateFlags, SpectrumResult};

pub const CSV_HEADER: [&str; 5] = ["batch", "freq_index", "freq_hz", "re", "im"];

/// Formats `x` with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<DataMatrix> {
    read_csv_from(fs::File::open(path)?)
}

/// Parses long-format CSV. Rows may come in any order; the result is sorted
/// by `(batch, freq_index)`.
pub fn read_csv_from(reader: impl Read) -> Result<DataMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_err(&e, 1))?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header {}", CSV_HEADER.join(",")),
        });
    }

    let mut cells: BTreeMap<(i64, i64), (f64, C64)> = BTreeMap::new();
    let mut hz_by_index: BTreeMap<i64, f64> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(&e, 0))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| -> Result<&str> {
            rec.get(i).ok_or_else(|| Error::Parse {
                line,
                msg: format!("missing column {}", CSV_HEADER[i]),
            })
        };
        let int = |i: usize| -> Result<i64> {
            field(i)?.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("{} is not an integer", CSV_HEADER[i]),
            })
        };
        let real = |i: usize| -> Result<f64> {
            let v: f64 = field(i)?.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("{} is not a number", CSV_HEADER[i]),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Parse {
                    line,
                    msg: format!("{} is not finite", CSV_HEADER[i]),
                })
            }
        };
        let (b, nu, hz) = (int(0)?, int(1)?, real(2)?);
        let z = C64::new(real(3)?, real(4)?);
        match hz_by_index.get(&nu) {
            Some(&h) if h.to_bits() != hz.to_bits() => {
                return Err(Error::Parse {
                    line,
                    msg: format!("freq_hz {hz} for freq_index {nu} disagrees with earlier value {h}"),
                })
            }
            _ => {
                hz_by_index.insert(nu, hz);
            }
        }
        if cells.insert((b, nu), (hz, z)).is_some() {
            return Err(Error::DuplicateCell(b, nu));
        }
    }
    if cells.is_empty() {
        return Err(Error::EmptyData);
    }

    let batches: BTreeSet<i64> = cells.keys().map(|k| k.0).collect();
    let freqs: Vec<i64> = hz_by_index.keys().copied().collect();
    let missing: Vec<(i64, i64)> = batches
        .iter()
        .flat_map(|&b| freqs.iter().map(move |&f| (b, f)))
        .filter(|k| !cells.contains_key(k))
        .collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteGrid(missing));
    }
    let values = cells.values().map(|v| v.1).collect();
    DataMatrix::with_axes(
        values,
        batches.len(),
        freqs.len(),
        hz_by_index.values().copied().collect(),
        batches.into_iter().collect(),
    )
}

fn csv_err(e: &csv::Error, fallback_line: usize) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line() as usize);
    Error::Parse {
        line,
        msg: e.to_string(),
    }
}

pub fn write_csv(y: &DataMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write_csv_to(y, &mut f)?;
    f.flush()?;
    Ok(())
}

/// Writes one row per cell; `freq_index` is the column position.
pub fn write_csv_to(y: &DataMatrix, w: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.to_string());
    wtr.write_record(CSV_HEADER).map_err(io)?;
    for (b, &id) in y.batch_ids().iter().enumerate() {
        for (nu, &hz) in y.freq_hz().iter().enumerate() {
            let z = y.get(b, nu);
            wtr.write_record([
                id.to_string(),
                nu.to_string(),
                fmt_f64(hz),
                fmt_f64(z.re),
                fmt_f64(z.im),
            ])
            .map_err(io)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Averaging,
    Hom,
    Het,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Averaging => "averaging",
            ModelKind::Hom => "hom",
            ModelKind::Het => "het",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragingParams {
    pub average: Vec<C64>,
}

/// Model parameters; the variant is determined by which fields are present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamsDoc {
    Het(HetParams),
    Hom(HomParams),
    Averaging(AveragingParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandsDoc {
    pub level: f64,
    pub replicates: usize,
    pub failed: usize,
    #[serde(rename = "I_lower")]
    pub i_lower: Vec<f64>,
    #[serde(rename = "I_upper")]
    pub i_upper: Vec<f64>,
    pub omega_lower: Vec<f64>,
    pub omega_upper: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<BiasCorrection>,
}

impl From<&BootstrapResult> for BandsDoc {
    fn from(r: &BootstrapResult) -> Self {
        BandsDoc {
            level: r.level,
            replicates: r.replicates,
            failed: r.failed,
            i_lower: r.bands_i.iter().map(|b| b.lower).collect(),
            i_upper: r.bands_i.iter().map(|b| b.upper).collect(),
            omega_lower: r.bands_omega.iter().map(|b| b.lower).collect(),
            omega_upper: r.bands_omega.iter().map(|b| b.upper).collect(),
            bias: r.bias,
        }
    }
}

/// Serialized outcome of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDoc {
    pub model: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamsDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumResult>,
    #[serde(default)]
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_warning: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<GofReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bands: Option<BandsDoc>,
}

impl ResultDoc {
    fn empty(model: ModelKind) -> Self {
        ResultDoc {
            model,
            params: None,
            spectrum: None,
            loglik_trace: Vec::new(),
            converged: false,
            n_iter: None,
            boundary_warning: None,
            error: None,
            diagnostics: None,
            bands: None,
        }
    }

    pub fn from_averaging(z: &AveragedSignal, spectrum: SpectrumResult) -> Self {
        ResultDoc {
            params: Some(ParamsDoc::Averaging(AveragingParams { average: z.0.clone() })),
            spectrum: Some(spectrum),
            converged: true,
            ..Self::empty(ModelKind::Averaging)
        }
    }

    pub fn from_hom(fit: &FitReport, spectrum: Option<SpectrumResult>) -> Self {
        ResultDoc {
            params: Some(ParamsDoc::Hom(fit.params.clone())),
            spectrum,
            loglik_trace: fit.loglik_trace.clone(),
            converged: fit.converged,
            n_iter: Some(fit.n_iter),
            ..Self::empty(ModelKind::Hom)
        }
    }

    pub fn from_het(fit: &HetFitReport, spectrum: Option<SpectrumResult>) -> Self {
        ResultDoc {
            params: Some(ParamsDoc::Het(fit.params.clone())),
            spectrum,
            loglik_trace: fit.loglik_trace.clone(),
            converged: fit.converged,
            n_iter: Some(fit.n_iter),
            boundary_warning: Some(fit.boundary_warning),
            ..Self::empty(ModelKind::Het)
        }
    }

    pub fn from_fitted(fit: &FittedModel, spectrum: Option<SpectrumResult>) -> Self {
        match fit {
            FittedModel::Hom(f) => Self::from_hom(f, spectrum),
            FittedModel::Het(f) => Self::from_het(f, spectrum),
        }
    }

    /// A run that produced no estimate.
    pub fn failed(model: ModelKind, err: &Error) -> Self {
        ResultDoc {
            error: Some(err.to_string()),
            ..Self::empty(model)
        }
    }

    /// Reconstructs the fit so it can seed a bootstrap.
    pub fn to_fitted(&self) -> Result<FittedModel> {
        let n_iter = self.n_iter.unwrap_or(self.loglik_trace.len());
        match (&self.model, &self.params) {
            (ModelKind::Hom, Some(ParamsDoc::Hom(p))) => Ok(FittedModel::Hom(FitReport {
                params: p.clone(),
                loglik_trace: self.loglik_trace.clone(),
                n_iter,
                converged: self.converged,
            })),
            (ModelKind::Het, Some(ParamsDoc::Het(p))) => Ok(FittedModel::Het(HetFitReport {
                params: p.clone(),
                loglik_trace: self.loglik_trace.clone(),
                n_iter,
                converged: self.converged,
                boundary_warning: self.boundary_warning.unwrap_or(false),
            })),
            _ => Err(Error::DegenerateData(format!(
                "result document for model {} carries no fitted drift parameters",
                self.model
            ))),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        check_finite(self)?;
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

/// JSON cannot carry NaN or infinities; refuse rather than write `null`.
fn check_finite(doc: &ResultDoc) -> Result<()> {
    let v = serde_json::to_value(doc).map_err(|e| Error::Io(e.to_string()))?;
    fn has_null(v: &serde_json::Value) -> bool {
        match v {
            serde_json::Value::Null => true,
            serde_json::Value::Array(a) => a.iter().any(has_null),
            serde_json::Value::Object(o) => o.values().any(has_null),
            _ => false,
        }
    }
    if has_null(&v) {
        return Err(Error::DegenerateData("result contains non-finite values".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Json,
    CsvBundle,
}

pub fn write_result(doc: &ResultDoc, path: impl AsRef<Path>, format: OutputFormat) -> Result<()> {
    match format {
        OutputFormat::Json => {
            let s = doc.to_json()?;
            fs::write(path, s + "\n")?;
            Ok(())
        }
        OutputFormat::CsvBundle => write_bundle(doc, path.as_ref()),
    }
}

/// Reads a JSON file, or a bundle directory if `path` is a directory.
pub fn read_result(path: impl AsRef<Path>) -> Result<ResultDoc> {
    let path = path.as_ref();
    if path.is_dir() {
        read_bundle(path)
    } else {
        ResultDoc::from_json(&fs::read_to_string(path)?)
    }
}

const MANIFEST: &str = "manifest.json";

/// Scalars and file index of a csv bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    model: ModelKind,
    converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    boundary_warning: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    diagnostics: Option<GofReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scalars: Option<ParamScalars>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spectrum: Option<SpectrumScalars>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bands: Option<BandScalars>,
    files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum ParamScalars {
    Het {
        c: C64,
        sigma_tilde: f64,
        sigma0: crate::algebra::Spd2,
    },
    Hom {
        sigma: crate::algebra::Spd2,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SpectrumScalars {
    lambda_opt: f64,
    flipped: bool,
    degenerate_flags: DegenerateFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BandScalars {
    level: f64,
    replicates: usize,
    failed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<BiasCorrection>,
}

fn write_table(path: &Path, header: &[&str], cols: &[Vec<f64>]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut h = vec!["index"];
    h.extend_from_slice(header);
    wtr.write_record(&h).map_err(io)?;
    let n = cols.first().map_or(0, Vec::len);
    for i in 0..n {
        let mut rec = vec![i.to_string()];
        rec.extend(cols.iter().map(|c| fmt_f64(c[i])));
        wtr.write_record(&rec).map_err(io)?;
    }
    wtr.flush()?;
    Ok(())
}

fn read_table(path: &Path, ncols: usize) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(&e, 0))?;
    let mut cols = vec![Vec::new(); ncols];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(&e, 0))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != ncols + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("{}: expected {} columns", path.display(), ncols + 1),
            });
        }
        for (j, c) in cols.iter_mut().enumerate() {
            c.push(rec[j + 1].parse().map_err(|_| Error::Parse {
                line,
                msg: format!("{}: bad number", path.display()),
            })?);
        }
    }
    Ok(cols)
}

fn split(z: &[C64]) -> Vec<Vec<f64>> {
    vec![z.iter().map(|v| v.re).collect(), z.iter().map(|v| v.im).collect()]
}

fn join(cols: &[Vec<f64>]) -> Vec<C64> {
    cols[0].iter().zip(&cols[1]).map(|(&a, &b)| C64::new(a, b)).collect()
}

fn write_bundle(doc: &ResultDoc, dir: &Path) -> Result<()> {
    check_finite(doc)?;
    fs::create_dir_all(dir)?;
    let mut files = BTreeMap::new();
    let complex = |name: &str, z: &[C64], files: &mut BTreeMap<String, String>| -> Result<()> {
        let f = format!("{name}.csv");
        write_table(&dir.join(&f), &["re", "im"], &split(z))?;
        files.insert(name.to_string(), f);
        Ok(())
    };
    let scalars = match &doc.params {
        Some(ParamsDoc::Hom(p)) => {
            complex("psi", &p.psi, &mut files)?;
            complex("phi", &p.phi, &mut files)?;
            complex("kappa", &p.kappa, &mut files)?;
            Some(ParamScalars::Hom { sigma: p.sigma })
        }
        Some(ParamsDoc::Het(p)) => {
            complex("psi", &p.psi, &mut files)?;
            complex("phi", &p.phi, &mut files)?;
            complex("kappa", &p.kappa, &mut files)?;
            Some(ParamScalars::Het {
                c: p.c,
                sigma_tilde: p.sigma_tilde,
                sigma0: p.sigma0,
            })
        }
        Some(ParamsDoc::Averaging(a)) => {
            complex("average", &a.average, &mut files)?;
            None
        }
        None => None,
    };
    let spectrum = match &doc.spectrum {
        Some(s) => {
            write_table(
                &dir.join("spectrum.csv"),
                &["I", "omega"],
                &[s.i.clone(), s.omega.clone()],
            )?;
            files.insert("spectrum".into(), "spectrum.csv".into());
            Some(SpectrumScalars {
                lambda_opt: s.lambda_opt,
                flipped: s.flipped,
                degenerate_flags: s.degenerate_flags,
            })
        }
        None => None,
    };
    if !doc.loglik_trace.is_empty() {
        write_table(
            &dir.join("loglik_trace.csv"),
            &["loglik"],
            std::slice::from_ref(&doc.loglik_trace),
        )?;
        files.insert("loglik_trace".into(), "loglik_trace.csv".into());
    }
    let bands = match &doc.bands {
        Some(b) => {
            write_table(
                &dir.join("bands.csv"),
                &["I_lower", "I_upper", "omega_lower", "omega_upper"],
                &[
                    b.i_lower.clone(),
                    b.i_upper.clone(),
                    b.omega_lower.clone(),
                    b.omega_upper.clone(),
                ],
            )?;
            files.insert("bands".into(), "bands.csv".into());
            Some(BandScalars {
                level: b.level,
                replicates: b.replicates,
                failed: b.failed,
                bias: b.bias,
            })
        }
        None => None,
    };
    let m = Manifest {
        model: doc.model,
        converged: doc.converged,
        n_iter: doc.n_iter,
        boundary_warning: doc.boundary_warning,
        error: doc.error.clone(),
        diagnostics: doc.diagnostics,
        scalars,
        spectrum,
        bands,
        files,
    };
    let s = serde_json::to_string_pretty(&m).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(dir.join(MANIFEST), s + "\n")?;
    Ok(())
}

pub fn read_bundle(dir: &Path) -> Result<ResultDoc> {
    let m: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?).map_err(|e| Error::Parse {
        line: e.line(),
        msg: format!("{MANIFEST}: {e}"),
    })?;
    let table = |name: &str, ncols: usize| -> Result<Option<Vec<Vec<f64>>>> {
        match m.files.get(name) {
            Some(f) => read_table(&dir.join(f), ncols).map(Some),
            None => Ok(None),
        }
    };
    let need = |name: &str| -> Result<Vec<C64>> {
        table(name, 2)?.map(|c| join(&c)).ok_or_else(|| Error::Parse {
            line: 0,
            msg: format!("{MANIFEST}: missing file entry {name}"),
        })
    };
    let params = match (&m.model, &m.scalars) {
        (ModelKind::Hom, Some(ParamScalars::Hom { sigma })) => Some(ParamsDoc::Hom(HomParams {
            psi: need("psi")?,
            phi: need("phi")?,
            kappa: need("kappa")?,
            sigma: *sigma,
        })),
        (ModelKind::Het, Some(ParamScalars::Het { c, sigma_tilde, sigma0 })) => Some(ParamsDoc::Het(HetParams {
            psi: need("psi")?,
            phi: need("phi")?,
            kappa: need("kappa")?,
            c: *c,
            sigma_tilde: *sigma_tilde,
            sigma0: *sigma0,
        })),
        (ModelKind::Averaging, _) if m.files.contains_key("average") => Some(ParamsDoc::Averaging(AveragingParams {
            average: need("average")?,
        })),
        _ => None,
    };
    let spectrum = match (&m.spectrum, table("spectrum", 2)?) {
        (Some(s), Some(mut cols)) => {
            let omega = cols.pop().unwrap_or_default();
            let i = cols.pop().unwrap_or_default();
            Some(SpectrumResult {
                i,
                omega,
                lambda_opt: s.lambda_opt,
                flipped: s.flipped,
                degenerate_flags: s.degenerate_flags,
            })
        }
        _ => None,
    };
    let loglik_trace = table("loglik_trace", 1)?.map(|mut c| c.remove(0)).unwrap_or_default();
    let bands = match (&m.bands, table("bands", 4)?) {
        (Some(b), Some(mut cols)) => {
            let omega_upper = cols.pop().unwrap_or_default();
            let omega_lower = cols.pop().unwrap_or_default();
            let i_upper = cols.pop().unwrap_or_default();
            let i_lower = cols.pop().unwrap_or_default();
            Some(BandsDoc {
                level: b.level,
                replicates: b.replicates,
                failed: b.failed,
                i_lower,
                i_upper,
                omega_lower,
                omega_upper,
                bias: b.bias,
            })
        }
        _ => None,
    };
    Ok(ResultDoc {
        model: m.model,
        params,
        spectrum,
        loglik_trace,
        converged: m.converged,
        n_iter: m.n_iter,
        boundary_warning: m.boundary_warning,
        error: m.error,
        diagnostics: m.diagnostics,
        bands,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
    pub seed: Option<u64>,
    pub bias_correct: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 500,
            level: 0.95,
            seed: None,
            bias_correct: false,
        }
    }
}

/// Settings loadable from a configuration file. Command-line flags take
/// precedence over these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    pub maxiter: usize,
    pub min_delta_loglik: f64,
    pub start_c_opt: usize,
    pub delta: f64,
    pub bootstrap: BootstrapConfig,
    pub flat_regions: Option<FlatRegions>,
    pub output: Option<std::path::PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let het = crate::het::HetOptions::default();
        RunConfig {
            model: ModelKind::Hom,
            maxiter: het.maxiter,
            min_delta_loglik: het.min_delta_loglik,
            start_c_opt: het.start_c_opt,
            delta: het.delta,
            bootstrap: BootstrapConfig::default(),
            flat_regions: None,
            output: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.maxiter == 0 || self.start_c_opt == 0 || self.bootstrap.replicates == 0 {
            return bad("maxiter, start_c_opt and bootstrap.replicates must be positive".into());
        }
        if !(self.min_delta_loglik > 0.0) || !(self.delta > 0.0) {
            return bad("min_delta_loglik and delta must be positive".into());
        }
        if !(self.bootstrap.level > 0.0 && self.bootstrap.level < 1.0) {
            return bad(format!(
                "bootstrap.level must lie in (0, 1), got {}",
                self.bootstrap.level
            ));
        }
        Ok(())
    }

    pub fn hom_options(&self) -> crate::hom::HomOptions {
        crate::hom::HomOptions {
            maxiter: self.maxiter,
            min_delta_loglik: self.min_delta_loglik,
            ..Default::default()
        }
    }

    pub fn het_options(&self) -> crate::het::HetOptions {
        crate::het::HetOptions {
            maxiter: self.maxiter,
            min_delta_loglik: self.min_delta_loglik,
            start_c_opt: self.start_c_opt,
            delta: self.delta,
            hom: self.hom_options(),
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::Spd2;
    use crate::hom::{fit_hom, HomOptions};
    use crate::phase::extract_spectrum;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    const SMALL: &str = "batch,freq_index,freq_hz,re,im\n\
        1,0,10.0,1.0,0.5\n1,1,20.0,2.0,0.0\n1,2,30.0,3.0,-1.0\n\
        0,2,30.0,6.0,0.0\n0,0,10.0,4.0,1.0\n0,1,20.0,5.0,2.0\n";

    #[test]
    fn reads_small_grid_sorted() {
        let y = read_csv_from(SMALL.as_bytes()).unwrap();
        assert_eq!((y.n_batches(), y.n_freq()), (2, 3));
        assert_eq!(y.batch_ids(), &[0, 1]);
        assert_eq!(y.freq_hz(), &[10.0, 20.0, 30.0]);
        assert_eq!(y.get(0, 0), c(4.0, 1.0));
        assert_eq!(y.get(1, 2), c(3.0, -1.0));
    }

    #[test]
    fn grid_errors() {
        let missing = SMALL.replace("1,2,30.0,3.0,-1.0\n", "");
        assert_eq!(
            read_csv_from(missing.as_bytes()).unwrap_err(),
            Error::IncompleteGrid(vec![(1, 2)])
        );
        let dup = format!("{SMALL}0,1,20.0,5.0,2.0\n");
        assert_eq!(read_csv_from(dup.as_bytes()).unwrap_err(), Error::DuplicateCell(0, 1));
        let bad = SMALL.replace("1,1,20.0,2.0,0.0", "1,1,20.0,two,0.0");
        assert!(matches!(
            read_csv_from(bad.as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
        let nonmono = SMALL.replace(",20.0,", ",40.0,");
        assert!(matches!(
            read_csv_from(nonmono.as_bytes()),
            Err(Error::NonMonotoneFrequency(_))
        ));
        let header = SMALL.replace("freq_hz", "hz");
        assert!(matches!(
            read_csv_from(header.as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        let nan = SMALL.replace("3.0,-1.0", "NaN,-1.0");
        assert!(matches!(read_csv_from(nan.as_bytes()), Err(Error::Parse { .. })));
        let hz = SMALL.replace("1,1,20.0", "1,1,21.0");
        assert!(matches!(read_csv_from(hz.as_bytes()), Err(Error::Parse { .. })));
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(
            bits in proptest::collection::vec(any::<u64>(), 12),
            hz0 in -1e12f64..1e12,
        ) {
            let vals: Vec<C64> = bits
                .chunks(2)
                .map(|p| {
                    let f = |b: u64| {
                        let x = f64::from_bits(b);
                        if x.is_finite() { x } else { 0.5 }
                    };
                    c(f(p[0]), f(p[1]))
                })
                .collect();
            let hz = vec![hz0, hz0 + 1.0, hz0 + 2.5];
            let y = DataMatrix::with_axes(vals, 2, 3, hz, vec![-4, 9]).unwrap();
            let mut buf = Vec::new();
            write_csv_to(&y, &mut buf).unwrap();
            let back = read_csv_from(buf.as_slice()).unwrap();
            for (a, b) in y.values().iter().zip(back.values()) {
                prop_assert_eq!(a.re.to_bits(), b.re.to_bits());
                prop_assert_eq!(a.im.to_bits(), b.im.to_bits());
            }
            prop_assert_eq!(y.freq_hz(), back.freq_hz());
            prop_assert_eq!(y.batch_ids(), back.batch_ids());
        }
    }

    fn hom_doc() -> ResultDoc {
        let y = DataMatrix::from_rows(&[
            vec![c(1.0, 0.3), c(-0.2, 0.1), c(0.7, -0.9), c(0.1, 0.0)],
            vec![c(0.9, 0.2), c(-0.3, 0.3), c(0.6, -0.8), c(0.0, 0.2)],
            vec![c(1.2, 0.1), c(-0.1, 0.2), c(0.8, -1.1), c(0.3, 0.1)],
        ])
        .unwrap();
        let fit = fit_hom(&y, &HomOptions::default()).unwrap();
        let s = extract_spectrum(&fit.params.kappa).unwrap();
        ResultDoc::from_hom(&fit, Some(s))
    }

    fn het_doc() -> ResultDoc {
        let p = HetParams {
            psi: vec![c(1.0, 0.5), c(0.1 + 1e-17, -0.3)],
            phi: vec![c(2.0, 0.0), c(1.0 / 3.0, 0.25)],
            kappa: vec![c(0.6, 0.2), c(-0.1, 0.1), c(-0.5, -0.3)],
            c: c(0.125, std::f64::consts::PI),
            sigma_tilde: 0.07,
            sigma0: Spd2::from_entries(1.0, 0.2, 0.5).unwrap(),
        };
        let fit = HetFitReport {
            params: p,
            loglik_trace: vec![-10.0, -9.5, -9.25],
            n_iter: 3,
            converged: true,
            boundary_warning: false,
        };
        let mut d = ResultDoc::from_het(&fit, Some(extract_spectrum(&fit.params.kappa).unwrap()));
        d.bands = Some(BandsDoc {
            level: 0.95,
            replicates: 100,
            failed: 1,
            i_lower: vec![0.1, -0.7],
            i_upper: vec![0.9, 0.2],
            omega_lower: vec![-0.01, -0.02],
            omega_upper: vec![0.01, 0.02],
            bias: None,
        });
        d.diagnostics = Some(GofReport {
            p_real: 0.4,
            p_imag: 0.6,
            ks_stat_real: 0.01,
            ks_stat_imag: 0.02,
            n: 8,
        });
        d
    }

    #[test]
    fn json_round_trip_is_exact() {
        for d in [hom_doc(), het_doc()] {
            let back = ResultDoc::from_json(&d.to_json().unwrap()).unwrap();
            assert_eq!(back, d);
            assert!(back.to_fitted().is_ok());
        }
    }

    #[test]
    fn bundle_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for (k, d) in [hom_doc(), het_doc()].into_iter().enumerate() {
            let p = dir.path().join(format!("b{k}"));
            write_result(&d, &p, OutputFormat::CsvBundle).unwrap();
            assert!(p.join(MANIFEST).exists());
            assert_eq!(read_result(&p).unwrap(), d);
        }
    }

    #[test]
    fn failed_fit_serializes() {
        let d = ResultDoc::failed(ModelKind::Het, &Error::SingularSigma);
        let s = d.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["converged"], false);
        assert_eq!(v["error"], "covariance matrix is singular");
        assert!(d.to_fitted().is_err());
        assert_eq!(ResultDoc::from_json(&s).unwrap(), d);
    }

    #[test]
    fn non_finite_values_are_refused() {
        let mut d = hom_doc();
        d.loglik_trace.push(f64::NEG_INFINITY);
        assert!(d.to_json().is_err());
    }

    #[test]
    fn config_parses_and_validates() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"model":"het","maxiter":50,"bootstrap":{"replicates":20,"level":0.9},"flat_regions":[[0,4],[10,12]]}"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.het_options().maxiter, 50);
        assert_eq!(cfg.start_c_opt, 25);
        let mut bad = cfg.clone();
        bad.bootstrap.level = 1.0;
        assert!(bad.validate().is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"maxiterr":5}"#).is_err());
    }
}
