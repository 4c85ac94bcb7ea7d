use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),
    #[error("empty data")]
    EmptyData,
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("degenerate spectrum: max equals min")]
    DegenerateSpectrum,
    #[error("conditioning vector is numerically zero")]
    ZeroDirection,
    #[error("covariance matrix is singular")]
    SingularSigma,
    #[error("per-batch covariance of batch {0} is singular")]
    SingularSigmaB(usize),
    #[error("index {index} out of range 0..{len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("phase is undetermined: kappa^T kappa is numerically zero")]
    PhaseDegenerate,
    #[error("sign is undetermined: |max I| equals |min I|")]
    SignDegenerate,
    #[error("point lies on a singularity set of the spectrum map")]
    SingularityM1M2,
    #[error("point is outside the chart domain")]
    ChartDomain,
    #[error("mean Hessian is not positive definite")]
    SingularHessian,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("first batch is degenerate: {0}")]
    DegenerateFirstBatch(String),
    #[error("optimizer failure: {0}")]
    OptimizerFailure(String),
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error("{failed} of {total} bootstrap refits failed (first error: {first})")]
    RefitFailure { failed: usize, total: usize, first: String },
    #[error("too few samples: need at least {min}, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("region {0} is out of range or overlaps another region")]
    RegionOutOfRange(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("incomplete grid, missing cells (batch, freq_index): {}", fmt_cells(.0))]
    IncompleteGrid(Vec<(i64, i64)>),
    #[error("duplicate cell (batch {0}, freq_index {1})")]
    DuplicateCell(i64, i64),
    #[error("frequency axis is not strictly monotone: {0}")]
    NonMonotoneFrequency(String),
    #[error("io error: {0}")]
    Io(String),
}

fn fmt_cells(cells: &[(i64, i64)]) -> String {
    let shown: Vec<String> = cells.iter().take(20).map(|(b, f)| format!("({b},{f})")).collect();
    let mut s = shown.join(", ");
    if cells.len() > 20 {
        s.push_str(&format!(" and {} more", cells.len() - 20));
    }
    s
}

impl Error {
    /// True for errors caused by malformed input data rather than numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::IncompleteGrid(_)
                | Error::DuplicateCell(..)
                | Error::NonMonotoneFrequency(_)
                | Error::EmptyData
                | Error::DegenerateData(_)
                | Error::DimensionMismatch { .. }
                | Error::InvalidDimension(_)
                | Error::InvalidSpec(_)
                | Error::RegionOutOfRange(_)
                | Error::TooFewSamples { .. }
                | Error::DegenerateFirstBatch(_)
                | Error::Io(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
