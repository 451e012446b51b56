use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LatkdError>;

#[derive(Debug, Error)]
pub enum LatkdError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty input file: {0}")]
    EmptyFile(PathBuf),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("column `{0}` not found")]
    MissingColumn(String),

    #[error("column `{column}` row {row}: non-numeric value `{value}`")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },

    #[error("column `{column}` row {row}: negative value {value} cannot be log-transformed")]
    NegativeLogInput {
        column: String,
        row: usize,
        value: f64,
    },

    #[error("invalid column spec `{column}`: {reason}")]
    InvalidColumnSpec { column: String, reason: String },

    #[error("dimension mismatch: expected width {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("row count mismatch: expected {expected} rows, got {actual}")]
    RowMismatch { expected: usize, actual: usize },

    #[error("row {row} is not a probability distribution ({detail})")]
    InvalidDistribution { row: usize, detail: String },

    #[error("training data must contain both classes (positives: {positives}, negatives: {negatives})")]
    SingleClass { positives: usize, negatives: usize },

    #[error("{0} rows have no label")]
    Unlabeled(usize),

    #[error("loss diverged at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("registry has no `{kind}` model for frame(s) {missing:?}")]
    RegistryGap { kind: String, missing: Vec<usize> },

    #[error("frame {frame} already registered for `{kind}`")]
    DuplicateFrame { kind: String, frame: usize },

    #[error("unknown blob {0}")]
    UnknownHash(String),

    #[error("integrity error: blob {expected} hashed to {actual}")]
    Integrity { expected: String, actual: String },

    #[error("no positive labels, AUPRC is undefined")]
    NoPositives,

    #[error("baseline mean is zero, relative difference is undefined")]
    ZeroBaseline,

    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error("run directory is locked: {0}")]
    Locked(PathBuf),

    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<LatkdError>,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl LatkdError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            LatkdError::MissingFile(path)
        } else {
            LatkdError::Io { path, source }
        }
    }

    /// Stable machine-readable identifier, used by the CLI error JSON and the C ABI.
    pub fn kind(&self) -> &'static str {
        match self {
            LatkdError::MissingFile(_) => "missing_file",
            LatkdError::Io { .. } => "io",
            LatkdError::EmptyFile(_) => "empty_file",
            LatkdError::Csv(_) => "csv",
            LatkdError::MissingColumn(_) => "missing_column",
            LatkdError::NonNumeric { .. } => "non_numeric",
            LatkdError::NegativeLogInput { .. } => "negative_log_input",
            LatkdError::InvalidColumnSpec { .. } => "invalid_column_spec",
            LatkdError::DimensionMismatch { .. } => "dimension_mismatch",
            LatkdError::RowMismatch { .. } => "row_mismatch",
            LatkdError::InvalidDistribution { .. } => "invalid_distribution",
            LatkdError::SingleClass { .. } => "single_class",
            LatkdError::Unlabeled(_) => "unlabeled",
            LatkdError::Divergence { .. } => "divergence",
            LatkdError::RegistryGap { .. } => "registry_gap",
            LatkdError::DuplicateFrame { .. } => "duplicate_frame",
            LatkdError::UnknownHash(_) => "unknown_hash",
            LatkdError::Integrity { .. } => "integrity",
            LatkdError::NoPositives => "no_positives",
            LatkdError::ZeroBaseline => "zero_baseline",
            LatkdError::InfeasibleScenario(_) => "infeasible_scenario",
            LatkdError::InvalidConfig(_) => "invalid_config",
            LatkdError::FormatVersion { .. } => "format_version",
            LatkdError::Malformed(_) => "malformed",
            LatkdError::Locked(_) => "locked",
            LatkdError::Frame { source, .. } => source.kind(),
            LatkdError::Json(_) => "json",
        }
    }

    pub(crate) fn in_frame(self, frame: usize) -> Self {
        LatkdError::Frame {
            frame,
            source: Box::new(self),
        }
    }
}
