use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("index {index} out of range for dimension {bound}")]
    IndexOutOfRange { index: usize, bound: usize },

    /// The active-set normal equations stayed singular after the jitter retry.
    #[error("singular system on active set {active:?}")]
    SingularSystem { active: Vec<usize> },

    #[error("system dimension {dim} exceeds the active-set cap {cap}")]
    SystemTooLarge { dim: usize, cap: usize },

    #[error("column {index} ({name}) has zero norm")]
    DegenerateColumn { index: usize, name: String },

    #[error("sparsity level {sparsity} is invalid for dimension {dim}")]
    InvalidSparsity { sparsity: usize, dim: usize },

    #[error("cannot split {rows} rows across {machines} machines")]
    TooManyMachines { machines: usize, rows: usize },

    #[error("expected {expected} workers, found {found}")]
    WorkerCountMismatch { expected: usize, found: usize },

    #[error("worker {worker} is unavailable")]
    WorkerUnavailable { worker: usize },

    #[error("protocol violation: {kind} message with payload length {len} (allowed: {allowed:?})")]
    PrivacyViolation {
        kind: &'static str,
        len: usize,
        allowed: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing column '{0}'")]
    MissingColumn(String),

    #[error("column '{0}' is constant after encoding")]
    ConstantColumn(String),

    #[error("row {row}, column '{column}': cannot parse '{value}' as a number")]
    CellParse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("empty support set for {0}")]
    EmptySupport(&'static str),

    #[error("gamma_mu undefined: (T-1)*mu = {product} >= 1")]
    GammaUndefined { product: f64 },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable tag used in machine-parseable diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::SingularSystem { .. } => "singular_system",
            Error::SystemTooLarge { .. } => "system_too_large",
            Error::DegenerateColumn { .. } => "degenerate_column",
            Error::InvalidSparsity { .. } => "invalid_sparsity",
            Error::TooManyMachines { .. } => "too_many_machines",
            Error::WorkerCountMismatch { .. } => "worker_count_mismatch",
            Error::WorkerUnavailable { .. } => "worker_unavailable",
            Error::PrivacyViolation { .. } => "privacy_violation",
            Error::Config(_) => "config",
            Error::MissingColumn(_) => "missing_column",
            Error::ConstantColumn(_) => "constant_column",
            Error::CellParse { .. } => "cell_parse",
            Error::EmptyTestSet => "empty_test_set",
            Error::EmptySupport(_) => "empty_support",
            Error::GammaUndefined { .. } => "gamma_undefined",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
