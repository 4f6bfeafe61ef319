use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty data: at least one row is required")]
    EmptyData,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("row {row}: invalid probability vector ({reason})")]
    InvalidProbability { row: usize, reason: String },

    #[error("row {row}: label {label} out of range for {k} classes")]
    LabelOutOfRange { row: usize, label: usize, k: usize },

    #[error("all labels are identical; the metric is undefined")]
    DegenerateLabels,

    #[error("operation requires binary predictions, got {k} classes")]
    UnsupportedMulticlass { k: usize },

    #[error("epoch {epoch} is not greater than the last recorded epoch {last}")]
    OutOfOrderEpoch { epoch: usize, last: usize },

    #[error("unknown metric `{0}`")]
    UnknownMetric(String),

    #[error("metric `{0}` is undefined at every epoch")]
    UndefinedMetric(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("pole inside the spectral support: lambda - e * sigma_max = {margin}")]
    PoleInSupport { margin: f64 },

    #[error("did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("weights diverge on separable data (norm {norm:e}); use lambda > 0")]
    DivergingNorm { norm: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Whether this is a numerical failure rather than an input problem.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. } | Error::NonFinite(_) | Error::DivergingNorm { .. }
        )
    }

    /// Whether the input is valid but the requested method cannot handle it.
    pub fn is_incompatibility(&self) -> bool {
        matches!(self, Error::UnsupportedMulticlass { .. })
    }
}
