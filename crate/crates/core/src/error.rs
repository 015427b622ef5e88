use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("{op}: input outside the domain ({detail})")]
    Domain { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("loss node must be 1x1, got {0:?}")]
    NonScalarLoss((usize, usize)),

    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("series {series}: {detail}")]
    Series { series: String, detail: String },

    #[error("series {series}: insufficient history, need {needed} hours, have {available}")]
    InsufficientHistory {
        series: String,
        needed: usize,
        available: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn series(series: &str, detail: impl Into<String>) -> Self {
        Error::Series {
            series: series.to_string(),
            detail: detail.into(),
        }
    }

    /// True when the error came from a NaN/Inf abort inside the numeric core.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}
