use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front-ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration or parameter values.
    Validation,
    /// Input data that cannot be used.
    Data,
    /// Filesystem failures.
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("record {record}: {message}")]
    Parse { record: usize, message: String },

    #[error("record {record}: non-monotone timestamps ({previous} then {current})")]
    NonMonotone {
        record: usize,
        previous: i64,
        current: i64,
    },

    #[error("record {record}: timestamp gap of {delta_ms} ms (expected {interval_ms} ms)")]
    Gap {
        record: usize,
        delta_ms: i64,
        interval_ms: i64,
    },

    #[error("record {record}: OHLC invariant violated: {message}")]
    CandleInvariant { record: usize, message: String },

    #[error("insufficient history: need at least {needed} values, got {got}")]
    InsufficientHistory { needed: usize, got: usize },

    #[error("zero reference price at index {index}")]
    ZeroReference { index: usize },

    #[error("dimension mismatch: expected {expected} {what}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("undefined R²: target has zero variance")]
    UndefinedR2,

    #[error("unsupported model format {0:?}")]
    UnsupportedFormat(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParameter(_) => ErrorKind::Validation,
            Error::File { .. } | Error::Io(_) => ErrorKind::Io,
            Error::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => ErrorKind::Io,
            Error::Json(e) if e.is_io() => ErrorKind::Io,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
