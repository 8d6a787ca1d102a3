use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure categories surfaced by the library.
///
/// The CLI maps these onto distinct exit codes, so new variants should land in
/// one of the existing buckets (see [`Error::category`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("non-finite values in tensor `{tensor}`")]
    Divergence { tensor: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("line {line}: {message}")]
    Row { line: u64, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse grouping used for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    DataFormat,
    Consistency,
    Io,
    Numeric,
}

impl Error {
    pub fn shape(op: &'static str, left: impl Into<String>, right: impl Into<String>) -> Self {
        Error::Shape {
            op,
            left: left.into(),
            right: right.into(),
        }
    }

    pub fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Param(_) => ErrorCategory::Config,
            Error::Format(_) | Error::Row { .. } | Error::Data(_) => ErrorCategory::DataFormat,
            Error::Shape { .. } | Error::Consistency(_) => ErrorCategory::Consistency,
            Error::Io { .. } => ErrorCategory::Io,
            Error::Divergence { .. } => ErrorCategory::Numeric,
        }
    }
}
