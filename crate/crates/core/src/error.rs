//! Crate-wide error type.
//!
//! Every failure carries a stable machine-readable class (see [`Error::class`])
//! so the CLI can emit single-line, parseable diagnostics.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor / layer dimension mismatch. The message names the offending shapes.
    #[error("shape error: {0}")]
    Shape(String),

    /// An operation was called outside its contract (empty input, N < 2, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Attention normalizer collapsed below the safe threshold.
    #[error("numerical underflow: attention normalizer below 1e-8 at row {row}")]
    Underflow { row: usize },

    /// Malformed binary file. `offset` is the byte position of the defect.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Metric is undefined for the given inputs (e.g. single-class AUC).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Invalid or inconsistent run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// NaN/Inf encountered where the pipeline requires finite values.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    /// Stable error-class token used as the CLI's machine-parseable prefix.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Contract(_) => "contract",
            Error::Underflow { .. } => "underflow",
            Error::Format { .. } => "format",
            Error::UndefinedMetric(_) => "metric",
            Error::Config(_) => "config",
            Error::NonFinite(_) => "numeric",
            Error::Io { .. } => "io",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
