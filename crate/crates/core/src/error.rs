use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the forecasting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("timestamps are not strictly increasing at row {row}")]
    NonMonotoneTimestamps { row: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("series too short: {0}")]
    TooShort(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("zero denominator in {metric} at index {index}")]
    ZeroDenominator { metric: &'static str, index: usize },

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("archive error: {0}")]
    Archive(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(
    context: &'static str,
    expected: impl ToString,
    actual: impl ToString,
) -> Error {
    Error::ShapeMismatch {
        context,
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
