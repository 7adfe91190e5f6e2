use std::io;

use thiserror::Error;

/// Error taxonomy shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    /// Unknown magic tag or unsupported version in a binary artifact.
    #[error("format error: {0}")]
    Format(String),

    /// A binary artifact ended before its declared payload.
    #[error("truncated input: {0}")]
    Truncation(String),

    /// Malformed token in a text artifact.
    #[error("parse error: {0}")]
    Parse(String),

    /// Well-formed input that violates a type invariant or precondition.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Input for which a statistic is undefined, e.g. zero variance.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("label mismatch: {0}")]
    LabelMismatch(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("a duration model is required for mode {0}")]
    MissingModel(&'static str),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
