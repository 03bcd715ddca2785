use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the post-processing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("destination not covered by source: {0}")]
    OutOfCoverage(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing feature {feature}: {reason}")]
    MissingFeature { feature: String, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("did not converge after {iterations} iterations (last loss {last_loss})")]
    NotConverged { iterations: usize, last_loss: f64 },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("undefined result: {0}")]
    Undefined(String),

    #[error("unmatched record pairs: {0}")]
    Unmatched(String),

    #[error("{context}: {source}")]
    Io {
        context: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { context: path.into(), source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// True for errors caused by bad user input or configuration rather than
    /// a failure while running.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidInput(_) | Error::Parse { .. } | Error::Unmatched(_)
        )
    }
}
