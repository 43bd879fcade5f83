//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A scenario or pipeline configuration field is out of its valid range.
    #[error("invalid configuration: field `{field}`: {message}")]
    Config { field: &'static str, message: String },

    /// An operation was requested on a deactivated hypothesis.
    #[error("hypothesis {id} is inactive")]
    InactiveHypothesis { id: u32 },

    /// A matrix expected to be symmetric positive-definite was not.
    #[error("matrix is not symmetric positive-definite")]
    NotPositiveDefinite,

    /// A numeric argument fell outside the domain of the operation.
    #[error("numeric domain error: {0}")]
    Domain(String),

    /// Training data cannot produce a model (e.g. a single class).
    #[error("training error: {0}")]
    Training(String),

    /// A feature vector does not match the schema the model was trained on.
    #[error("feature schema mismatch: model {expected:#018x}, input {actual:#018x}")]
    SchemaMismatch { expected: u64, actual: u64 },

    /// Dataset-level problems: too few sequences, empty sets, malformed records.
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: &'static str, message: impl Into<String>) -> Self {
        Error::Config { field, message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
