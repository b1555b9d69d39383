use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every fallible operation in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    #[error("dimension mismatch in `{op}`: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// Invalid configuration or argument.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Dataset content violates a precondition (labels, emptiness, ...).
    #[error("invalid data: {0}")]
    Data(String),

    /// A function evaluated during differentiation returned a non-finite value.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// A caller broke an API contract (e.g. asked for gradients of a non-scalar).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A loss term evaluated to NaN or infinity.
    #[error("non-finite value in loss term `{term}`")]
    NonFinite { term: String },

    /// A loss term became non-finite during training.
    #[error("non-finite value in loss term `{term}` (epoch {epoch})")]
    Training { epoch: usize, term: String },

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
