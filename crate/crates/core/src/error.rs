use thiserror::Error;

/// Errors raised by the state algebra, channel models, key-rate evaluation
/// and the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerically degenerate: {0}")]
    NumericDegeneracy(String),

    #[error("unphysical state: {0}")]
    Unphysical(String),

    #[error("unsupported reduction: {0}")]
    UnsupportedReduction(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures caused by the numbers themselves (degenerate
    /// matrices, states violating the uncertainty principle) rather than by
    /// malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NumericDegeneracy(_) | Error::Unphysical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
