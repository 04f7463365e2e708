use thiserror::Error;

/// Errors raised by the forward models and the inversion routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("ambiguous steady state: {0}")]
    Ambiguous(String),
    #[error("unsupported sequence: {0}")]
    UnsupportedSequence(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("underdetermined: {0}")]
    Underdetermined(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("non-monotone bracket: {0}")]
    NonMonotone(String),
    #[error("no detectable modulation: {0}")]
    NoModulation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
