use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("event specification violated: {0}")]
    SpecViolation(String),
    #[error("degenerate ensemble: {0}")]
    DegenerateEnsemble(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
