use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    /// An argument lies outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data failed structural validation (non-bijective tables,
    /// non-cyclic members, malformed documents).
    #[error("validation error: {0}")]
    Validation(String),

    /// Construction or planner parameters are inconsistent.
    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("not found: {0}")]
    NotFound(String),

    /// An operation was invoked on an object in the wrong lifecycle state.
    #[error("state error: {0}")]
    State(String),

    /// The identification engine refused more work.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Validation(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
