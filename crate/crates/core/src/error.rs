use thiserror::Error;

/// Errors raised by the learners, optimizers and task code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A tensor or parameter block did not have the expected shape.
    #[error("shape mismatch at {location}: expected {expected}, got {actual}")]
    Shape {
        location: String,
        expected: String,
        actual: String,
    },
    /// A caller violated an operation's precondition.
    #[error("contract violated: {0}")]
    Contract(String),
    /// A NaN or infinity showed up where finite numbers are required.
    #[error("non-finite value at coordinate {index}")]
    NonFinite { index: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
