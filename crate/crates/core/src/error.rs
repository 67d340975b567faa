use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("arity mismatch: expected {expected} coordinates, got {got}")]
    ArityMismatch { expected: usize, got: usize },

    #[error("coordinate {index} out of range for arity {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("invalid bias {value} at coordinate {index}: must lie in [0, 1]")]
    InvalidBias { index: usize, value: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("budget exceeded: {what} (limit {limit})")]
    BudgetExceeded { what: String, limit: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dagger mass {mass:.3e} under boost {level} is not below {threshold:.3e}")]
    DaggerMass { level: usize, mass: f64, threshold: f64 },

    #[error("out of regime: parameter `{param}` = {value} is not positive")]
    OutOfRegime { param: String, value: f64 },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
