use thiserror::Error;

/// Errors raised by the numeric kernels, solvers and estimators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("retraction step too large")]
    StepTooLarge,

    #[error("not a descent direction (slope {0:e})")]
    NotDescent(f64),

    #[error("line search failed after {0} bracketing steps")]
    LineSearchFail(usize),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("data has rank {rank}, expected {dim}")]
    Rank { rank: usize, dim: usize },

    #[error("class violation: {0}")]
    ClassViolation(String),

    #[error("method `{method}` is incompatible with this dgf ({reason})")]
    IncompatibleMethod { method: String, reason: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("cannot parse {what}: {reason}")]
    Parse { what: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_mismatch(a: usize, b: usize) -> Error {
    Error::InvalidInput(format!("dimension mismatch: {a} vs {b}"))
}
