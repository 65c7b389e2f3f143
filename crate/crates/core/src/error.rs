use thiserror::Error;

/// Errors produced by the control toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrapeError {
    #[error("capacity exceeded: {what} is {requested}, limit is {limit}")]
    Capacity {
        what: &'static str,
        requested: usize,
        limit: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid value for `{field}`: {reason}")]
    InvalidInput { field: String, reason: String },

    #[error("matrix `{name}` is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { name: String, deviation: f64 },

    #[error("series did not converge within {terms} terms (residual norm {residual:e})")]
    Divergence { terms: usize, residual: f64 },

    #[error("finite-difference error threshold {threshold:e} is below the round-off floor {floor:e}")]
    InfeasibleThreshold { threshold: f64, floor: f64 },

    #[error("gradient method `{method}` cannot be used: {reason}")]
    InvalidMethod { method: String, reason: String },

    #[error("{path}: {reason}")]
    Io { path: String, reason: String },

    #[error("{path}: {reason}")]
    Parse { path: String, reason: String },

    #[error("non-finite value: {detail}")]
    NonFinite { detail: String },
}

impl GrapeError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        GrapeError::InvalidInput {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, GrapeError>;
