use thiserror::Error;

use crate::psgd::TrajectoryPoint;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),

    #[error("cannot project the zero vector onto the sphere")]
    ZeroVector,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unsupported noise regime: alpha = {0} must lie in (1/3, 1]")]
    UnsupportedNoiseRegime(f64),

    #[error("label budget exhausted after {queries_used} queries")]
    BudgetExhausted { queries_used: u64 },

    #[error("projected SGD interrupted at step {completed_steps}: label budget exhausted after {queries_used} queries")]
    PsgdInterrupted {
        queries_used: u64,
        completed_steps: u64,
        trajectory: Vec<TrajectoryPoint>,
    },

    #[error("distribution is not well-behaved at R = {radius}: estimated density lower bound {lower} <= 0")]
    NotWellBehaved { radius: f64, lower: f64 },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
