use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("coordinate {index} = {value} is outside the mirror map's domain")]
    DomainViolation { index: usize, value: f64 },

    #[error("Lagrange multiplier not found after {iterations} iterations (residual {residual:e})")]
    MultiplierNotFound { iterations: usize, residual: f64 },

    #[error("sample {index} coincides with the reference (zero Bregman divergence)")]
    DegenerateSample { index: usize },

    #[error("shape mismatch: expected length {expected}, got {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("weight {index} is negative ({value})")]
    NegativeWeight { index: usize, value: f64 },

    #[error(
        "right-hand side is not in the operator's range (sum {sum:e}, tolerance {tolerance:e})"
    )]
    RhsNotInRange { sum: f64, tolerance: f64 },

    #[error("zero edge weight at face {face} disconnects the operator and the rhs component has nonzero sum {sum:e}")]
    DisconnectedOperator { face: usize, sum: f64 },

    #[error("metric is singular or not positive definite")]
    SingularMetric,

    #[error("sufficient descent not reached after {halvings} halvings")]
    LineSearchFailure { halvings: usize },

    #[error("Newton iteration did not converge in {iterations} iterations (last update {update:e}, residual {residual:e})")]
    NewtonDivergence {
        iterations: usize,
        update: f64,
        residual: f64,
    },

    #[error("linear solve failed: zero pivot at row {row}")]
    LinearSolveFailure { row: usize },

    #[error("missing diagnostics: {0}")]
    MissingDiagnostics(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter {
        name: &'static str,
        reason: &'static str,
    },

    #[error("this mirror map has no closed-form inverse gradient")]
    InverseGradientUnavailable,
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::ShapeMismatch { expected, found })
    }
}
