use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("iteration did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("{0} must be symmetric")]
    NotSymmetric(&'static str),

    #[error("{0} must be positive semidefinite")]
    NotPositiveSemidefinite(&'static str),

    #[error("noise covariance {0} must be symmetric positive definite")]
    NoisePDViolation(&'static str),

    #[error("{0} is singular")]
    SingularCovariance(&'static str),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("system is not right-invertible")]
    NotRightInvertible,

    #[error("closed loop A - KC - BL is not stable")]
    UnstableClosedLoop,

    #[error("no bracket for the attack scale: predicted stealthiness stays at zero")]
    NoBracket,

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("exponent cannot be fitted: {0}")]
    ExponentUnfittable(String),

    #[error("numeric overflow in run {run} at step {step}")]
    Overflow { run: u64, step: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dims(
        context: &'static str,
        expected: impl std::fmt::Display,
        found: impl std::fmt::Display,
    ) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn parse(line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            column,
            message: message.into(),
        }
    }
}
