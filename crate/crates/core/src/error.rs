//! Error type shared by every module of the laboratory.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("chart singularity: polar angle {angle} at coordinate {index} is within {guard:e} of a pole")]
    ChartSingularity {
        index: usize,
        angle: f64,
        guard: f64,
    },

    #[error("manifold is not embedded as a unit sphere: {0}")]
    NotEmbedded(String),

    #[error("expected a sphere: {0}")]
    NotASphere(String),

    #[error("quadrature resolution {got} is below the minimum of {min}")]
    ResolutionTooSmall { got: usize, min: usize },

    #[error("finite differences produced a non-finite value: {0}")]
    NonFiniteDerivative(String),

    #[error(
        "variation basis is degenerate: Gram condition number {condition:e} exceeds {limit:e}"
    )]
    DegenerateBasis { condition: f64, limit: f64 },

    #[error("gradient flow step failed at step {step}: step size fell below {min_tau:e}")]
    StepFailure { step: usize, min_tau: f64 },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("invalid manifold: {0}")]
    InvalidManifold(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

pub type Result<T> = std::result::Result<T, LabError>;
