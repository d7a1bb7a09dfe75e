use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DemError {
    #[error("invalid discretization: {0}")]
    InvalidDiscretization(String),

    #[error("invalid graph threshold radius {0}")]
    InvalidThreshold(f64),

    #[error("invalid Chebyshev order {0}, must be at least 1")]
    InvalidOrder(usize),

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("shape contract violated: {0}")]
    Contract(String),

    /// A differentiable program produced a non-finite or undefined value.
    #[error("non-finite loss produced by operation `{op}`")]
    NonFiniteLoss { op: &'static str },

    #[error("inverted element (det = {det:e})")]
    InvertedElement { det: f64 },

    #[error("Poisson ratio {0} is at or beyond the incompressible limit")]
    IncompressibleLimit(f64),

    #[error("invalid material parameters: {0}")]
    InvalidMaterial(String),

    #[error("invalid boundary condition: {0}")]
    InvalidBc(String),

    #[error("oracle failed: {0}")]
    OracleFailure(String),
}

pub type Result<T> = std::result::Result<T, DemError>;
