use thiserror::Error;

/// Errors raised by the robust-growth library.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix that must be symmetric positive definite is not.
    #[error("{what} is not positive definite (minimum eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { what: String, min_eigenvalue: f64 },

    /// A point lies outside the domain of a field, or a density is not positive there.
    #[error("domain error: {0}")]
    Domain(String),

    /// The density is below the underflow floor at the requested point.
    #[error("density {density:e} at {point:?} is below the underflow floor")]
    DensityUnderflow { point: Vec<f64>, density: f64 },

    #[error("operation supports d = 1 only, got d = {d}")]
    UnsupportedDimension { d: usize },

    #[error("strategy for d = {d} requires a gradient certificate")]
    NotCertifiedGradient { d: usize },

    #[error("Feller condition violated: 2*kappa*nu = {lhs} <= sigma^2 = {rhs}")]
    Feller { lhs: f64, rhs: f64 },

    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unstable drift matrix: eigenvalue with real part {max_real_part:e}")]
    UnstableDynamics { max_real_part: f64 },

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("{flagged} of {total} paths produced non-finite values")]
    TooManyFlaggedPaths { flagged: usize, total: usize },

    #[error("not supported: {0}")]
    Unsupported(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
