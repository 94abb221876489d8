use thiserror::Error;

/// Errors raised by the estimation, simulation and evaluation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("covariance matrix is not positive definite after ridge repair")]
    NotPositiveDefinite,
    #[error("logsumexp of an all -inf vector")]
    AllNegInfinite,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("log-likelihood became non-finite")]
    NonFiniteLikelihood,
    #[error("kernel weights vanish around query point ({0}, {1})")]
    EmptyNeighborhood(f64, f64),
    #[error("mixing field rows are not aligned with dataset locations")]
    RowMisalignment,
    #[error("rejection sampler exceeded its proposal budget")]
    RejectionBudgetExceeded,
    #[error("total spatial density is zero at ({0}, {1})")]
    ZeroTotalDensity(f64, f64),
    #[error("reference labels contain a single class")]
    SingleClass,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
