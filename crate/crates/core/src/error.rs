use thiserror::Error;

/// Library-wide error type. Convergence problems are distinct from
/// zero-probability branches so callers can retry with bigger spaces
/// only when that would actually help.
#[derive(Debug, Error)]
pub enum GkpError {
    #[error("unconverged: {0}")]
    Unconverged(String),
    #[error("zero-probability branch: {0}")]
    ZeroProbability(String),
    #[error("zero-norm state: {0}")]
    ZeroNorm(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no resolvable peaks ({0}); use the analytic estimator instead")]
    NoPeaks(String),
}

pub type Result<T> = std::result::Result<T, GkpError>;
