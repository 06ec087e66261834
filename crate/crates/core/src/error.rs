use thiserror::Error;

/// Errors raised anywhere in the solver stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("point ({x}, {y}) lies outside the domain")]
    OutsideDomain { x: f64, y: f64 },

    #[error("singular matrix: zero pivot at index {index}")]
    SingularMatrix { index: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("negative curvature detected in conjugate gradient at iteration {iteration} (pAp = {curvature:e})")]
    NegativeCurvature { iteration: usize, curvature: f64 },

    #[error("line search failed after {trials} backtracking trials")]
    LineSearchFailed { trials: usize },

    #[error("iteration limit {limit} reached")]
    IterationLimit { limit: usize },

    #[error("no decrease of the objective at step {iteration}")]
    Stagnated { iteration: usize },

    #[error("dimension guard exceeded: {dim} > {limit}")]
    TooLarge { dim: usize, limit: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
