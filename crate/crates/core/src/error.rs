use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unstable ARX model: companion spectral radius {rho} (must be < {limit})")]
    Unstable { rho: f64, limit: f64 },

    #[error("matrix not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("matrix asymmetry {max_abs} exceeds tolerance {tol}")]
    Asymmetric { max_abs: f64, tol: f64 },

    #[error("requested joint covariance of size {requested} exceeds cap {cap}")]
    SizeCap { requested: usize, cap: usize },

    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence { what: String, iterations: usize },

    /// A complexity term is provably (or empirically) infinite for the
    /// requested configuration.
    #[error("complexity term diverges: {0}")]
    Diverged(String),

    /// A numeric postcondition that should hold by construction was violated.
    #[error("numeric postcondition violated: {0}")]
    Numeric(String),

    #[error("{path}:{line}: {message}")]
    CsvParse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
