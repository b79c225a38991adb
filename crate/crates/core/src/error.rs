use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("model assumption violated: {0}")]
    Assumption(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(String),

    #[error("unsupported driver: {0}")]
    UnsupportedDriver(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("Riccati iteration did not converge after {iterations} iterations (last step {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("degenerate matrix: {0}")]
    Degenerate(String),

    #[error("innovation filter is not invertible: spectral radius {0}")]
    NotInvertible(f64),

    #[error("simulation blew up at t = {0}")]
    Blowup(f64),

    #[error("numeric integrity check failed: {0}")]
    Numeric(String),

    #[error("no start point yields a finite objective")]
    InfeasibleStart,

    #[error("Hessian limit is not positive definite (identifiability condition on the spectral gradient fails): {0}")]
    Identifiability(String),

    #[error("{failed} of {total} replicates failed")]
    StudyFailed { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True when the error stems from user input rather than a numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::InvalidParameter(_)
                | Error::Assumption(_)
                | Error::Range(_)
                | Error::UnsupportedDimension(_)
                | Error::UnsupportedDriver(_)
                | Error::InsufficientSamples(_)
                | Error::Parse(_)
                | Error::Config(_)
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
