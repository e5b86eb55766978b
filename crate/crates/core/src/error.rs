use thiserror::Error;

/// Errors raised by the solvers, loaders and diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid penalty: {0}")]
    InvalidPenalty(String),

    #[error("{solver} does not support the {penalty} penalty")]
    UnsupportedPenalty {
        solver: &'static str,
        penalty: &'static str,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("curvature must be positive, got {0}")]
    NonpositiveCurvature(f64),

    #[error("matrix is singular after jitter {jitter:e} (relative residual {residual:e})")]
    Singular { jitter: f64, residual: f64 },

    #[error("{what} did not converge after {iterations} iterations")]
    NotConverged {
        what: &'static str,
        iterations: usize,
    },

    #[error("maximum likelihood estimate appears to be infinite: {0}")]
    NonFiniteMle(String),

    #[error("{covariates} covariates exceed the enumeration limit of {limit}")]
    TooManyCovariates { covariates: usize, limit: usize },

    #[error("row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
