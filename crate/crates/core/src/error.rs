use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the estimation pipeline and its file readers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient replicates: {0}")]
    Replicates(String),

    #[error("kernel is not a covariance: {0}")]
    NotCovariance(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("perfect separation: {0}")]
    Separation(String),

    #[error("singular Jacobian (consider smaller p_n): {0}")]
    SingularJacobian(String),

    #[error("invalid response: {0}")]
    Response(String),

    #[error("data not centered: {0}")]
    NotCentered(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
