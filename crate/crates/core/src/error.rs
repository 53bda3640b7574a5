use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {what} at row {row}, column {col}")]
    NonFinite { what: &'static str, row: usize, col: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("singular Gram matrix for block `{0}`")]
    Singular(&'static str),

    #[error("rank condition violated: {0}")]
    RankCondition(String),

    #[error("BIC undefined: {0}; residual sum is zero, consider a larger eps_fuse or a smaller grid")]
    ZeroResidual(&'static str),

    #[error("every grid point failed; first error: {first}")]
    AllGridPointsFailed { first: String, count: usize },

    #[error("{failed} of {total} replicates failed; aborting (first error: {first})")]
    TooManyFailures { failed: usize, total: usize, first: String },

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
