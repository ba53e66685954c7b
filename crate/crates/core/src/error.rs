use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("initial state has non-finite log-posterior ({0})")]
    Initialization(String),
    #[error("non-finite value encountered at iteration {iteration}: {what}")]
    NonFinite { iteration: usize, what: String },
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("clustering failed: {0}")]
    Clustering(String),
    #[error("grid too coarse: {0}")]
    Resolution(String),
    #[error("unsupported combination: {0}")]
    Unsupported(String),
    #[error("missing parameter family `{0}`")]
    MissingFamily(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad inputs rather than by the computation itself.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Schema(_)
                | Error::Validation(_)
                | Error::Domain(_)
                | Error::Config(_)
                | Error::Unsupported(_)
                | Error::MissingFamily(_)
                | Error::Dimension(_)
                | Error::Io(_)
                | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
