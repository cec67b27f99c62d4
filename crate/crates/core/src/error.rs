use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e})")]
    NotPsd { eigenvalue: f64 },

    #[error("cannot orthogonalize a zero matrix")]
    ZeroMatrix,

    #[error("invalid layer specification: {0}")]
    InvalidSpec(String),

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperParam(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {reason}", path.display())]
    Io { path: PathBuf, reason: String },

    #[error("plot error: {0}")]
    Plot(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.into(),
            reason: err.to_string(),
        }
    }
}
