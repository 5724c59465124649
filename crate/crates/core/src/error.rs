use thiserror::Error;

use crate::spectra::GapRatioCurve;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("critical sparsity not bracketed by the grid")]
    NoCrossing(Box<GapRatioCurve>),

    #[error("eigendecomposition did not converge")]
    Eigen,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable label, used to tally exclusions.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Argument(_) => "argument",
            Error::Contract(_) => "contract",
            Error::InsufficientData(_) => "insufficient_data",
            Error::UndefinedRatio(_) => "undefined_ratio",
            Error::NoCrossing(_) => "no_crossing",
            Error::Eigen => "eigen",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn argument(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
