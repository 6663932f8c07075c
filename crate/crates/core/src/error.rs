use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SnnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SnnError {
    /// Tensor or layer shapes that cannot be combined.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A hyperparameter or argument outside its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A caller broke an operation's precondition.
    #[error("contract error: {0}")]
    Contract(String),

    /// Malformed bytes in an on-disk file.
    #[error("format error: {0}")]
    Format(String),

    #[error("path error: {}: {source}", path.display())]
    Path {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Training produced a non-finite loss or parameter.
    #[error("divergence at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },
}

impl SnnError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        SnnError::Dimension(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        SnnError::Parameter(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        SnnError::Contract(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        SnnError::Format(msg.into())
    }

    pub fn path(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SnnError::Path {
            path: path.into(),
            source,
        }
    }
}
