use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, WppError>;

#[derive(Debug, Error)]
pub enum WppError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("instance too large for the exact solver: {0}")]
    Capacity(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operator estimation failed: {0}")]
    Estimation(String),

    #[error("images are identical (zero MSE), PSNR is infinite")]
    ZeroMse,

    #[error("image too small: {0}")]
    TooSmall(String),

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unsupported or malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl WppError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        WppError::Dimension(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        WppError::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        WppError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used by the CLI on failure.
    pub fn kind(&self) -> &'static str {
        match self {
            WppError::Dimension(_) => "dimension",
            WppError::Capacity(_) => "capacity",
            WppError::InvalidArgument(_) => "invalid_argument",
            WppError::Estimation(_) => "estimation",
            WppError::ZeroMse => "zero_mse",
            WppError::TooSmall(_) => "too_small",
            WppError::Solver(_) => "solver",
            WppError::Config(_) => "config",
            WppError::Format { .. } => "format",
            WppError::Io { .. } => "io",
        }
    }
}
