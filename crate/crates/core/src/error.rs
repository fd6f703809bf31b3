use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("frame {index}: {message}")]
    Frame { index: usize, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite value produced by `{op}` during {phase} pass")]
    NonFinite { op: &'static str, phase: &'static str },

    #[error("non-finite gradient for parameter {name} (point {point})")]
    NonFiniteGradient { name: &'static str, point: usize },

    #[error("projected covariance of point {point} is singular")]
    SingularCovariance { point: usize },

    #[error("degenerate shading normal{}", .point.map(|p| format!(" for point {p}")).unwrap_or_default())]
    DegenerateNormal { point: Option<usize> },

    #[error("light coincides with the shaded point")]
    LightCoincident,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at iteration {iteration}: {message}")]
    Diverged { iteration: usize, message: String },

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
