use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("shape mismatch in {layer}: expected {expected}, got {got}")]
    Shape {
        layer: String,
        expected: String,
        got: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite loss at step {step} (lr = {lr:e})")]
    NonFiniteLoss { step: usize, lr: f64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("missing artifact {path}: rerun stage `{stage}`")]
    MissingArtifact { path: PathBuf, stage: String },

    #[error("artifact {path} does not match the current run: {reason}")]
    StaleArtifact { path: PathBuf, reason: String },

    #[error("model format error: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParam(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn shape(layer: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::Shape {
            layer: layer.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the `koa` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParam(_) | Error::Json(_) => 2,
            Error::Data(_)
            | Error::Io { .. }
            | Error::Image { .. }
            | Error::Csv(_)
            | Error::MissingArtifact { .. }
            | Error::StaleArtifact { .. }
            | Error::Format(_)
            | Error::Shape { .. } => 3,
            Error::NonFiniteLoss { .. } | Error::Numeric(_) => 4,
        }
    }
}
