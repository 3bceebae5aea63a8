use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SplError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SplError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid value: {0}")]
    Value(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("load error: {0}")]
    Load(String),

    #[error("unsupported backbone layout `{0}`")]
    UnsupportedBackbone(String),

    #[error("mask ratio {0} is outside the evaluation range [0, 0.6)")]
    OutOfProtocol(f64),

    #[error("could not generate a mask in bucket {bucket}; last achieved ratio {achieved:.4}")]
    Generation { bucket: String, achieved: f64 },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("checkpoint schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: String, expected: u32 },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("torch: {0}")]
    Torch(#[from] tch::TchError),
}

impl SplError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SplError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for command-line entry points.
    pub fn exit_code(&self) -> i32 {
        match self {
            SplError::Config(_) | SplError::UnsupportedBackbone(_) | SplError::SchemaVersion { .. } => 2,
            SplError::Divergence(_) => 4,
            _ => 3,
        }
    }
}
