use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] acnet_tensor::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u8, classes: usize },

    #[error("every pixel carries the ignore label")]
    AllIgnored,

    #[error("no scored pixels in confusion matrix")]
    EmptyConfusion,

    #[error("model has no running batch-norm statistics; train it first")]
    Untrained,

    #[error("variant {0} has no attention modules")]
    NoAttention(&'static str),

    #[error("no samples found in {0}")]
    NoSamples(PathBuf),

    #[error("unmatched sample stems: {0}")]
    UnmatchedStems(String),

    #[error("{path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint truncated while reading {0}")]
    Truncated(String),

    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
