use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape {shape:?} does not match buffer length {len}")]
    BufferLength { shape: Vec<usize>, len: usize },

    #[error("shape {0:?} has a zero extent")]
    ZeroExtent(Vec<usize>),

    #[error("cannot broadcast {lhs:?} with {rhs:?}")]
    Broadcast { lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },

    #[error("{op}: channel mismatch, input has {input} but parameter expects {param}")]
    ChannelMismatch {
        op: &'static str,
        input: usize,
        param: usize,
    },

    #[error("{op}: {msg}")]
    Geometry { op: &'static str, msg: String },

    #[error("batch norm in train mode needs at least 2 values per channel, got {0}")]
    BatchTooSmall(usize),

    #[error("batch norm in eval mode before any running statistics exist")]
    MissingRunningStats,

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("variable does not belong to this graph")]
    ForeignVar,

    #[error("{0}")]
    Invalid(String),
}
