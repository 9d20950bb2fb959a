use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("stash overflow: {size} blocks exceeds bound of {max}")]
    StashOverflow { size: usize, max: usize },

    /// Authentication failed: wrong key or modified bytes.
    #[error("sealed slot failed authentication")]
    Tamper,

    #[error("malformed slot: expected {expected} bytes, got {actual}")]
    MalformedSlot { expected: usize, actual: usize },

    #[error("access of {len} bytes at offset {offset} is outside the {size}-byte region")]
    Range { offset: u64, len: u64, size: u64 },

    #[error("write of {len} bytes at offset {offset} is not aligned to {slot_bytes}-byte slots")]
    Alignment { offset: u64, len: u64, slot_bytes: usize },

    #[error("transport failure: {0}")]
    Transport(#[from] std::io::Error),

    #[error("remote rejected a malformed request")]
    RemoteMalformed,

    #[error("location map is inconsistent for key {key}")]
    LocationMapCorruption { key: u64 },

    #[error("writing output: {0}")]
    Output(String),

    #[error("snapshots cover different layouts ({left} vs {right} units)")]
    LayoutMismatch { left: usize, right: usize },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
