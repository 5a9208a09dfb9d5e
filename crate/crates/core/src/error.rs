//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A weight value outside {-1, 0, +1}.
    #[error("invalid trit value {0}, expected -1, 0, or +1")]
    InvalidTrit(i8),

    /// A group index not representable for the given group size.
    #[error("group index {index} out of range for group size {group_size} (limit 3^G = {limit})")]
    IndexOutOfRange {
        index: u32,
        group_size: usize,
        limit: u32,
    },

    /// Tensor or buffer dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An int8 value outside the symmetric range [-127, 127].
    #[error("activation value {0} outside symmetric int8 range [-127, 127]")]
    ValueOutOfRange(i32),

    /// A scale or score that must be finite (and positive where required) is not.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Finalizing an online-softmax state that never saw a score.
    #[error("empty stream: no scores were folded before finalization")]
    EmptyStream,

    /// Appending to a KV cache already at its context limit.
    #[error("context overflow: capacity {capacity} reached")]
    ContextOverflow { capacity: usize },

    /// Bad runtime or kernel configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Weight container: leading magic bytes are wrong.
    #[error("bad magic: not a TELLME01 weight file")]
    BadMagic,

    /// Weight container: magic is right but the version is unknown.
    #[error("unsupported weight file version {0}")]
    UnsupportedVersion(u32),

    /// Weight container: file ends before a declared payload or field.
    #[error("truncated weight file: {0}")]
    Truncated(String),

    /// Weight container: a stored checksum does not match the bytes read.
    #[error("checksum mismatch in {0}")]
    ChecksumMismatch(String),

    /// Weight container: a declared length or shape disagrees with the payload.
    #[error("corrupt weight file: {0}")]
    Corrupt(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
