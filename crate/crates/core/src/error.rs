use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::grid::EncodedChunkId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate out of addressable range: {0}")]
    OutOfRange(String),

    #[error("Gaussian #{index} out of addressable range: {reason}")]
    GaussianOutOfRange { index: usize, reason: String },

    #[error("malformed chunk id {0:#018x}")]
    Malformed(u64),

    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("corrupt file {path}: {reason}")]
    CorruptChunk { path: PathBuf, reason: String },

    #[error("chunk {0} is not resident")]
    NotResident(EncodedChunkId),

    #[error("only {available} Gaussians evictable, {required} required")]
    InsufficientEvictable { required: u64, available: u64 },

    #[error("unknown keyframe {0}")]
    UnknownKeyframe(u64),

    #[error("keyframe {0} already present")]
    DuplicateKeyframe(u64),

    #[error("no keyframe shares the latest keyframe's grid cell")]
    EmptyCandidates,

    #[error("overlap is undefined for an empty visible set")]
    UndefinedOverlap,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("malformed metrics: {0}")]
    MalformedMetrics(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::CorruptChunk {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
