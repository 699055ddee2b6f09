use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::lm::checkpoint::AnyCheckpoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Shape of a rank-2 tensor, `(rows, cols)`.
pub type Shape = (usize, usize);

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("non-finite value in {op}")]
    NonFinite { op: &'static str },

    #[error("index {index} out of range 0..{bound} in {op}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("integrity error: {0}")]
    Integrity(#[from] IntegrityError),

    #[error("numeric abort at epoch {epoch}, block {block}: {diagnostic}")]
    NumericAbort {
        epoch: usize,
        block: usize,
        diagnostic: String,
        /// State at the end of the last fully completed epoch.
        last_good: Option<Box<AnyCheckpoint>>,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Checkpoint and vocabulary integrity failures. Each has its own variant so
/// callers can tell a stale file from a corrupted one.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum IntegrityError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u8, expected: u8 },
    #[error("file truncated: {0}")]
    Truncated(String),
    #[error("payload checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("vocabulary digest mismatch (expected {expected}, found {found})")]
    Digest { expected: String, found: String },
    #[error("vocabulary mismatch: {0}")]
    Vocabulary(String),
    #[error("malformed header: {0}")]
    Header(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
