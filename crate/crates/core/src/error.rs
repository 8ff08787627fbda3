use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("under-constrained fit: {0}")]
    UnderConstrained(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty texture: no vertex carries a valid color")]
    EmptyTexture,

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Decoding failures for the on-disk formats. Loaders return one of these
/// instead of partially populated data.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },

    #[error("truncated data: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("{extra} trailing bytes after end of data")]
    TrailingBytes { extra: u64 },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unsupported format: {0}")]
    Unsupported(String),
}
