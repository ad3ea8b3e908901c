use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised while decoding an AGF1/AGR1 payload.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("declared size overflows: {0}")]
    SizeOverflow(&'static str),
    #[error("invalid UTF-8 in {0}")]
    InvalidUtf8(&'static str),
    #[error("non-finite value at payload element {0}")]
    NonFinite(usize),
    #[error("duplicate image id {0:?}")]
    DuplicateId(String),
    #[error("duplicate stage name {0:?}")]
    DuplicateStage(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("unknown modality tag {0}")]
    UnknownModality(u8),
    #[error(
        "matrix {subject} of slice {slice} is asymmetric at ({row}, {col}): |delta| = {delta}"
    )]
    Asymmetric {
        slice: usize,
        subject: usize,
        row: usize,
        col: usize,
        delta: f32,
    },
    #[error("matrix {subject} of slice {slice} has non-zero diagonal at {index}: {value}")]
    NonZeroDiagonal {
        slice: usize,
        subject: usize,
        index: usize,
        value: f32,
    },
    #[error("slice timestamps invalid: {0}")]
    Timestamps(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate dataset: {0}")]
    Degenerate(String),
    #[error("matrix is not square: {len} elements")]
    NonSquare { len: usize },
    #[error("zero variance: {0}")]
    ZeroVariance(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("noise undefined: {0}")]
    Undefined(String),
    #[error("image ids do not match: {0}")]
    ImageMismatch(String),
    #[error("unknown image id {0:?}")]
    UnknownImage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error(transparent)]
    Decode(#[from] FormatError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// The decode error underneath, whether or not it was tagged with a path.
    pub fn format_error(&self) -> Option<&FormatError> {
        match self {
            Error::Format { source, .. } => Some(source),
            Error::Decode(e) => Some(e),
            _ => None,
        }
    }
}
