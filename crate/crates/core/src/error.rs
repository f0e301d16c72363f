use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid word {0:?}: words must be non-empty and free of whitespace")]
    InvalidWord(String),
    #[error("line {line}: input is not valid UTF-8")]
    Encoding { line: usize },
    #[error("no corpora given")]
    NoCorpora,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("vocabulary mismatch: expected {expected}, found {found}")]
    VocabMismatch { expected: String, found: String },
    #[error("transfer depth {0} outside 0..=4")]
    BadDepth(usize),
    #[error("file truncated while reading {0}")]
    TruncatedFile(String),
    #[error("bad magic bytes, not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    VersionMismatch(u32),
    #[error("missing tensor {0}")]
    MissingTensor(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error("stream has no words to normalize by")]
    EmptyStream,
    #[error("class {0} present in one report but not the other")]
    MissingClass(String),
    #[error("streams are not aligned: {0}")]
    StreamMismatch(String),
    #[error("degenerate alignment input: {0}")]
    DegenerateInput(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::BadDepth(_) => ErrorKind::Usage,
            Error::NonFinite(_) | Error::DegenerateInput(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}
