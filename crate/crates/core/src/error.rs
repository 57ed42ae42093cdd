use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("caption {caption:?} must contain exactly one `{{}}` placeholder, found {found}")]
    Placeholder { caption: String, found: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid specification: {0}")]
    Spec(String),

    #[error("index {index} out of range 0..{bound} ({what})")]
    Index {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("conditioning error: {0}")]
    Conditioning(String),

    #[error("token initialization error: {0}")]
    Init(String),

    #[error("unknown token: {0}")]
    UnknownToken(String),

    #[error("contrastive loss needs at least one positive pair")]
    EmptyPositive,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("archive format error: {0}")]
    Format(String),

    #[error("unsupported archive version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("missing generated output for task {0}")]
    MissingOutput(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable process exit code for the error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Spec(_) => 2,
            Error::NonFinite(_) | Error::EmptyPositive => 4,
            Error::Parse { .. }
            | Error::MissingFile(_)
            | Error::Placeholder { .. }
            | Error::Data(_)
            | Error::Format(_)
            | Error::Version { .. }
            | Error::MissingOutput(_)
            | Error::Io { .. }
            | Error::Image { .. }
            | Error::UnknownToken(_)
            | Error::Init(_) => 3,
            Error::Shape(_)
            | Error::Index { .. }
            | Error::Conditioning(_)
            | Error::Dimension { .. } => 1,
        }
    }
}
