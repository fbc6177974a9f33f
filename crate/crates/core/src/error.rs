use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (wrong lengths, bad ranges).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Empty sentence, empty document, empty corpus and similar.
    #[error("invalid input: {0}")]
    Input(String),

    /// Retrieval returned no neighbors; callers fall back to the base model.
    #[error("no retrieval support")]
    NoRetrievalSupport,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("not a snapshot file (bad magic)")]
    SnapshotMagic,

    #[error("unsupported snapshot version {found} (expected {expected})")]
    SnapshotVersion { found: u8, expected: u8 },

    #[error("snapshot holds a {found} datastore, expected {expected}")]
    SnapshotKind {
        found: &'static str,
        expected: &'static str,
    },

    #[error("snapshot dimension {found} does not match expected {expected}")]
    SnapshotDimension { found: usize, expected: usize },

    #[error("snapshot truncated: {0}")]
    SnapshotTruncated(String),

    /// Error while processing one sentence (1-based) of a document.
    #[error("sentence {sentence}: {source}")]
    AtSentence {
        sentence: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("document {document}: {source}")]
    InDocument {
        document: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {error}", path.display())]
    File {
        path: PathBuf,
        error: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// Maps an I/O error on `path` to [`Error::File`].
    pub(crate) fn at(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |error| Error::File {
            path: path.to_path_buf(),
            error,
        }
    }

    /// True for errors caused by bad data or files rather than by misuse of the API.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Contract(_) | Error::DimensionMismatch { .. } => false,
            Error::AtSentence { source, .. } | Error::InDocument { source, .. } => {
                source.is_data_error()
            }
            _ => true,
        }
    }
}
