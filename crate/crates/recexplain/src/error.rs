//! Crate-wide error type.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// An i/o failure on a caller-supplied file, with the path attached.
    #[error("cannot read {path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A malformed row in an input file; `line` is 1-based.
    #[error("parse error in {path} line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Data-level failures (empty input, filters that eliminate everything, ...).
    #[error("{0}")]
    Data(String),

    /// Training / inference failures (non-finite loss, missing lookup, ...).
    #[error("model error: {0}")]
    Model(String),

    /// Caller violated an interface contract (e.g. verifying a rule against
    /// a pair set built for a different recommendation).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("serialization error: {0}")]
    Serde(String),

    /// A pipeline stage failed; wraps the underlying error with the stage
    /// name so callers (and exit messages) can say where the run stopped.
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// The pipeline stage this error surfaced in, if any.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

/// `fs::read_to_string` for caller-supplied paths, naming the file on failure.
pub fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
