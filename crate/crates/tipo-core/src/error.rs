//! Crate-wide error type.
//!
//! Variants are grouped by who is at fault: `Config` and `Precondition`
//! mean the caller handed us something unusable, `Parse`/`Schema`/`Data`
//! mean the bytes on disk are bad, `Divergence` means training blew up.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed JSON on a specific line of a JSONL file.
    #[error("{path}:{line}: malformed line: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    /// Well-formed JSON that does not fit the schema (unknown action,
    /// missing field, wrong type).
    #[error("{path}:{line}: schema error: {msg}")]
    Schema { path: PathBuf, line: usize, msg: String },

    /// Semantically broken data (failed validation, missing task, empty split).
    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    /// An operation was called outside its domain.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Non-finite loss or a failed runtime sanity check during training.
    #[error("training diverged: {0}")]
    Divergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the CLI: 1 usage/config, 2 data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Precondition(_) => 1,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Schema { .. }
            | Error::Data(_)
            | Error::Divergence(_) => 2,
        }
    }
}
