//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

use crate::client::ClientError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed JSON or a JSON shape that does not match the record schema.
    /// `line` is 1-based within the source file; 0 when parsing a bare line.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A well-formed record that violates a schema invariant.
    #[error("validation error in field `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty dataset: {path} contains no valid records")]
    EmptyDataset { path: PathBuf },

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A non-empty reliability bin with zero mean confidence (cannot arise
    /// from softmax inputs, only from hand-built tables).
    #[error("degenerate bin: non-empty bin {bin} has zero mean confidence")]
    DegenerateBin { bin: usize },

    /// Non-finite value produced where the math guarantees finiteness.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Client(#[from] ClientError),

    /// Equivalence judge failure, tagged with the sample it was judging.
    #[error("equivalence judge failed on sample {index}: {source}")]
    Judge {
        index: usize,
        #[source]
        source: ClientError,
    },

    /// A run finished but produced partial results (failed cells, failed
    /// records); distinguished so the CLI can exit with its own code.
    #[error("incomplete results: {0}")]
    Incomplete(String),

    #[error("render error: {0}")]
    Render(String),
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Re-tag a parse error with the 1-based line number it came from.
    pub(crate) fn at_line(self, line: usize) -> Self {
        match self {
            Error::Parse { message, .. } => Error::Parse { line, message },
            other => other,
        }
    }
}
