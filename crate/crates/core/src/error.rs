use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the weak-supervision pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },

    #[error("query `{query}` references unknown passage `{passage}`")]
    DanglingPassage { query: String, passage: String },

    #[error("no queries")]
    NoQueries,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("unknown passage `{0}`")]
    UnknownPassage(String),

    #[error("embedding store `{store}` has no vector for {role} `{id}`")]
    MissingEmbedding {
        store: String,
        role: &'static str,
        id: String,
    },

    #[error("embedding file: {0}")]
    EmbeddingFormat(String),

    #[error("empty collection: {0}")]
    Empty(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("{0}")]
    Format(String),

    #[error("stage `{stage}` needs {path}; run the earlier stages first")]
    MissingInput { stage: &'static str, path: PathBuf },
}

impl Error {
    /// Whether the error stems from bad input (config, data files, stage
    /// artifacts) rather than a failure during computation.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. } | Error::Empty(_) | Error::Shape(_) | Error::NonFinite(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
