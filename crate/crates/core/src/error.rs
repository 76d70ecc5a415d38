use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: duplicate entry {what}")]
    Duplicate { line: usize, what: String },

    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },

    #[error("duplicate document id {0:?}")]
    DuplicateDoc(String),

    #[error("duplicate query id {0:?}")]
    DuplicateQuery(String),

    #[error("passage {0:?} has no entry in the document mapping")]
    UnmappedPassage(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index was built without forward vectors; rebuild with forward storage to use feedback")]
    NoForwardVectors,

    #[error("index format: {0}")]
    IndexFormat(String),

    #[error("recipe: {0}")]
    Recipe(String),

    #[error("stage {stage:?} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// Attaches a file path to an error raised while reading that file.
    pub fn in_file(self, path: impl AsRef<std::path::Path>) -> Self {
        Error::File {
            path: path.as_ref().display().to_string(),
            source: Box::new(self),
        }
    }

    /// True when the error comes from bad input data rather than from the
    /// toolkit itself. The CLI maps this onto its exit codes.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Stage { source, .. } | Error::File { source, .. } => source.is_data_error(),
            Error::InvalidArgument(_) => false,
            _ => true,
        }
    }

    pub fn is_usage_error(&self) -> bool {
        match self {
            Error::Stage { source, .. } | Error::File { source, .. } => source.is_usage_error(),
            Error::InvalidArgument(_) => true,
            _ => false,
        }
    }
}
