use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape problems: empty frame lists, mismatched dimensions, bad parameter counts.
    #[error("structural error: {0}")]
    Structure(String),

    /// Value problems: non-finite numbers, out-of-range configuration.
    #[error("validation error: {0}")]
    Validation(String),

    /// The input is well formed but the operation is undefined on it.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown tracklet id {0:?}")]
    UnknownTracklet(String),

    #[error("batch construction error: {0}")]
    Batch(String),

    #[error("adaptation error: {0}")]
    Adaptation(String),

    #[error("merge error: {0}")]
    Merge(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("protocol error: query {query:?} has no relevant gallery items")]
    NoRelevant { query: String },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
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

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
