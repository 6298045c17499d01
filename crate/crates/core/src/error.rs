use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dataset error at {path}: {msg}")]
    Dataset { path: PathBuf, msg: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("value outside the valid domain: {0}")]
    Domain(String),

    #[error("input too small: {0}")]
    InputSize(String),

    #[error("no non-ignored pixels to score")]
    EmptyTarget,

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("pseudo-labels are degenerate: no pixel reached confidence {threshold}")]
    DegeneratePseudoLabels { threshold: f64 },

    #[error("every class is absent from the confusion matrix")]
    NoClassesPresent,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
