use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("input too large for exhaustive enumeration: {events} events (limit {limit})")]
    InputTooLarge { events: usize, limit: usize },

    #[error("unknown user {0:?}")]
    UnknownUser(String),

    #[error("unknown item {0:?}")]
    UnknownItem(String),

    #[error("singular normal equations while solving {0}")]
    SingularSystem(String),

    #[error("no payments on target day {0}")]
    EmptyReference(chrono::NaiveDate),

    #[error("pattern store is inconsistent: {0}")]
    InconsistentStore(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {reason}")]
    Format {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            reason: reason.into(),
        }
    }
}
