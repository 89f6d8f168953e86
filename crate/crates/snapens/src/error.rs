use std::path::PathBuf;

/// Errors surfaced by the library. IO failures keep the offending path.
#[derive(Debug, thiserror::Error)]
pub enum SnapError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("bad config: {0}")]
    Config(String),

    #[error("snapshot store mismatch: {0}")]
    StoreMismatch(String),

    #[error("pair ({user}, {item}) not materialized in snapshot store")]
    MissingPair { user: u32, item: u32 },

    #[error("user {user} has only {have} negative candidates, need {need}")]
    TooFewCandidates { user: u32, have: usize, need: usize },

    #[error("id out of range: {0}")]
    OutOfRange(String),

    #[error("training diverged at epoch {epoch} ({what})")]
    Diverged { epoch: u32, what: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

impl SnapError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SnapError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        SnapError::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
