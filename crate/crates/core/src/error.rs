use std::path::PathBuf;

use thiserror::Error;

use crate::pose::PoseError;
use crate::stats::StatsError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Schema violation in one of the canonical files. `line` is 1-based;
    /// 0 means the problem is not tied to a single line.
    #[error("{}:{line}: {msg}", file.display())]
    Schema {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("participant count must be 4, found {0}")]
    ParticipantCount(usize),

    #[error("invalid {what}: {msg}")]
    Invalid { what: &'static str, msg: String },

    #[error("correction patch references missing segments: {}", .0.join(", "))]
    UnmatchedCorrections(Vec<String>),

    #[error(transparent)]
    Pose(#[from] PoseError),

    #[error(transparent)]
    Stats(#[from] StatsError),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            msg: msg.into(),
        }
    }

    pub(crate) fn schema(file: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Schema {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
