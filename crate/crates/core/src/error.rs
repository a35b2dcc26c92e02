use std::path::PathBuf;

use thiserror::Error;

use crate::coupled::JointModel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition of an operation was not met (shape, rank, range).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("solver diverged: {0}")]
    Diverged(String),

    /// The joint solver produced a non-finite objective. The last state whose
    /// objective was finite is carried along so callers can persist it.
    #[error("joint solver diverged at sweep {sweep}")]
    JointDiverged {
        sweep: usize,
        last_finite: Box<JointModel>,
    },

    #[error("degenerate group: subsite group {0} has no questions")]
    DegenerateGroup(usize),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("version mismatch: {0}")]
    Version(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn format(line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            line,
            message: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
