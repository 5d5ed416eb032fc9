use std::path::PathBuf;

use crate::engine::IterationRecord;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("measurement matrix is rank deficient (smallest/largest singular value = {ratio:e})")]
    RankDeficient { ratio: f64 },

    #[error("non-finite message at iteration {iteration}")]
    Divergence {
        iteration: usize,
        /// Iterations completed before the failure; every entry is finite.
        trace: Vec<IterationRecord>,
    },

    #[error("degenerate configuration: {0}")]
    DegenerateConfig(String),

    #[error("oracle failure: {0}")]
    OracleFailure(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
