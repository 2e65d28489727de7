use std::io;

use thiserror::Error;

/// Errors produced by learners, environments, oracles and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("{learner} diverged at time {time}")]
    Diverged { learner: String, time: u64 },

    #[error("missing cumulant for active signal {signal_id}")]
    MissingCumulant { signal_id: usize },

    #[error("map error at row {row}, column {col}: {msg}")]
    Map { row: usize, col: usize, msg: String },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn map(row: usize, col: usize, msg: impl Into<String>) -> Self {
        Error::Map {
            row,
            col,
            msg: msg.into(),
        }
    }
}
