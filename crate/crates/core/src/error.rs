use std::path::PathBuf;

use jointscore_nn::NnError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unreadable image {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("image has a zero dimension")]
    ZeroDimension,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("image too small: {0}")]
    TooSmall(String),
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("degenerate histogram: {0}")]
    Degenerate(String),
    #[error("no limb found")]
    NoLimbFound,
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("{0}")]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("image encoding: {0}")]
    Encode(String),
}

impl Error {
    /// True for errors caused by bad user input rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::UnsupportedFormat(_)
                | Error::ZeroDimension
                | Error::Dataset(_)
                | Error::DimensionMismatch { .. }
                | Error::TooSmall(_)
                | Error::Csv(_)
        )
    }
}
