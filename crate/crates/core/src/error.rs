//! Error type shared by every module of the simulator.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// Vector or matrix dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    #[error("empty shard")]
    EmptyShard,

    /// A telemetry measurement was non-positive or non-finite.
    #[error("measurement error: {0}")]
    Measurement(String),

    /// A worker profile lacks data needed by the caller (e.g. a link entry).
    #[error("profile error: {0}")]
    Profile(String),

    #[error("data error: {0}")]
    Data(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by user-supplied configuration rather than
    /// by the run itself.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Json(_))
    }
}
