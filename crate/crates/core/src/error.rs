//! Error type shared by every module.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("gradient check error: {0}")]
    GradCheck(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("exploration error: {0}")]
    Exploration(String),

    #[error("registry error: {0}")]
    Registry(String),

    #[error("routing error: {0}")]
    Routing(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("plot error: {0}")]
    Plot(String),

    #[error("persistence error ({path}): {msg}")]
    Persistence { path: PathBuf, msg: String },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn persistence(path: impl Into<PathBuf>, msg: impl std::fmt::Display) -> Self {
        Error::Persistence {
            path: path.into(),
            msg: msg.to_string(),
        }
    }

    /// Process exit status for the command-line front end. Each error family
    /// gets its own code so scripts can tell them apart.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) => 3,
            Error::Training(_) | Error::GradCheck(_) => 4,
            Error::Exploration(_) | Error::Estimation(_) => 5,
            Error::Persistence { .. } => 6,
            Error::Shape(_) => 7,
            Error::Registry(_) | Error::Routing(_) => 8,
            Error::Metric(_) | Error::Plot(_) => 9,
        }
    }
}

pub(crate) fn ensure_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::Shape(format!(
            "{what}: expected length {expected}, got {got}"
        )));
    }
    Ok(())
}
