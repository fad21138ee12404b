use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("deployment failed: {0}")]
    Deployment(String),

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("infeasible allocation: {0}")]
    Infeasible(String),

    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Error {
        Error::Io { path: path.to_path_buf(), source }
    }

    /// Short category name, used for process exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::Deployment(_) => "deployment",
            Error::Schedule(_) => "schedule",
            Error::Infeasible(_) => "infeasible",
            Error::TooLarge(_) => "too-large",
            Error::Io { .. } => "io",
            Error::Serde(_) => "serde",
        }
    }
}
