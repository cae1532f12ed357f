use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {msg}")]
    Data { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Core(#[from] overload_core::Error),
}

impl LabError {
    pub fn data(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        LabError::Data { path: path.into(), msg: msg.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        LabError::Io { path: path.into(), source }
    }

    /// 2 config, 3 data or I/O, 4 when the latency model cannot be fitted.
    pub fn exit_code(&self) -> i32 {
        use overload_core::Error as E;
        match self {
            LabError::Config(_) => 2,
            LabError::Data { .. } | LabError::Io { .. } => 3,
            LabError::Core(E::InvalidConfig(_)) => 2,
            LabError::Core(E::FitDegenerate | E::InsufficientSamples { .. }) => 4,
            LabError::Core(_) => 3,
        }
    }
}

pub type LabResult<T> = Result<T, LabError>;
