use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::abstraction::AbstractionError;
use crate::io::config::ConfigError;
use crate::io::container::ContainerError;
use crate::sim::SimError;
use crate::synthesis::SynthesisError;

/// Process exit codes of the command-line tool.
pub mod exit {
    pub const OK: i32 = 0;
    /// Bad command line (also used by the argument parser).
    pub const USAGE: i32 = 2;
    /// Unreadable or invalid configuration.
    pub const CONFIG: i32 = 3;
    /// The stored abstraction would exceed the memory budget.
    pub const MEMORY: i32 = 4;
    /// Dynamics or noise evaluation failed.
    pub const NUMERIC: i32 = 5;
    /// File could not be written or read.
    pub const IO: i32 = 6;
    /// Result or matrix file is malformed or does not match the config.
    pub const FORMAT: i32 = 7;
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(ConfigError),
    #[error("abstraction needs {needed} bytes, over the budget of {budget} bytes; rerun with --mode ofa")]
    Memory { needed: u128, budget: u128 },
    #[error("{0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: ContainerError,
    },
    #[error("{0}")]
    Mismatch(String),
    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => exit::CONFIG,
            Error::Memory { .. } => exit::MEMORY,
            Error::Numeric(_) => exit::NUMERIC,
            Error::Io { .. } => exit::IO,
            Error::Format { .. } | Error::Mismatch(_) => exit::FORMAT,
            Error::Usage(_) => exit::USAGE,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, source: ContainerError) -> Self {
        match source {
            ContainerError::Io(e) => Error::io(path, e),
            other => Error::Format {
                path: path.into(),
                source: other,
            },
        }
    }
}

impl From<ConfigError> for Error {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read { path, message } => Error::io(path, io::Error::other(message)),
            other => Error::Config(other),
        }
    }
}

impl From<AbstractionError> for Error {
    fn from(e: AbstractionError) -> Self {
        Error::Numeric(e.to_string())
    }
}

impl From<SynthesisError> for Error {
    fn from(e: SynthesisError) -> Self {
        match e {
            SynthesisError::MemoryBudget { needed, budget } => Error::Memory { needed, budget },
            SynthesisError::Abstraction(a) => a.into(),
            SynthesisError::Spec(m) => Error::Config(ConfigError::Model(m)),
            other => Error::Usage(other.to_string()),
        }
    }
}

impl From<SimError> for Error {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Eval(_) | SimError::Noise(_) => Error::Numeric(e.to_string()),
            SimError::Mismatch => Error::Mismatch(e.to_string()),
            _ => Error::Usage(e.to_string()),
        }
    }
}
