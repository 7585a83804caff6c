use std::fmt;

/// Command-line failures, each mapped to an exit code.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Solver(_) => 3,
        }
    }

    /// Validation error naming a config key path.
    pub fn at(path: impl fmt::Display, msg: impl fmt::Display) -> Self {
        CliError::Validation(format!("{path}: {msg}"))
    }

    pub fn solver(e: impl fmt::Display) -> Self {
        CliError::Solver(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
