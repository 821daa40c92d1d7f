use std::io;

use thiserror::Error;

/// Failure of a command, mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed or inconsistent input (exit code 2).
    #[error("{0}")]
    Input(String),
    /// Nothing to plan: no navigable cells or no tag options (exit code 3).
    #[error("{0}")]
    Infeasible(String),
    /// A validation check did not meet its tolerance (exit code 4).
    #[error("{0}")]
    ValidationFailed(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::ValidationFailed(_) => 4,
            CliError::Io { .. } => 1,
        }
    }

    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }
}
