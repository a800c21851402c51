//! Crate-wide error type with machine-readable categories for the CLI.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CtdgError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("evaluation error: {0}")]
    Eval(String),
}

impl CtdgError {
    /// Stable category token, printed by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            CtdgError::Io(_) => "io",
            CtdgError::Data(_) => "data",
            CtdgError::Config(_) => "config",
            CtdgError::Checkpoint(_) => "checkpoint",
            CtdgError::Divergence(_) => "divergence",
            CtdgError::Eval(_) => "eval",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CtdgError::Io(_) => 3,
            CtdgError::Data(_) => 4,
            CtdgError::Config(_) => 2,
            CtdgError::Checkpoint(_) => 5,
            CtdgError::Divergence(_) => 6,
            CtdgError::Eval(_) => 7,
        }
    }
}
