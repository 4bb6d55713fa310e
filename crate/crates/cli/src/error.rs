use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read config {path}: {source}")]
    ReadConfig { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    ParseConfig(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("output directory {path} is not writable: {source}")]
    OutputDir { path: PathBuf, source: std::io::Error },
    #[error("write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] augrkhs::Error),
}

impl CliError {
    /// Configuration and startup problems, reported before any cell runs.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            CliError::ReadConfig { .. } | CliError::ParseConfig(_) | CliError::Config(_) | CliError::OutputDir { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
