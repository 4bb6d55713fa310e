//! Declarative experiment runner for the `augrkhs` command-line tool.

pub mod config;
pub mod error;
pub mod experiments;
pub mod record;
pub mod runner;
pub mod seed;

pub use config::{Command, ExperimentConfig};
pub use error::{CliError, Result};
pub use runner::{run, RunReport};
