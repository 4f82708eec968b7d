//! Library side of the `mmtlab` binary: experiment configs and the
//! pipeline stages, exposed so tests can drive them directly.

pub mod commands;
pub mod config;
pub mod error;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
