//! Configuration-driven driver for training comparisons, bound
//! verification sweeps and cost reports.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

pub use config::{ConfigError, RunConfig};
pub use error::CliError;
