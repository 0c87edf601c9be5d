//! Batch front end for `subcusum`: experiment configuration files and the
//! `simulate`, `tune`, `calibrate` and `compare` subcommands.

pub mod commands;
pub mod config;

pub use commands::{CliError, CliResult};
pub use config::{ConfigError, ExperimentConfig, Origins};
