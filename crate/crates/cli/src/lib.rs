//! Config parsing and the experiment-grid runner behind the `msl` binary.

pub mod config;
pub mod error;
pub mod runner;

pub use config::{parse_config, ExperimentConfig, Settings};
pub use error::CliError;
pub use runner::{run, RunSummary};
