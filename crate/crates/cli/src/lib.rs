//! Experiment runner behind the `fedadmm` binary: config files, problem
//! construction, and the CSV/JSONL artifacts written for each run.

pub mod config;
pub mod runner;

pub use config::{ConfigError, ExperimentConfig};
pub use runner::{CliError, Outcome};
