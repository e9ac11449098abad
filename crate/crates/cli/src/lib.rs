//! Batch front end for the frogsim laboratory.
//!
//! `frogsim <command> [--config FILE] [--key value ...]` resolves an
//! [`ExperimentConfig`], runs it and writes CSV tables plus JSON-lines run
//! records under `--out`. Exit codes: 0 ok, 2 configuration error, 3 a bound
//! check failed, 4 a cap truncated the run so the result is inconclusive.

pub mod args;
pub mod config;
pub mod run;

pub use args::{parse_config, Cli};
pub use config::{Command, ConfigError, ExperimentConfig};
pub use run::{run_experiment, Outcome, RunError, Status};

pub const EXIT_CONFIG: i32 = 2;
