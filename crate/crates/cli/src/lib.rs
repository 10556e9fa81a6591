//! Configuration parsing and experiment runners behind the `kslab` binary.

pub mod config;
pub mod runner;

pub use config::{
    parse_config, parse_config_with, ConfigError, Datum, ExperimentConfig, ExperimentKind,
    SolverKind,
};
pub use runner::{error_exit_code, run_experiment, Outcome, RunError, RunReport};
