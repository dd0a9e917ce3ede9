//! Experiment configuration, reproduction runs and the acceptance checks.

pub mod config;
pub mod acceptance;
pub mod experiments;

pub use config::{Experiment, ExperimentConfig, Overrides};
pub use experiments::{run_experiment, run_experiment_to, ExperimentOutput, Summary};
