//! Experiment harness for vrank: configuration, data preparation, the
//! subcommand implementations and the oracle suite.

pub mod commands;
pub mod config;
pub mod data;
pub mod experiments;
pub mod stats;
pub mod verify;

pub use config::ExperimentConfig;
