//! Command-line front end: run configuration, strength and delay scenarios,
//! and the train / region / lean-test / export pipelines.

pub mod commands;
pub mod config;
pub mod scenario;

pub use config::RunConfig;
pub use scenario::{apply_scenario, Scenario};
