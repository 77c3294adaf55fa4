//! Configuration and orchestration behind the `lgrowth` binary.

pub mod config;
pub mod runner;

pub use config::{ConfigError, RunConfig};
pub use runner::{run, Command, RunOutcome};
