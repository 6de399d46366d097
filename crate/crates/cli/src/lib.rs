//! Command-line front end: configuration, checkpoints, experiment orchestration and plots.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod method;
pub mod svg;

pub use commands::{run, Cli};
pub use error::CliError;
