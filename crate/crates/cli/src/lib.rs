//! Driver for the recurrent graph classifier: run configuration and the
//! work behind each subcommand of the `vrgc` binary.

pub mod commands;
pub mod config;

pub use config::{ConfigError, RunConfig};
