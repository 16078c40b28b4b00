//! Scenario files, output formats and subcommands behind the `relay-esc` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use error::CliError;
