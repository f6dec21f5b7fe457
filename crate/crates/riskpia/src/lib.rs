//! Configuration, artifacts and subcommands of the `riskpia` command-line runner.

pub mod artifact;
pub mod commands;
pub mod config;
