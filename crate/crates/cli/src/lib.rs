//! Library side of the `setr` binary: configuration loading and the
//! subcommand implementations.

pub mod commands;
pub mod config;
