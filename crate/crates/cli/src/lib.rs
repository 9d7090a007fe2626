//! Library side of the `tfr` binary: argument parsing, run configuration and
//! the subcommands.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use cli::{run, Cli};
pub use error::CliError;
