//! Library side of the `rdcomm` binary: config parsing, subcommands and the
//! theory self-checks.

pub mod commands;
pub mod config;
pub mod error;
pub mod verify;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
