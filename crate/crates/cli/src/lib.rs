//! Command-line pipeline around `ergi-core`: configuration, CSV formats,
//! model files and the subcommand implementations.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod model_file;

pub use error::{CliError, CliResult};
