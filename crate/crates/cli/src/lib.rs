//! Command-line front end: a JSON run configuration, flag overrides and the
//! `ingest`, `index`, `synth`, `train`, `eval` and `sweep` subcommands.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::Context;
pub use config::{Overrides, RunConfig};
pub use error::CliError;
