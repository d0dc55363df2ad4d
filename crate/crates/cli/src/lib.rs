//! Library side of the `panodream` command-line tool: run configuration,
//! file formats, checkpoint handling and the subcommands.

pub mod commands;
pub mod config;
pub mod io;
pub mod models;

pub use config::{RunConfig, RUN_CONFIG_SCHEMA_VERSION};
