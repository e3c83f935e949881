//! Library side of the `respa` command-line tool: config parsing, output
//! management and the subcommands. `main.rs` only parses arguments.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::Context;
pub use config::RunConfig;
pub use error::{CliError, CliResult};
