//! Experiment harness for `smoothnet`: TOML configs, subcommands that
//! reproduce the standard experiments, CSV and SVG output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{run, Command, Invocation};
pub use error::{CliError, CliResult};
