//! File formats, configuration and subcommands of the `grasspca` tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod csvio;
pub mod error;
pub mod exec;

pub use config::{parse_config, ExperimentConfig, Overrides};
pub use error::CliError;
