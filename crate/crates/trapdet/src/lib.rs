//! Command-line front end for `trapdet-core`: TOML configuration with unit
//! suffixes, CSV and JSON output, parameter sweeps and fit bootstrapping.

pub mod cli;
pub mod commands;
pub mod config;
pub mod csvio;
pub mod error;
pub mod sweep;
pub mod synthetic;
pub mod units;

pub use error::CliError;
