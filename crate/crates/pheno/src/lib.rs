//! File formats, reports and the command-line driver around `pheno-core`.
//!
//! Commands are deterministic given their flags and input files. Output files
//! are overwritten; concurrent runs writing the same paths race, last writer wins.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod models;
pub mod pipeline;
pub mod report;
pub mod split;

pub use error::{CliError, Result};
