//! Dataset files, checkpoints, reports and the command-line runner for
//! [`magna_core`].
//!
//! - [`data`]: TSV node datasets, knowledge-graph triple files, edge lists
//! - [`checkpoint`]: JSON model checkpoints
//! - [`config`]: run configuration files
//! - [`output`]: metrics, reports and CSV tables
//! - [`run`]: one entry point per command

pub mod checkpoint;
pub mod config;
pub mod data;
mod error;
pub mod output;
pub mod run;

pub use error::{Error, Result};
