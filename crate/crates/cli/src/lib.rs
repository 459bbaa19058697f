//! Command-line front end for `maxmod-core`: configuration, CSV ingestion,
//! and the `fit`, `predict`, `sample` and `bench` commands with their
//! artifacts.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod runlog;

pub use commands::{cmd_bench, cmd_fit, cmd_predict, cmd_sample};
pub use config::RunConfig;
pub use error::{CliError, Result};
pub use runlog::RunLog;
