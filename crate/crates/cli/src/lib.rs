//! The `imce` toolflow (compile, map, run, oracle, stats) as a library.

pub mod commands;
pub mod error;
pub mod local;
pub mod manifest;
pub mod report;

pub use error::CliError;
