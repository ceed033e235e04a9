//! Command-line orchestration for turnpike-core: single-stage commands,
//! experiment presets and run comparison.

pub mod commands;
pub mod config;
pub mod error;
pub mod preset;

pub use error::{CliError, Result};
