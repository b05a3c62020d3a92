//! Config-driven experiment runner: generate data, train with or without
//! gradient decoupling, evaluate every modality subset, and summarize the
//! logged conflict records.

pub mod commands;
pub mod config;
mod error;
pub mod manifest;

pub use error::{CliError, Result};
