//! Command-line experiments for the `gated_apd` detector simulator.
//!
//! The binary is a thin wrapper over [`app::run`]; the experiment functions in
//! [`experiments`] are usable without touching the filesystem.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

pub use error::{CliError, CliResult};
