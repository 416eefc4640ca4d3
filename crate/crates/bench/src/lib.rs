//! Command layer of the benchmark front end: config schema, run/sweep/
//! rate/certify/gen operations, and the on-disk trace formats. The binary
//! in `main.rs` is a thin argument parser over [`commands`].
//!
//! Contract with downstream tooling: data goes to files, human-readable
//! notes go to standard error, and the exit code is the only pass/fail
//! channel (0 ok, 1 config error, 2 solver failure, 3 certificate failure).

pub mod commands;
pub mod config;
pub mod output;
pub mod rate;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("certificate failure: {0}")]
    Certificate(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Solver(_) => 2,
            CliError::Certificate(_) => 3,
        }
    }
}

pub(crate) fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

pub(crate) fn solver_err(e: impl std::fmt::Display) -> CliError {
    CliError::Solver(e.to_string())
}
