// SPDX-License-Identifier: MIT OR Apache-2.0

//! `wasd` command-line tool: configuration, command orchestration and run
//! artifacts.

pub mod artifact;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;

pub use cli::run;
pub use config::RunConfig;
pub use error::{CliError, CliResult};
