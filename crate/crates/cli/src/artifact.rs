// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Everything needed to replay a run. Wall time lives in a separate
/// `*.timing.json` file so the artifact itself is reproducible byte for byte.
#[derive(Debug, Clone, Serialize)]
pub struct RunArtifact<'a, T: Serialize> {
    pub schema_version: u32,
    pub engine_version: &'static str,
    pub command: &'static str,
    pub config: &'a RunConfig,
    pub result: T,
}

impl<'a, T: Serialize> RunArtifact<'a, T> {
    pub fn new(command: &'static str, config: &'a RunConfig, result: T) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            engine_version: ENGINE_VERSION,
            command,
            config,
            result,
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s =
        serde_json::to_string_pretty(value).map_err(|e| CliError::json("serializing output", e))?;
    s.push('\n');
    Ok(s)
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    let path = dir.join(name);
    std::fs::write(&path, text)
        .map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
    Ok(path)
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<PathBuf> {
    write_text(dir, name, &to_json(value)?)
}

#[derive(Serialize)]
struct Timing {
    command: &'static str,
    wall_time_secs: f64,
}

pub fn write_timing(dir: &Path, command: &'static str, elapsed: Duration) -> CliResult<PathBuf> {
    write_json(
        dir,
        &format!("{command}.timing.json"),
        &Timing {
            command,
            wall_time_secs: elapsed.as_secs_f64(),
        },
    )
}
