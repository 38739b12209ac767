//! Output formatting: JSON envelopes and CSV header blocks.

use std::path::Path;

use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

pub const TOOL: &str = "wedge-solver";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

#[derive(Debug, Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: &'a RunConfig,
    pub result: T,
}

impl<'a, T: Serialize> Envelope<'a, T> {
    pub fn new(command: &'static str, config: &'a RunConfig, result: T) -> Self {
        Self { tool: TOOL, version: VERSION, command, config, result }
    }

    pub fn to_string_pretty(&self) -> Result<String, CliError> {
        serde_json::to_string_pretty(self).map_err(|e| CliError::Io(e.to_string()))
    }
}

/// Comment lines naming the tool, version, command and the full configuration.
pub fn csv_header(command: &str, config: &RunConfig) -> Result<String, CliError> {
    let cfg = serde_json::to_string(config).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(format!("# {TOOL} {VERSION}\n# command: {command}\n# config: {cfg}\n"))
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}
