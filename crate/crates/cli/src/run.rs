use std::path::{Path, PathBuf};

use lri_core::{LriError, Result};
use serde::Serialize;
use serde_json::Value;

/// Resolved configuration of one invocation, written as `run.json`.
#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub subcommand: String,
    pub version: String,
    pub jobs: usize,
    pub config: Value,
    pub outputs: Vec<PathBuf>,
    pub results: Value,
}

impl RunRecord {
    pub fn new(subcommand: &str, jobs: usize, config: impl Serialize) -> Self {
        RunRecord {
            subcommand: subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            jobs,
            config: serde_json::to_value(config).expect("config serializes"),
            outputs: Vec::new(),
            results: Value::Null,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| LriError::io(dir, e))?;
        }
        let text = serde_json::to_string_pretty(self).map_err(|e| LriError::Numerical(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| LriError::io(path, e))
    }
}

/// `run.json` next to `primary`, or in the current directory.
pub fn run_json_beside(primary: &Path) -> PathBuf {
    match primary.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.join("run.json"),
        _ => PathBuf::from("run.json"),
    }
}
