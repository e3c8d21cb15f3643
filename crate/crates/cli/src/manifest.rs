use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Result;
use scenegen_core::autoregression::WindowLog;
use scenegen_core::checkpoint::write_atomic;
use serde::{Deserialize, Serialize};

/// Record of one CLI run, written next to its outputs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    /// Canonical text of the effective configuration.
    pub config: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Per-window condition metadata for generation runs.
    pub windows: Vec<WindowLog>,
    pub summary: serde_json::Value,
    pub elapsed_seconds: f64,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: String) -> Self {
        Self {
            tool: "scenegen".into(),
            version: env!("SCENEGEN_VERSION").into(),
            command: command.into(),
            args: std::env::args().skip(1).collect(),
            seed,
            config,
            summary: serde_json::Value::Null,
            ..Default::default()
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(&dir.join("manifest.json"), text.as_bytes())?;
        Ok(())
    }
}
