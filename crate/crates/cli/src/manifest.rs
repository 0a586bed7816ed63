use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

/// Written next to every run's outputs. `argv` re-runs the command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub checkpoint_sha256: Option<String>,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: &str, config: impl Serialize, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            argv: std::env::args().skip(1).collect(),
            config: serde_json::to_value(config).expect("config serializes"),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            checkpoint_sha256: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        let path = dir.join(format!("{}.manifest.json", self.command));
        fs::write(&path, serde_json::to_string_pretty(self)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
