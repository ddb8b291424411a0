//! Run manifests: what a command was run with, written before it starts.

use std::collections::BTreeMap;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Resolved configuration in the config-file format.
    pub config: String,
    pub master_seed: u64,
    /// SHA-256 of the training data, or empty when no dataset is involved.
    pub dataset_fingerprint: String,
    /// Role -> path of every input and output.
    pub artifacts: BTreeMap<String, String>,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, fingerprint: String) -> Self {
        RunManifest {
            command: command.to_string(),
            config: cfg.to_text(),
            master_seed: cfg.train.master_seed,
            dataset_fingerprint: fingerprint,
            artifacts: BTreeMap::new(),
            tool_version: TOOL_VERSION.to_string(),
        }
    }

    pub fn artifact(mut self, role: &str, path: &FsPath) -> Self {
        self.artifacts
            .insert(role.to_string(), path.display().to_string());
        self
    }

    pub fn config(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(&self.config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::parse(
                0,
                format!(
                    "bad manifest at line {} column {}: {e}",
                    e.line(),
                    e.column()
                ),
            )
        })
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
