use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sharpcomp::config::ExperimentConfig;

use crate::exit::{io_failure, Failure};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record written into every output directory before any results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// SHA-256 of the resolved config JSON.
    pub config_hash: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub outputs: Vec<PathBuf>,
    pub config: ExperimentConfig,
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    Sha256::digest(cfg.to_json().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn begin(command: &str, cfg: &ExperimentConfig, outputs: Vec<PathBuf>) -> Self {
        Self {
            tool: "sharpcomp".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash: config_hash(cfg),
            seed: cfg.train.seed,
            started_unix: now(),
            finished_unix: None,
            outputs,
            config: cfg.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), Failure> {
        let path = dir.join(MANIFEST_FILE);
        let body = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, body).map_err(|e| io_failure(&path, e))
    }

    pub fn finish(mut self, dir: &Path) -> Result<(), Failure> {
        self.finished_unix = Some(now());
        self.write(dir)
    }
}
