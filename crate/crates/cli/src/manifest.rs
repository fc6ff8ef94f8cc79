//! Run manifests: what was run, with which seeds, and what came out.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaSeed {
    pub replica: u64,
    pub seed: u64,
    pub stream: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub config_hash: String,
    pub version: String,
    pub base_seed: u64,
    pub workers: usize,
    pub replica_seeds: Vec<ReplicaSeed>,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<OutputFile>,
    pub partial: bool,
    pub error: Option<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn version_string() -> String {
    format!("kc {}", env!("CARGO_PKG_VERSION"))
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")
    }

    pub fn read(dir: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }

    /// Names of outputs whose file no longer matches its recorded checksum.
    pub fn verify(&self, dir: &Path) -> Vec<String> {
        self.outputs
            .iter()
            .filter(|o| std::fs::read(dir.join(&o.file)).map(|b| sha256_hex(&b) != o.sha256).unwrap_or(true))
            .map(|o| o.file.clone())
            .collect()
    }
}
