//! Run identity and provenance.
//!
//! Every campaign, monitor run, or scan gets a `run_id` derived from the
//! tool version, the exact config text, and the seed — rerunning with the
//! same three produces the same id, so data artifacts (which embed only the
//! id) stay byte-identical. Wall-clock timestamps and input fingerprints
//! live here, in the manifest file, and nowhere else.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("reading manifest: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing manifest: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("serializing manifest: {0}")]
    Serialize(#[from] toml::ser::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFingerprint {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub tool_version: String,
    pub command: String,
    pub backend: String,
    pub rng_seed: u64,
    pub config_sha256: String,
    #[serde(default, rename = "input")]
    pub inputs: Vec<InputFingerprint>,
    /// Anything that kept the run from being clean: layers skipped for
    /// missing privileges, backend errors that cut sampling short.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub started_unix: u64,
    #[serde(default)]
    pub finished_unix: u64,
}

/// Deterministic run identity: first 16 hex digits of
/// sha256(version, config text, seed).
pub fn run_id(config_text: &str, rng_seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(TOOL_VERSION.as_bytes());
    h.update(b"\n");
    h.update(config_text.as_bytes());
    h.update(b"\n");
    h.update(rng_seed.to_le_bytes());
    hex::encode(&h.finalize()[..8])
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, backend: &str, config_text: &str, rng_seed: u64) -> Self {
        RunManifest {
            run_id: run_id(config_text, rng_seed),
            tool_version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            backend: backend.to_string(),
            rng_seed,
            config_sha256: hex::encode(Sha256::digest(config_text.as_bytes())),
            inputs: Vec::new(),
            notes: Vec::new(),
            started_unix: now_unix(),
            finished_unix: 0,
        }
    }

    pub fn record_input(&mut self, path: &str, bytes: &[u8]) {
        self.inputs.push(InputFingerprint {
            path: path.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
        });
    }

    pub fn finish(&mut self) {
        self.finished_unix = now_unix();
    }

    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        Ok(std::fs::write(path, toml::to_string_pretty(self)?)?)
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
    }
}
