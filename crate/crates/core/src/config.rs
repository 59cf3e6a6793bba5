//! TOML run configuration shared by the CLI subcommands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierConfig;
use crate::monitor::DEFAULT_TOLERANCE;
use crate::probes::{EvictionStrategy, InjectionHook};
use crate::templater::CampaignConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("writing config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Which probe primitive drives sampling and monitoring.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// Deterministic replay of a recorded access trace.
    #[default]
    Sim,
    /// Page-idle bitmap via /sys/kernel/mm/page_idle.
    PageIdle,
    /// Page-cache residency via preadv2 + RWF_NOWAIT (destructive).
    PageCache,
    /// Flush+Reload on shared memory, 64-byte resolution.
    Flush,
}

fn default_eviction() -> EvictionStrategy {
    EvictionStrategy::Fadvise
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    #[serde(default)]
    pub kind: BackendKind,
    /// Trace file for the sim backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    /// Live process whose mappings are probed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_pid: Option<u32>,
    /// Pre-captured smaps/maps file, as an offline alternative to a pid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maps_file: Option<PathBuf>,
    /// Files probed directly (pagecache backend without a process).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub files: Vec<PathBuf>,
    /// Mapping-path substrings to exclude (e.g. writable data the target
    /// touches on every event regardless of input).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub blacklist: Vec<String>,
    /// Command run to trigger one event on the live target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injection_hook: Option<InjectionHook>,
    #[serde(default = "default_eviction")]
    pub eviction: EvictionStrategy,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Sim,
            trace: None,
            target_pid: None,
            maps_file: None,
            files: Vec::new(),
            blacklist: Vec::new(),
            injection_hook: None,
            eviction: default_eviction(),
        }
    }
}

fn default_rounds() -> u64 {
    1000
}

fn default_misses() -> u64 {
    5
}

fn default_tolerance() -> u64 {
    DEFAULT_TOLERANCE
}

/// Monitoring-phase knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorSection {
    #[serde(default = "default_rounds")]
    pub rounds: u64,
    /// Consecutive missed rounds before an ongoing detection is closed.
    #[serde(default = "default_misses")]
    pub debounce_misses: u64,
    /// Max |detection - ground truth| round distance that still counts as a
    /// true positive when scoring.
    #[serde(default = "default_tolerance")]
    pub tolerance: u64,
}

impl Default for MonitorSection {
    fn default() -> Self {
        MonitorSection {
            rounds: default_rounds(),
            debounce_misses: default_misses(),
            tolerance: default_tolerance(),
        }
    }
}

impl MonitorSection {
    pub fn monitor_config(&self) -> crate::monitor::MonitorConfig {
        crate::monitor::MonitorConfig {
            debounce_misses: self.debounce_misses,
        }
    }
}

/// Top-level run configuration. `[campaign]` is only needed by templating;
/// classify/monitor runs can omit it.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub campaign: Option<CampaignConfig>,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub monitor: MonitorSection,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Config, ConfigError> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Returns the parsed config together with the raw file text (the raw
    /// text feeds the run id so reruns of an identical file reproduce it).
    pub fn load(path: &Path) -> Result<(Config, String), ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg = Config::from_toml_str(&text)?;
        Ok((cfg, text))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(c) = &self.campaign {
            c.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        let b = &self.backend;
        match b.kind {
            BackendKind::Sim => {
                if b.trace.is_none() {
                    return Err(ConfigError::Invalid(
                        "backend.kind = \"sim\" requires backend.trace".into(),
                    ));
                }
            }
            BackendKind::PageIdle | BackendKind::Flush => {
                if b.target_pid.is_none() && b.maps_file.is_none() {
                    return Err(ConfigError::Invalid(format!(
                        "backend.kind = {:?} requires backend.target_pid or backend.maps_file",
                        b.kind
                    )));
                }
            }
            BackendKind::PageCache => {
                if b.target_pid.is_none() && b.maps_file.is_none() && b.files.is_empty() {
                    return Err(ConfigError::Invalid(
                        "backend.kind = \"pagecache\" requires backend.target_pid, \
                         backend.maps_file, or backend.files"
                            .into(),
                    ));
                }
            }
        }
        if let EvictionStrategy::FileSet { bytes, .. } = &b.eviction {
            if *bytes == 0 {
                return Err(ConfigError::Invalid(
                    "backend.eviction file set needs bytes > 0".into(),
                ));
            }
        }
        if self.monitor.rounds == 0 {
            return Err(ConfigError::Invalid("monitor.rounds must be > 0".into()));
        }
        Ok(())
    }
}
