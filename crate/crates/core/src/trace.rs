//! Deterministic access-trace fixtures for the simulator.
//!
//! A trace declares the target's probeable regions, what each input event
//! touches, an optional replay schedule (for monitoring runs), and the
//! read-around behavior to emulate. The same schedule doubles as the ground
//! truth when scoring detections.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::probes::ReadaroundModel;
use crate::types::{EventId, MemoryRegion, RegionSet, SourceId};

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("unsupported trace version {0} (expected 1)")]
    Version(u32),
    #[error("trace declares no regions")]
    NoRegions,
    #[error("event {event}: access {source_id}+{offset:#x} is outside every declared region")]
    AccessOutOfRegion {
        event: EventId,
        source_id: SourceId,
        offset: u64,
    },
    #[error("event {event}: jitter {jitter} is not a probability")]
    BadJitter { event: EventId, jitter: f64 },
    #[error("duplicate event {0}")]
    DuplicateEvent(EventId),
    #[error("schedule references unknown event {0}")]
    UnknownScheduleEvent(EventId),
    #[error("{0}")]
    Region(#[from] crate::types::TypeError),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing trace: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("serializing trace: {0}")]
    Serialize(#[from] toml::ser::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceAccess {
    pub source: SourceId,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct EventTrace {
    pub accesses: Vec<TraceAccess>,
    /// Probability that one spurious access (uniform over the regions) rides
    /// along when this event fires. Models input-handling noise.
    pub jitter: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub round: u64,
    pub event: EventId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccessTrace {
    /// Version string the traced binary claims; carried into templates.
    pub binary_version: String,
    pub regions: RegionSet,
    pub events: BTreeMap<EventId, EventTrace>,
    pub readaround: ReadaroundModel,
    /// Replay plan: at probe round N, fire event E. Sorted by round.
    pub schedule: Vec<ScheduleEntry>,
    /// sha256 of the serialized form this trace was loaded from.
    pub fingerprint: String,
}

// On-disk shape. Kept separate from AccessTrace so validation and the
// RegionSet/BTreeMap invariants happen in exactly one place.
#[derive(Serialize, Deserialize)]
struct TraceFile {
    version: u32,
    #[serde(default)]
    binary_version: String,
    #[serde(rename = "region")]
    regions: Vec<MemoryRegion>,
    #[serde(rename = "event", default)]
    events: Vec<EventFile>,
    #[serde(default = "ReadaroundModel::disabled")]
    readaround: ReadaroundModel,
    #[serde(rename = "schedule", default)]
    schedule: Vec<ScheduleEntry>,
}

#[derive(Serialize, Deserialize)]
struct EventFile {
    name: EventId,
    #[serde(default)]
    jitter: f64,
    #[serde(default)]
    accesses: Vec<TraceAccess>,
}

impl AccessTrace {
    pub fn from_toml_str(text: &str) -> Result<Self, TraceError> {
        let file: TraceFile = toml::from_str(text)?;
        if file.version != 1 {
            return Err(TraceError::Version(file.version));
        }
        if file.regions.is_empty() {
            return Err(TraceError::NoRegions);
        }
        let regions = RegionSet::new(file.regions)?;
        let mut events = BTreeMap::new();
        for ev in file.events {
            if !(0.0..=1.0).contains(&ev.jitter) {
                return Err(TraceError::BadJitter {
                    event: ev.name,
                    jitter: ev.jitter,
                });
            }
            for a in &ev.accesses {
                if !regions.contains(&a.source, a.offset) {
                    return Err(TraceError::AccessOutOfRegion {
                        event: ev.name,
                        source_id: a.source.clone(),
                        offset: a.offset,
                    });
                }
            }
            let prev = events.insert(
                ev.name.clone(),
                EventTrace {
                    accesses: ev.accesses,
                    jitter: ev.jitter,
                },
            );
            if prev.is_some() {
                return Err(TraceError::DuplicateEvent(ev.name));
            }
        }
        let mut schedule = file.schedule;
        for s in &schedule {
            if !events.contains_key(&s.event) && !s.event.is_idle() {
                return Err(TraceError::UnknownScheduleEvent(s.event.clone()));
            }
        }
        schedule.sort_by_key(|s| s.round);
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        Ok(AccessTrace {
            binary_version: file.binary_version,
            regions,
            events,
            readaround: file.readaround,
            schedule,
            fingerprint: hex::encode(hasher.finalize()),
        })
    }

    pub fn load(path: &Path) -> Result<Self, TraceError> {
        let text = std::fs::read_to_string(path).map_err(|e| TraceError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, TraceError> {
        let file = TraceFile {
            version: 1,
            binary_version: self.binary_version.clone(),
            regions: self.regions.iter().cloned().collect(),
            events: self
                .events
                .iter()
                .map(|(name, et)| EventFile {
                    name: name.clone(),
                    jitter: et.jitter,
                    accesses: et.accesses.clone(),
                })
                .collect(),
            readaround: self.readaround,
            schedule: self.schedule.clone(),
        };
        Ok(toml::to_string_pretty(&file)?)
    }

    pub fn event(&self, id: &EventId) -> Option<&EventTrace> {
        self.events.get(id)
    }

    /// Ground-truth stream for evaluation: the schedule minus idle filler.
    pub fn ground_truth(&self) -> Vec<(u64, EventId)> {
        self.schedule
            .iter()
            .filter(|s| !s.event.is_idle())
            .map(|s| (s.round, s.event.clone()))
            .collect()
    }
}

/// Builder used all over the test suite: construct traces in code, then feed
/// them to the simulator or serialize them as fixtures.
#[derive(Default)]
pub struct TraceBuilder {
    binary_version: String,
    regions: Vec<MemoryRegion>,
    events: Vec<(EventId, EventTrace)>,
    readaround: ReadaroundModel,
    schedule: Vec<ScheduleEntry>,
}

impl TraceBuilder {
    pub fn new() -> Self {
        TraceBuilder {
            readaround: ReadaroundModel::disabled(),
            ..TraceBuilder::default()
        }
    }

    pub fn binary_version(mut self, v: impl Into<String>) -> Self {
        self.binary_version = v.into();
        self
    }

    pub fn region(mut self, source: impl Into<SourceId>, offset: u64, length: u64) -> Self {
        self.regions.push(MemoryRegion {
            source: source.into(),
            offset,
            length,
        });
        self
    }

    pub fn event(mut self, id: EventId, accesses: Vec<(SourceId, u64)>) -> Self {
        self.events.push((
            id,
            EventTrace {
                accesses: accesses
                    .into_iter()
                    .map(|(source, offset)| TraceAccess { source, offset })
                    .collect(),
                jitter: 0.0,
            },
        ));
        self
    }

    pub fn jitter(mut self, id: &EventId, jitter: f64) -> Self {
        if let Some((_, et)) = self.events.iter_mut().find(|(e, _)| e == id) {
            et.jitter = jitter;
        }
        self
    }

    pub fn readaround(mut self, model: ReadaroundModel) -> Self {
        self.readaround = model;
        self
    }

    pub fn fire(mut self, round: u64, event: EventId) -> Self {
        self.schedule.push(ScheduleEntry { round, event });
        self
    }

    pub fn build(self) -> Result<AccessTrace, TraceError> {
        // Round-trip through the file form so every trace, in-memory or on
        // disk, passes the same validation and carries a fingerprint.
        let file = TraceFile {
            version: 1,
            binary_version: self.binary_version,
            regions: self.regions,
            events: self
                .events
                .into_iter()
                .map(|(name, et)| EventFile {
                    name,
                    jitter: et.jitter,
                    accesses: et.accesses,
                })
                .collect(),
            readaround: self.readaround,
            schedule: self.schedule,
        };
        let text = toml::to_string_pretty(&file)?;
        AccessTrace::from_toml_str(&text)
    }
}
