//! Classified templates: the durable artifact of a campaign. Maps event
//! groups to the locations that identify them, with everything a monitor
//! needs to replay the template against a live target (suppression lists,
//! boundary-page distinguishers, and the fingerprint of the binary the
//! template was built from).

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::types::{EventId, Location};

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("unsupported template version {0} (expected 1)")]
    Version(u32),
    #[error("entry {0}: empty event group")]
    EmptyGroup(usize),
    #[error("entry {index}: the idle baseline cannot be templated")]
    IdleInGroup { index: usize },
    #[error("event {event} appears in more than one entry")]
    OverlappingGroups { event: EventId },
    #[error("entry {index}: score {score} is not finite")]
    BadScore { index: usize, score: f64 },
    #[error("entry {index}: location offset {offset:#x} is not {granularity}-aligned")]
    Misaligned {
        index: usize,
        offset: u64,
        granularity: crate::types::Granularity,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing template: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("serializing template: {0}")]
    Serialize(#[from] toml::ser::Error),
}

/// What binary the template describes. sha256 of the trace fixture (sim
/// campaigns) or of the profiled binary itself; the version string is
/// whatever the target declares and is compared on template reuse.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryFingerprint {
    pub sha256: String,
    #[serde(default)]
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateEntry {
    /// Events this location fires for. Usually one; more when events are
    /// indistinguishable and were merged. Kept sorted.
    pub events: Vec<EventId>,
    pub location: Location,
    /// Acceptance score: the group's weakest member's row-minus-noise at the
    /// location.
    pub score: f64,
    /// Pages a monitor must pre-touch each round so read-around from
    /// neighboring faults cannot light this location up.
    #[serde(default)]
    pub suppress: Vec<Location>,
    /// Boundary pages of this entry's fault window that no overlapping
    /// entry's window covers: watching them separates the two events when
    /// suppression is not an option.
    #[serde(default)]
    pub distinguishers: Vec<Location>,
}

impl TemplateEntry {
    pub fn new(mut events: Vec<EventId>, location: Location, score: f64) -> Self {
        events.sort();
        events.dedup();
        TemplateEntry {
            events,
            location,
            score,
            suppress: Vec::new(),
            distinguishers: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedTemplate {
    pub version: u32,
    /// Campaign run this template came out of, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    /// Keys the classifier could not place anywhere.
    #[serde(default)]
    pub unclassified: Vec<EventId>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub fingerprint: BinaryFingerprint,
    #[serde(rename = "entry", default)]
    pub entries: Vec<TemplateEntry>,
}

impl ClassifiedTemplate {
    pub fn new(entries: Vec<TemplateEntry>) -> Self {
        ClassifiedTemplate {
            version: 1,
            entries,
            ..ClassifiedTemplate::default()
        }
    }

    /// Structural invariants: non-empty disjoint non-idle groups, finite
    /// scores, aligned locations. Called on every load and before every save.
    pub fn validate(&self) -> Result<(), TemplateError> {
        if self.version != 1 {
            return Err(TemplateError::Version(self.version));
        }
        let mut seen: BTreeSet<&EventId> = BTreeSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.events.is_empty() {
                return Err(TemplateError::EmptyGroup(i));
            }
            if e.events.iter().any(|ev| ev.is_idle()) {
                return Err(TemplateError::IdleInGroup { index: i });
            }
            for ev in &e.events {
                if !seen.insert(ev) {
                    return Err(TemplateError::OverlappingGroups { event: ev.clone() });
                }
            }
            if !e.score.is_finite() {
                return Err(TemplateError::BadScore {
                    index: i,
                    score: e.score,
                });
            }
            for loc in std::iter::once(&e.location)
                .chain(&e.suppress)
                .chain(&e.distinguishers)
            {
                if loc.granularity.align_down(loc.offset) != loc.offset {
                    return Err(TemplateError::Misaligned {
                        index: i,
                        offset: loc.offset,
                        granularity: loc.granularity,
                    });
                }
            }
        }
        Ok(())
    }

    /// All events covered by some entry.
    pub fn classified_events(&self) -> Vec<EventId> {
        let mut out: Vec<EventId> = self
            .entries
            .iter()
            .flat_map(|e| e.events.iter().cloned())
            .collect();
        out.sort();
        out
    }

    pub fn to_toml_string(&self) -> Result<String, TemplateError> {
        self.validate()?;
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, TemplateError> {
        let t: ClassifiedTemplate = toml::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<(), TemplateError> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| TemplateError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path).map_err(|e| TemplateError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_toml_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Granularity;

    fn key(n: &str) -> EventId {
        EventId::new(n).unwrap()
    }

    fn page(off: u64) -> Location {
        Location::enclosing("app", off, Granularity::PAGE_4K)
    }

    fn sample() -> ClassifiedTemplate {
        let mut e1 = TemplateEntry::new(vec![key("KeyB"), key("KeyA")], page(3 * 4096), 0.85);
        e1.suppress = vec![page(2 * 4096), page(4 * 4096)];
        e1.distinguishers = vec![page(0)];
        let e2 = TemplateEntry::new(vec![key("KeyC")], page(9 * 4096), 0.6);
        ClassifiedTemplate {
            version: 1,
            run_id: Some("abc123".into()),
            unclassified: vec![key("KeyQ")],
            warnings: vec!["KeyQ never rose above the noise floor".into()],
            fingerprint: BinaryFingerprint {
                sha256: "00".repeat(32),
                version: "app-1.2.3".into(),
            },
            entries: vec![e1, e2],
        }
    }

    #[test]
    fn groups_are_kept_sorted_and_deduped() {
        let e = TemplateEntry::new(vec![key("B"), key("A"), key("B")], page(0), 1.0);
        assert_eq!(e.events, vec![key("A"), key("B")]);
    }

    #[test]
    fn toml_round_trip_is_lossless_and_stable() {
        let t = sample();
        let text = t.to_toml_string().unwrap();
        let back = ClassifiedTemplate::from_toml_str(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_toml_string().unwrap(), text);
    }

    #[test]
    fn validation_rejects_overlapping_groups() {
        let mut t = sample();
        t.entries[1].events = vec![key("KeyA")];
        assert!(matches!(
            t.validate(),
            Err(TemplateError::OverlappingGroups { .. })
        ));
    }

    #[test]
    fn validation_rejects_idle_and_empty_groups() {
        let mut t = sample();
        t.entries[0].events = vec![];
        assert!(matches!(t.validate(), Err(TemplateError::EmptyGroup(0))));
        let mut t = sample();
        t.entries[1].events = vec![EventId::idle()];
        assert!(matches!(
            t.validate(),
            Err(TemplateError::IdleInGroup { index: 1 })
        ));
    }

    #[test]
    fn validation_rejects_bad_scores_and_misalignment() {
        let mut t = sample();
        t.entries[0].score = f64::NAN;
        assert!(matches!(t.validate(), Err(TemplateError::BadScore { .. })));
        let mut t = sample();
        t.entries[0].location.offset += 17;
        assert!(matches!(t.validate(), Err(TemplateError::Misaligned { .. })));
        let mut t = sample();
        t.entries[0].suppress[0].offset += 64;
        assert!(matches!(t.validate(), Err(TemplateError::Misaligned { .. })));
    }

    #[test]
    fn version_checked_on_load() {
        let mut t = sample();
        t.version = 2;
        let text = toml::to_string(&t).unwrap();
        assert!(matches!(
            ClassifiedTemplate::from_toml_str(&text),
            Err(TemplateError::Version(2))
        ));
    }

    #[test]
    fn classified_events_are_the_union_of_groups() {
        assert_eq!(
            sample().classified_events(),
            vec![key("KeyA"), key("KeyB"), key("KeyC")]
        );
    }
}
