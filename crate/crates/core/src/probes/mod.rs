//! Probe backends: the reset / trigger / check primitive over aligned memory
//! windows, plus mapping enumeration and the page-fault read-around model.
//!
//! A backend owns whatever state its side channel needs and exposes three
//! verbs: `reset` re-arms locations, `trigger` injects an input event into
//! the target, `check` reads back which locations saw activity. Campaigns and
//! monitors are written purely against this trait, so swapping the
//! deterministic simulator for a live channel never touches the algorithms.

use std::fmt;
use std::io::Read;
use std::ops::RangeInclusive;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::types::{EventId, Granularity, Location, MemoryRegion, RegionSet};

mod flush;
mod mapfile;
mod pagecache;
mod pageidle;
mod sim;

pub use flush::{threshold_from_samples, FlushBackend};
pub use pagecache::{EvictionStrategy, PageCacheBackend};
pub use pageidle::PageIdleBackend;
pub use sim::{OpCounts, SimBackend};

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error("backend probes {expected} windows, got a {got} location")]
    WrongGranularity { expected: Granularity, got: Granularity },
    #[error("no trace or injection hook for event {0}")]
    UnknownEvent(EventId),
    #[error("{0}")]
    Unsupported(String),
    #[error("insufficient privilege: {0}")]
    Privilege(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Backend(String),
}

impl ProbeError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        ProbeError::Io {
            context: context.into(),
            source,
        }
    }

    /// True when the failure is about missing privilege or kernel features,
    /// as opposed to bad input.
    pub fn is_environment(&self) -> bool {
        matches!(
            self,
            ProbeError::Privilege(_) | ProbeError::Io { .. } | ProbeError::Unsupported(_)
        )
    }
}

/// Tri-state probe reading. `Unknown` means the channel could not sample the
/// location this round (page not mapped, transient EIO, ...); callers must
/// not count it as either hit or miss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Presence {
    Present,
    Idle,
    Unknown,
}

impl fmt::Display for Presence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Presence::Present => "present",
            Presence::Idle => "idle",
            Presence::Unknown => "unknown",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Capabilities {
    /// Checking consumes the signal (the read itself re-marks or pollutes
    /// state), so callers must reset after every check.
    pub destructive_read: bool,
    /// Needs root / CAP_SYS_ADMIN or equivalent.
    pub needs_privilege: bool,
}

/// Kernel-style read-around: a fault on page `p` of a file pulls the window
/// `[p - pages_before, p + pages_after]` into the page cache, unless `p` was
/// already resident. Defaults mirror a 128 KiB readahead split around the
/// faulting page.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadaroundModel {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_pages_before")]
    pub pages_before: u64,
    #[serde(default = "default_pages_after")]
    pub pages_after: u64,
    #[serde(default = "default_readahead_bytes")]
    pub readahead_bytes: u64,
}

fn default_true() -> bool {
    true
}
fn default_pages_before() -> u64 {
    16
}
fn default_pages_after() -> u64 {
    15
}
fn default_readahead_bytes() -> u64 {
    131072
}

impl Default for ReadaroundModel {
    fn default() -> Self {
        ReadaroundModel {
            enabled: true,
            pages_before: 16,
            pages_after: 15,
            readahead_bytes: 131072,
        }
    }
}

impl ReadaroundModel {
    pub fn disabled() -> Self {
        ReadaroundModel {
            enabled: false,
            ..ReadaroundModel::default()
        }
    }

    /// Window size must match the readahead budget: before + faulting page +
    /// after, in 4 KiB pages.
    pub fn validate(&self) -> Result<(), String> {
        let window = self.pages_before + 1 + self.pages_after;
        let budget = self.readahead_bytes / 4096;
        if self.enabled && window != budget {
            return Err(format!(
                "read-around window of {window} pages does not match readahead budget of {budget} pages"
            ));
        }
        Ok(())
    }

    /// Pages made resident by a fault on `page` (indices, clipped at zero).
    pub fn window(&self, page: u64) -> RangeInclusive<u64> {
        page.saturating_sub(self.pages_before)..=page.saturating_add(self.pages_after)
    }

    /// Neighbors whose fault would drag `page` in: q reaches `page` when
    /// `page ∈ window(q)`, i.e. q lies in the window *reflected* around
    /// `page`. Touching these in advance leaves a direct access as the only
    /// way `page` becomes resident.
    pub fn suppression_pages(&self, page: u64) -> Vec<u64> {
        if !self.enabled {
            return Vec::new();
        }
        (page.saturating_sub(self.pages_after)..=page.saturating_add(self.pages_before))
            .filter(|&q| q != page)
            .collect()
    }
}

/// Shell command that makes the live target perform an event. `{event}` in
/// the template is replaced by the event id, e.g.
/// `xdotool key --window $WIN {event}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionHook {
    pub command: String,
}

impl InjectionHook {
    pub fn run(&self, event: &EventId) -> Result<(), ProbeError> {
        let cmd = self.command.replace("{event}", event.as_str());
        let status = std::process::Command::new("/bin/sh")
            .arg("-c")
            .arg(&cmd)
            .status()
            .map_err(|e| ProbeError::io(format!("running injection hook `{cmd}`"), e))?;
        if status.success() {
            Ok(())
        } else {
            Err(ProbeError::Backend(format!(
                "injection hook `{cmd}` exited with {status}"
            )))
        }
    }
}

/// Common trigger logic for live backends: idle rounds are a sleep, real
/// events need a hook.
fn run_hook(hook: Option<&InjectionHook>, event: &EventId) -> Result<(), ProbeError> {
    match (hook, event.is_idle()) {
        (_, true) => Ok(()),
        (Some(h), false) => h.run(event),
        (None, false) => Err(ProbeError::UnknownEvent(event.clone())),
    }
}

pub trait ProbeBackend {
    /// Short stable name ("sim", "pageidle", ...) for manifests and logs.
    fn id(&self) -> &'static str;

    fn granularity(&self) -> Granularity;

    fn capabilities(&self) -> Capabilities;

    /// Re-arm: forget any recorded activity on these locations.
    fn reset(&mut self, locations: &[Location]) -> Result<(), ProbeError>;

    /// Make the target perform `event`. Backends on live targets run an
    /// injection hook; the simulator replays the event's trace.
    fn trigger(&mut self, event: &EventId) -> Result<(), ProbeError>;

    /// Read activity-since-reset for each location, in order.
    fn check(&mut self, locations: &[Location]) -> Result<Vec<Presence>, ProbeError>;

    /// Access the locations ourselves (marks them active / resident). Used to
    /// pre-warm read-around windows.
    fn touch(&mut self, locations: &[Location]) -> Result<(), ProbeError>;

    /// Pre-touch everything a fault near `around` could drag in, so that only
    /// a direct access can light `around` up. Returns the touched locations;
    /// a disabled model touches nothing. Only meaningful for page-granularity
    /// backends.
    fn suppress(
        &mut self,
        around: &Location,
        model: &ReadaroundModel,
    ) -> Result<Vec<Location>, ProbeError> {
        if around.granularity != Granularity::PAGE_4K {
            return Err(ProbeError::WrongGranularity {
                expected: Granularity::PAGE_4K,
                got: around.granularity,
            });
        }
        let page = Granularity::PAGE_4K.index_of(around.offset);
        let locs: Vec<Location> = model
            .suppression_pages(page)
            .into_iter()
            .map(|q| Location {
                source: around.source.clone(),
                offset: q * 4096,
                granularity: Granularity::PAGE_4K,
            })
            .collect();
        self.touch(&locs)?;
        Ok(locs)
    }
}

/// Where to read the target's mapping table from.
pub enum MappingSource<'a> {
    /// A live process: /proc/<pid>/maps.
    Pid(u32),
    /// A saved copy of a maps table (fixtures, post-mortem).
    File(&'a Path),
}

/// Enumerates the file-backed mappings of a target, merged per source and
/// with blacklisted paths (substring match) dropped. This is the region set
/// a campaign will sweep.
pub fn enumerate_mappings(
    source: MappingSource<'_>,
    blacklist: &[String],
) -> Result<RegionSet, ProbeError> {
    let text = match source {
        MappingSource::Pid(pid) => {
            let path = format!("/proc/{pid}/maps");
            read_to_string(Path::new(&path))?
        }
        MappingSource::File(path) => read_to_string(path)?,
    };
    parse_maps(&text, blacklist)
}

fn read_to_string(path: &Path) -> Result<String, ProbeError> {
    let mut buf = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut buf))
        .map_err(|e| ProbeError::io(format!("reading {}", path.display()), e))?;
    Ok(buf)
}

/// Parses /proc/pid/maps text. Keeps readable file-backed entries (pathname
/// starting with '/'), skips anonymous and pseudo mappings, strips the
/// " (deleted)" marker, and merges overlapping or abutting file ranges so the
/// result is a valid non-overlapping region set.
pub fn parse_maps(text: &str, blacklist: &[String]) -> Result<RegionSet, ProbeError> {
    let mut regions = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.splitn(6, char::is_whitespace).filter(|s| !s.is_empty());
        let (range, perms, file_off) = match (fields.next(), fields.next(), fields.next()) {
            (Some(r), Some(p), Some(o)) => (r, p, o),
            _ => {
                return Err(ProbeError::Backend(format!(
                    "maps line {}: expected at least 5 fields",
                    lineno + 1
                )))
            }
        };
        let _dev = fields.next();
        let _inode = fields.next();
        let path = fields.next().map(str::trim).unwrap_or("");
        if !path.starts_with('/') {
            continue;
        }
        if !perms.contains('r') {
            continue;
        }
        let path = path.strip_suffix(" (deleted)").unwrap_or(path);
        if blacklist.iter().any(|pat| !pat.is_empty() && path.contains(pat.as_str())) {
            continue;
        }
        let (start, end) = range.split_once('-').ok_or_else(|| {
            ProbeError::Backend(format!("maps line {}: bad address range", lineno + 1))
        })?;
        let start = u64::from_str_radix(start, 16)
            .map_err(|_| ProbeError::Backend(format!("maps line {}: bad start address", lineno + 1)))?;
        let end = u64::from_str_radix(end, 16)
            .map_err(|_| ProbeError::Backend(format!("maps line {}: bad end address", lineno + 1)))?;
        let off = u64::from_str_radix(file_off, 16)
            .map_err(|_| ProbeError::Backend(format!("maps line {}: bad file offset", lineno + 1)))?;
        if end <= start {
            return Err(ProbeError::Backend(format!(
                "maps line {}: empty address range",
                lineno + 1
            )));
        }
        regions.push(
            MemoryRegion::new(path, off, end - start)
                .map_err(|e| ProbeError::Backend(format!("maps line {}: {e}", lineno + 1)))?,
        );
    }
    RegionSet::new(regions).map_err(|e| ProbeError::Backend(e.to_string()))
}
