//! Core vocabulary: granularities, regions, locations, event identifiers.
//!
//! Everything downstream (probing, templating, classification) is phrased in
//! terms of these types. A `Location` is an aligned window of a *file*, not a
//! virtual address range: probing works on what is mapped from disk, so file
//! offsets are the stable coordinate system and virtual addresses never appear
//! here.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TypeError {
    #[error("granularity must be a power of two of at least 64 bytes, got {0}")]
    BadGranularity(u64),
    #[error("ladder must be strictly decreasing, got {prev} followed by {next}")]
    LadderNotDecreasing { prev: u64, next: u64 },
    #[error("ladder must contain at least one granularity")]
    EmptyLadder,
    #[error("granularity {child} does not divide {parent}")]
    NotNested { parent: u64, child: u64 },
    #[error("region length must be nonzero")]
    EmptyRegion,
    #[error("event id must be nonempty")]
    EmptyEventId,
    #[error("\"{0}\" is reserved for the idle baseline")]
    ReservedEventId(String),
}

/// Probe window size in bytes. Always a power of two, never finer than one
/// cache line (64 B).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct Granularity(u64);

impl Granularity {
    /// One cache line.
    pub const LINE: Granularity = Granularity(64);
    /// One base page.
    pub const PAGE_4K: Granularity = Granularity(4096);
    /// One huge page / PMD reach.
    pub const PAGE_2M: Granularity = Granularity(1 << 21);
    /// PUD reach.
    pub const PAGE_1G: Granularity = Granularity(1 << 30);
    /// One level-4 table entry's reach (512 GiB).
    pub const SPAN_512G: Granularity = Granularity(1 << 39);
    /// One level-5 table entry's reach (256 TiB).
    pub const SPAN_256T: Granularity = Granularity(1 << 48);

    pub fn new(bytes: u64) -> Result<Self, TypeError> {
        if bytes >= 64 && bytes.is_power_of_two() {
            Ok(Granularity(bytes))
        } else {
            Err(TypeError::BadGranularity(bytes))
        }
    }

    pub fn bytes(self) -> u64 {
        self.0
    }

    /// Largest multiple of the granularity that is <= `offset`.
    pub fn align_down(self, offset: u64) -> u64 {
        offset & !(self.0 - 1)
    }

    /// Index of the window containing `offset`.
    pub fn index_of(self, offset: u64) -> u64 {
        offset / self.0
    }
}

impl fmt::Debug for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Granularity({})", self.0)
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Render the common sizes the way people write them.
        let (n, unit) = match self.0 {
            b if b >= 1 << 40 && b % (1 << 40) == 0 => (self.0 >> 40, "T"),
            b if b >= 1 << 30 && b % (1 << 30) == 0 => (self.0 >> 30, "G"),
            b if b >= 1 << 20 && b % (1 << 20) == 0 => (self.0 >> 20, "M"),
            b if b >= 1 << 10 && b % (1 << 10) == 0 => (self.0 >> 10, "K"),
            _ => (self.0, "B"),
        };
        write!(f, "{n}{unit}")
    }
}

impl TryFrom<u64> for Granularity {
    type Error = TypeError;
    fn try_from(v: u64) -> Result<Self, TypeError> {
        Granularity::new(v)
    }
}

impl std::str::FromStr for Granularity {
    type Err = TypeError;

    /// Accepts raw byte counts ("4096") or K/M/G/T suffixes ("4K", "2M"),
    /// with an optional trailing B ("64B", "4KB").
    fn from_str(s: &str) -> Result<Self, TypeError> {
        let s = s.trim();
        let body = s.strip_suffix(['b', 'B']).unwrap_or(s);
        let (digits, shift) = match body.char_indices().last() {
            Some((i, 'k' | 'K')) => (&body[..i], 10),
            Some((i, 'm' | 'M')) => (&body[..i], 20),
            Some((i, 'g' | 'G')) => (&body[..i], 30),
            Some((i, 't' | 'T')) => (&body[..i], 40),
            _ => (body, 0),
        };
        let n: u64 = digits.parse().map_err(|_| TypeError::BadGranularity(0))?;
        Granularity::new(n.checked_shl(shift).ok_or(TypeError::BadGranularity(u64::MAX))?)
    }
}

impl From<Granularity> for u64 {
    fn from(g: Granularity) -> u64 {
        g.0
    }
}

/// Validates a coarse-to-fine granularity ladder: strictly decreasing, and
/// since every granularity is a power of two, each layer automatically nests
/// in the previous one.
pub fn validate_ladder(ladder: &[Granularity]) -> Result<(), TypeError> {
    if ladder.is_empty() {
        return Err(TypeError::EmptyLadder);
    }
    for pair in ladder.windows(2) {
        if pair[1] >= pair[0] {
            return Err(TypeError::LadderNotDecreasing {
                prev: pair[0].bytes(),
                next: pair[1].bytes(),
            });
        }
    }
    Ok(())
}

/// Identifies the backing file (or synthetic source) of a mapped region.
/// Ordinary file system paths for live targets, arbitrary labels in fixtures.
pub type SourceId = String;

/// A contiguous byte range of one source, in file coordinates.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemoryRegion {
    pub source: SourceId,
    pub offset: u64,
    pub length: u64,
}

impl MemoryRegion {
    pub fn new(source: impl Into<SourceId>, offset: u64, length: u64) -> Result<Self, TypeError> {
        if length == 0 {
            return Err(TypeError::EmptyRegion);
        }
        Ok(MemoryRegion {
            source: source.into(),
            offset,
            length,
        })
    }

    pub fn end(&self) -> u64 {
        self.offset + self.length
    }

    pub fn contains(&self, offset: u64) -> bool {
        offset >= self.offset && offset < self.end()
    }

    /// Does `[start, start+len)` intersect this region?
    pub fn overlaps(&self, source: &str, start: u64, len: u64) -> bool {
        self.source == source && start < self.end() && start + len > self.offset
    }
}

/// One aligned probe window: `granularity` bytes of `source` starting at
/// `offset` (which is always a multiple of the granularity).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Location {
    pub source: SourceId,
    pub offset: u64,
    pub granularity: Granularity,
}

impl Location {
    /// The aligned window of size `granularity` containing `byte_offset`.
    pub fn enclosing(source: impl Into<SourceId>, byte_offset: u64, granularity: Granularity) -> Location {
        Location {
            source: source.into(),
            offset: granularity.align_down(byte_offset),
            granularity,
        }
    }

    pub fn end(&self) -> u64 {
        self.offset + self.granularity.bytes()
    }

    pub fn contains(&self, byte_offset: u64) -> bool {
        byte_offset >= self.offset && byte_offset < self.end()
    }

    /// Subdivide into `finer` windows, keeping only children that overlap one
    /// of `regions`. A region that ends mid-child still keeps that child: the
    /// tail bytes are probeable even if the window is partial.
    ///
    /// `finer` must divide the current granularity.
    pub fn children(&self, finer: Granularity, regions: &RegionSet) -> Result<Vec<Location>, TypeError> {
        if finer >= self.granularity || self.granularity.bytes() % finer.bytes() != 0 {
            return Err(TypeError::NotNested {
                parent: self.granularity.bytes(),
                child: finer.bytes(),
            });
        }
        let step = finer.bytes();
        let mut out = Vec::new();
        let mut off = self.offset;
        while off < self.end() {
            if regions.intersects(&self.source, off, step) {
                out.push(Location {
                    source: self.source.clone(),
                    offset: off,
                    granularity: finer,
                });
            }
            off += step;
        }
        Ok(out)
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{:#x}@{}", self.source, self.offset, self.granularity)
    }
}

/// Non-overlapping regions, sorted by (source, offset). The canonical "what
/// is probeable" set for a campaign.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSet {
    regions: Vec<MemoryRegion>,
}

impl RegionSet {
    /// Builds the set, merging regions of the same source that overlap or
    /// abut so the non-overlap invariant holds by construction.
    pub fn new(mut regions: Vec<MemoryRegion>) -> Result<Self, TypeError> {
        if regions.iter().any(|r| r.length == 0) {
            return Err(TypeError::EmptyRegion);
        }
        regions.sort_by(|a, b| (&a.source, a.offset).cmp(&(&b.source, b.offset)));
        let mut merged: Vec<MemoryRegion> = Vec::with_capacity(regions.len());
        for r in regions {
            match merged.last_mut() {
                Some(last) if last.source == r.source && r.offset <= last.end() => {
                    last.length = last.length.max(r.end() - last.offset);
                }
                _ => merged.push(r),
            }
        }
        Ok(RegionSet { regions: merged })
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &MemoryRegion> {
        self.regions.iter()
    }

    pub fn total_bytes(&self) -> u64 {
        self.regions.iter().map(|r| r.length).sum()
    }

    pub fn contains(&self, source: &str, offset: u64) -> bool {
        self.regions.iter().any(|r| r.source == source && r.contains(offset))
    }

    pub fn intersects(&self, source: &str, start: u64, len: u64) -> bool {
        self.regions.iter().any(|r| r.overlaps(source, start, len))
    }

    /// All aligned windows of size `g` that overlap the set, coarsest layer of
    /// a campaign. Deterministic order: (source, offset) ascending.
    pub fn cover(&self, g: Granularity) -> Vec<Location> {
        let mut out = Vec::new();
        for r in &self.regions {
            let mut off = g.align_down(r.offset);
            // A previous region of the same source may already have produced
            // this window if the two share an aligned block.
            while off < r.end() {
                let loc = Location {
                    source: r.source.clone(),
                    offset: off,
                    granularity: g,
                };
                if out.last() != Some(&loc) {
                    out.push(loc);
                }
                off += g.bytes();
            }
        }
        out.dedup();
        out
    }
}

/// Label for a user-visible input event ("KeyA", "Digit7", ...). The id
/// `IDLE` is reserved for the no-input baseline sampled alongside real keys.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventId(String);

pub const IDLE_EVENT: &str = "IDLE";

impl EventId {
    /// An ordinary (non-idle) event. Rejects the reserved idle label.
    pub fn new(name: impl Into<String>) -> Result<Self, TypeError> {
        let name = name.into();
        if name.is_empty() {
            return Err(TypeError::EmptyEventId);
        }
        if name == IDLE_EVENT {
            return Err(TypeError::ReservedEventId(name));
        }
        Ok(EventId(name))
    }

    pub fn idle() -> Self {
        EventId(IDLE_EVENT.to_string())
    }

    /// Accepts any label, including the reserved idle one. For parsing
    /// streams that legitimately contain both.
    pub fn parse(name: impl Into<String>) -> Result<Self, TypeError> {
        let name = name.into();
        if name.is_empty() {
            return Err(TypeError::EmptyEventId);
        }
        Ok(EventId(name))
    }

    pub fn is_idle(&self) -> bool {
        self.0 == IDLE_EVENT
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EventId({})", self.0)
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}
