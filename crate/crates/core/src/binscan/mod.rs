//! Static layout analysis of secret-correlated strings in binaries.
//!
//! Compilers and linkers spread string constants across read-only data in
//! ways that decide whether a cache- or page-level observer can tell two
//! strings apart. The scanner locates a marker set in a binary's read-only
//! sections, maps every occurrence to its cache line and page (by file
//! offset, the same offset space the probing side uses for mapped files),
//! classifies each marker pair's distinguishability per granularity, grades
//! the leakage, and diffs layouts across binary versions.

pub mod elf;
pub mod fixture;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::types::Granularity;
use elf::RoSection;

#[derive(Debug, thiserror::Error)]
pub enum BinscanError {
    #[error("reading binary: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing binary: {0}")]
    Parse(#[from] object::read::Error),
    #[error("binary has no read-only data sections")]
    NoReadOnlyData,
    #[error("marker set: {0}")]
    BadMarkerSet(String),
    #[error("reports are not comparable: {0}")]
    MismatchedReports(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Match only NUL-terminated strings ("KeyA" never matches inside
    /// "KeyAB"); a match preceded by a non-NUL byte is a tail merge.
    Exact,
    /// Match raw bytes anywhere.
    Substring,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarkerSet {
    markers: Vec<Vec<u8>>,
    pub match_mode: MatchMode,
}

impl MarkerSet {
    pub fn new(markers: Vec<Vec<u8>>, match_mode: MatchMode) -> Result<Self, BinscanError> {
        if markers.is_empty() {
            return Err(BinscanError::BadMarkerSet("no markers given".into()));
        }
        for m in &markers {
            if m.is_empty() {
                return Err(BinscanError::BadMarkerSet("empty marker".into()));
            }
            if m.contains(&0) {
                return Err(BinscanError::BadMarkerSet(format!(
                    "marker {:?} contains a NUL byte",
                    String::from_utf8_lossy(m)
                )));
            }
        }
        let mut seen = markers.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != markers.len() {
            return Err(BinscanError::BadMarkerSet("duplicate markers".into()));
        }
        Ok(MarkerSet {
            markers,
            match_mode,
        })
    }

    /// One marker per line; blank lines and `#` comments are skipped.
    pub fn from_lines(text: &str, match_mode: MatchMode) -> Result<Self, BinscanError> {
        let markers: Vec<Vec<u8>> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.as_bytes().to_vec())
            .collect();
        MarkerSet::new(markers, match_mode)
    }

    /// The 57 DOM code names of a US keyboard's keys, the marker set used
    /// against browser binaries.
    pub fn default_keyset() -> Self {
        let mut names: Vec<String> = (b'A'..=b'Z').map(|c| format!("Key{}", c as char)).collect();
        names.extend((0..=9).map(|d| format!("Digit{d}")));
        names.extend(
            [
                "Space",
                "Enter",
                "Tab",
                "Backspace",
                "Escape",
                "Minus",
                "Equal",
                "BracketLeft",
                "BracketRight",
                "Backslash",
                "Semicolon",
                "Quote",
                "Backquote",
                "Comma",
                "Period",
                "Slash",
                "ShiftLeft",
                "ShiftRight",
                "ControlLeft",
                "AltLeft",
                "CapsLock",
            ]
            .map(str::to_string),
        );
        MarkerSet::new(
            names.into_iter().map(String::into_bytes).collect(),
            MatchMode::Exact,
        )
        .expect("built-in marker set is valid")
    }

    pub fn markers(&self) -> &[Vec<u8>] {
        &self.markers
    }

    pub fn names(&self) -> Vec<String> {
        self.markers
            .iter()
            .map(|m| String::from_utf8_lossy(m).into_owned())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occurrence {
    pub section: String,
    pub file_offset: u64,
    /// Virtual address the occurrence maps to, informational.
    pub va: u64,
    pub line_index: u64,
    pub page_index: u64,
    /// The marker was found as the NUL-terminated suffix of a longer string
    /// (linker tail merging); probing it observes the longer string too.
    pub tail_merged: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerHits {
    pub marker: String,
    pub occurrences: Vec<Occurrence>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairClass {
    Distinct,
    CoLocated,
    MarkerAbsent,
}

impl fmt::Display for PairClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairClass::Distinct => "distinct",
            PairClass::CoLocated => "co-located",
            PairClass::MarkerAbsent => "marker-absent",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairEntry {
    pub a: String,
    pub b: String,
    pub granularity: Granularity,
    pub class: PairClass,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StringLayoutReport {
    /// Hash of the scanned image: identical bytes give identical reports.
    pub sha256: String,
    pub granularities: Vec<Granularity>,
    pub markers: Vec<MarkerHits>,
    pub pairs: Vec<PairEntry>,
}

impl StringLayoutReport {
    pub fn hits(&self, marker: &str) -> Option<&MarkerHits> {
        self.markers.iter().find(|m| m.marker == marker)
    }

    pub fn pair_class(&self, a: &str, b: &str, granularity: Granularity) -> Option<PairClass> {
        self.pairs
            .iter()
            .find(|p| {
                p.granularity == granularity
                    && ((p.a == a && p.b == b) || (p.a == b && p.b == a))
            })
            .map(|p| p.class)
    }
}

pub const DEFAULT_SCAN_GRANULARITIES: [Granularity; 2] =
    [Granularity::PAGE_4K, Granularity::LINE];

pub fn scan(
    path: &Path,
    markers: &MarkerSet,
    granularities: &[Granularity],
) -> Result<StringLayoutReport, BinscanError> {
    let image = std::fs::read(path)?;
    scan_bytes(&image, markers, granularities)
}

/// Pure in the image bytes; see `scan` for the file-path convenience.
pub fn scan_bytes(
    image: &[u8],
    markers: &MarkerSet,
    granularities: &[Granularity],
) -> Result<StringLayoutReport, BinscanError> {
    let sections = elf::read_only_sections(image)?;
    let mut grans: Vec<Granularity> = Vec::new();
    for &g in granularities {
        if !grans.contains(&g) {
            grans.push(g);
        }
    }

    let hits: Vec<MarkerHits> = markers
        .markers()
        .iter()
        .map(|marker| {
            let mut occurrences: Vec<Occurrence> = sections
                .iter()
                .flat_map(|s| find_in_section(s, marker, markers.match_mode))
                .collect();
            occurrences.sort_by_key(|o| o.file_offset);
            MarkerHits {
                marker: String::from_utf8_lossy(marker).into_owned(),
                occurrences,
            }
        })
        .collect();

    let mut pairs = Vec::new();
    for i in 0..hits.len() {
        for j in i + 1..hits.len() {
            for &g in &grans {
                pairs.push(PairEntry {
                    a: hits[i].marker.clone(),
                    b: hits[j].marker.clone(),
                    granularity: g,
                    class: classify_pair(
                        &hits[i].occurrences,
                        &hits[j].occurrences,
                        markers.markers()[i].len() as u64,
                        markers.markers()[j].len() as u64,
                        g,
                    ),
                });
            }
        }
    }

    Ok(StringLayoutReport {
        sha256: hex::encode(Sha256::digest(image)),
        granularities: grans,
        markers: hits,
        pairs,
    })
}

fn find_in_section(section: &RoSection, marker: &[u8], mode: MatchMode) -> Vec<Occurrence> {
    let data = &section.data;
    let len = marker.len();
    let mut out = Vec::new();
    if len > data.len() {
        return out;
    }
    for pos in 0..=data.len() - len {
        if &data[pos..pos + len] != marker {
            continue;
        }
        let preceded_clean = pos == 0 || data[pos - 1] == 0;
        // the end of the section terminates a string just as a NUL does
        let terminated = pos + len == data.len() || data[pos + len] == 0;
        if mode == MatchMode::Exact && !terminated {
            continue;
        }
        let file_offset = section.file_offset + pos as u64;
        out.push(Occurrence {
            section: section.name.clone(),
            file_offset,
            va: section.addr + pos as u64,
            line_index: file_offset / Granularity::LINE.bytes(),
            page_index: file_offset / Granularity::PAGE_4K.bytes(),
            tail_merged: !preceded_clean && terminated,
        });
    }
    out
}

/// Units (of size `g`) an occurrence's bytes touch — a marker crossing a
/// boundary is observable from both sides.
fn units(occurrences: &[Occurrence], len: u64, g: Granularity) -> Vec<u64> {
    let mut out: Vec<u64> = occurrences
        .iter()
        .flat_map(|o| (o.file_offset / g.bytes())..=((o.file_offset + len - 1) / g.bytes()))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

fn classify_pair(
    a: &[Occurrence],
    b: &[Occurrence],
    a_len: u64,
    b_len: u64,
    g: Granularity,
) -> PairClass {
    if a.is_empty() || b.is_empty() {
        return PairClass::MarkerAbsent;
    }
    let ua = units(a, a_len, g);
    let ub = units(b, b_len, g);
    if ua.iter().any(|u| ub.binary_search(u).is_ok()) {
        PairClass::CoLocated
    } else {
        PairClass::Distinct
    }
}

/// How much a pair's placement gives away, leakiest first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LeakGrade {
    /// At least one marker absent: nothing to tell apart (verify the marker
    /// list before trusting this).
    Safe,
    /// Sharing a cache line: indistinguishable to these channels.
    Grouped,
    /// Same page, different lines: distinguishable by a line-granularity
    /// channel (hardware prefetching will fight back).
    LeakLine,
    /// Different pages: distinguishable even by page-level observers.
    LeakPage,
}

impl fmt::Display for LeakGrade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LeakGrade::Safe => "SAFE",
            LeakGrade::Grouped => "GROUPED",
            LeakGrade::LeakLine => "LEAK_LINE",
            LeakGrade::LeakPage => "LEAK_PAGE",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairGrade {
    pub a: String,
    pub b: String,
    pub grade: LeakGrade,
}

/// Grades every marker pair from its raw occurrences (independent of which
/// granularities the report tabulated).
pub fn leakage_grade(report: &StringLayoutReport, markers: &MarkerSet) -> Vec<PairGrade> {
    let lens: Vec<u64> = markers.markers().iter().map(|m| m.len() as u64).collect();
    let mut out = Vec::new();
    for i in 0..report.markers.len() {
        for j in i + 1..report.markers.len() {
            let (a, b) = (&report.markers[i], &report.markers[j]);
            let grade = if a.occurrences.is_empty() || b.occurrences.is_empty() {
                LeakGrade::Safe
            } else if classify_pair(
                &a.occurrences,
                &b.occurrences,
                lens[i],
                lens[j],
                Granularity::LINE,
            ) == PairClass::CoLocated
            {
                LeakGrade::Grouped
            } else if classify_pair(
                &a.occurrences,
                &b.occurrences,
                lens[i],
                lens[j],
                Granularity::PAGE_4K,
            ) == PairClass::CoLocated
            {
                LeakGrade::LeakLine
            } else {
                LeakGrade::LeakPage
            };
            out.push(PairGrade {
                a: a.marker.clone(),
                b: b.marker.clone(),
                grade,
            });
        }
    }
    out
}

/// The leakiest pair grade, `Safe` when there are no pairs.
pub fn summary_grade(grades: &[PairGrade]) -> LeakGrade {
    grades.iter().map(|p| p.grade).max().unwrap_or(LeakGrade::Safe)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerMove {
    pub marker: String,
    pub from: Vec<u64>,
    pub to: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountChange {
    pub marker: String,
    pub from: usize,
    pub to: usize,
    /// Fewer copies than before while still present — the linker
    /// deduplicated it.
    pub deduplicated: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairTransition {
    pub a: String,
    pub b: String,
    pub granularity: Granularity,
    pub from: PairClass,
    pub to: PairClass,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutDelta {
    /// Markers whose copies moved (same count, different offsets).
    pub moved: Vec<MarkerMove>,
    /// Markers whose copy count changed.
    pub count_changes: Vec<CountChange>,
    /// Pair classifications that changed between versions.
    pub transitions: Vec<PairTransition>,
}

impl LayoutDelta {
    pub fn is_empty(&self) -> bool {
        self.moved.is_empty() && self.count_changes.is_empty() && self.transitions.is_empty()
    }
}

/// Compares two reports made with the same marker set and granularities —
/// the version-bisection primitive.
pub fn diff_layouts(
    a: &StringLayoutReport,
    b: &StringLayoutReport,
) -> Result<LayoutDelta, BinscanError> {
    let names =
        |r: &StringLayoutReport| r.markers.iter().map(|m| m.marker.clone()).collect::<Vec<_>>();
    if names(a) != names(b) {
        return Err(BinscanError::MismatchedReports(
            "different marker sets".into(),
        ));
    }
    if a.granularities != b.granularities {
        return Err(BinscanError::MismatchedReports(
            "different granularity lists".into(),
        ));
    }

    let mut delta = LayoutDelta::default();
    for (ma, mb) in a.markers.iter().zip(&b.markers) {
        let offs = |m: &MarkerHits| m.occurrences.iter().map(|o| o.file_offset).collect::<Vec<_>>();
        let (fa, fb) = (offs(ma), offs(mb));
        if fa.len() != fb.len() {
            delta.count_changes.push(CountChange {
                marker: ma.marker.clone(),
                from: fa.len(),
                to: fb.len(),
                deduplicated: fb.len() < fa.len() && !fb.is_empty(),
            });
        } else if fa != fb {
            delta.moved.push(MarkerMove {
                marker: ma.marker.clone(),
                from: fa,
                to: fb,
            });
        }
    }
    for (pa, pb) in a.pairs.iter().zip(&b.pairs) {
        debug_assert!(pa.a == pb.a && pa.b == pb.b && pa.granularity == pb.granularity);
        if pa.class != pb.class {
            delta.transitions.push(PairTransition {
                a: pa.a.clone(),
                b: pa.b.clone(),
                granularity: pa.granularity,
                from: pa.class,
                to: pb.class,
            });
        }
    }
    Ok(delta)
}
