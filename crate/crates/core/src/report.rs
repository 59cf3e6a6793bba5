//! CSV emission and ingestion for every artifact the pipeline persists.
//!
//! All files share one shape: an optional `# run_id=…` comment, a header,
//! then typed rows. Writers are deterministic byte-for-byte — same data,
//! same bytes — so reruns with one seed can be diffed directly. Floats go
//! through the shortest round-trip representation.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::binscan::{PairGrade, StringLayoutReport};
use crate::matrix::{HitRatioMatrix, MatrixError};
use crate::monitor::DetectionEvent;
use crate::types::{EventId, Granularity, Location, TypeError};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Parse(String),
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// Serializes rows with an optional run-id comment line on top.
pub fn to_csv<T: Serialize>(rows: &[T], run_id: Option<&str>) -> Result<String, ReportError> {
    let mut out = String::new();
    if let Some(id) = run_id {
        out.push_str("# run_id=");
        out.push_str(id);
        out.push('\n');
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let body = w
        .into_inner()
        .map_err(|e| ReportError::Parse(e.to_string()))?;
    out.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
    Ok(out)
}

/// Reads rows back, recovering the run id if the file carries one.
pub fn from_csv<T: DeserializeOwned>(text: &str) -> Result<(Vec<T>, Option<String>), ReportError> {
    let run_id = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# run_id="))
        .map(str::to_string);
    let mut rd = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let rows = rd.deserialize().collect::<Result<Vec<T>, _>>()?;
    Ok((rows, run_id))
}

// --- hit-ratio matrices ---

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub event: EventId,
    pub source: String,
    pub offset: u64,
    pub granularity: Granularity,
    pub hits: u32,
    pub samples: u32,
}

pub fn matrix_rows(matrix: &HitRatioMatrix) -> Vec<MatrixRow> {
    let mut rows = Vec::with_capacity(matrix.events().len() * matrix.locations().len());
    for (e, event) in matrix.events().iter().enumerate() {
        for (l, loc) in matrix.locations().iter().enumerate() {
            let (hits, samples) = matrix.counts(e, l);
            rows.push(MatrixRow {
                event: event.clone(),
                source: loc.source.clone(),
                offset: loc.offset,
                granularity: loc.granularity,
                hits,
                samples,
            });
        }
    }
    rows
}

/// Rebuilds a matrix from its rows. Every event must cover the same
/// locations in the same order; the nominal sample count is taken as the
/// largest observed count.
pub fn matrix_from_rows(rows: &[MatrixRow]) -> Result<HitRatioMatrix, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Parse("matrix csv has no rows".into()));
    }
    let mut events: Vec<EventId> = Vec::new();
    for r in rows {
        if !events.contains(&r.event) {
            events.push(r.event.clone());
        }
    }
    let per_event = rows.len() / events.len();
    if per_event * events.len() != rows.len() {
        return Err(ReportError::Parse(
            "matrix csv is not rectangular".into(),
        ));
    }
    let locations: Vec<Location> = rows[..per_event]
        .iter()
        .map(|r| Location {
            source: r.source.clone(),
            offset: r.offset,
            granularity: r.granularity,
        })
        .collect();
    for (i, r) in rows.iter().enumerate() {
        let expect_event = &events[i / per_event];
        let loc = &locations[i % per_event];
        if r.event != *expect_event
            || r.source != loc.source
            || r.offset != loc.offset
            || r.granularity != loc.granularity
        {
            return Err(ReportError::Parse(format!(
                "matrix csv row {} out of order",
                i + 2
            )));
        }
    }
    let nominal = rows.iter().map(|r| r.samples).max().unwrap_or(0);
    Ok(HitRatioMatrix::from_counts(
        events,
        locations,
        nominal,
        rows.iter().map(|r| r.hits).collect(),
        rows.iter().map(|r| r.samples).collect(),
    )?)
}

// --- detections ---

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionRow {
    /// Group members joined with `+`.
    pub events: String,
    pub source: String,
    pub offset: u64,
    pub granularity: Granularity,
    pub first_round: u64,
    pub last_round: u64,
}

pub fn detection_rows(detections: &[DetectionEvent]) -> Vec<DetectionRow> {
    detections
        .iter()
        .map(|d| DetectionRow {
            events: d
                .events
                .iter()
                .map(|e| e.as_str())
                .collect::<Vec<_>>()
                .join("+"),
            source: d.location.source.clone(),
            offset: d.location.offset,
            granularity: d.location.granularity,
            first_round: d.round,
            last_round: d.last_round,
        })
        .collect()
}

pub fn detections_from_rows(rows: &[DetectionRow]) -> Result<Vec<DetectionEvent>, ReportError> {
    rows.iter()
        .map(|r| {
            let events = r
                .events
                .split('+')
                .map(EventId::new)
                .collect::<Result<Vec<_>, _>>()?;
            Ok(DetectionEvent {
                events,
                location: Location {
                    source: r.source.clone(),
                    offset: r.offset,
                    granularity: r.granularity,
                },
                round: r.first_round,
                last_round: r.last_round,
            })
        })
        .collect()
}

// --- application summary tables (fixture ingestion + rendering) ---

/// Bool that reads and writes as `yes`/`no`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct YesNo(pub bool);

impl Serialize for YesNo {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(if self.0 { "yes" } else { "no" })
    }
}

impl<'de> Deserialize<'de> for YesNo {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match String::deserialize(d)?.as_str() {
            "yes" => Ok(YesNo(true)),
            "no" => Ok(YesNo(false)),
            other => Err(serde::de::Error::custom(format!(
                "expected yes or no, got {other:?}"
            ))),
        }
    }
}

/// One application's leakage summary: which channels observed all key
/// events, whether inter-keystroke timing worked on grouped keys, and the
/// average F-score achieved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppSummaryRow {
    pub name: String,
    pub category: String,
    pub cacheline_all_keys: YesNo,
    pub pagecache_all_keys: YesNo,
    pub timing_on_blocks: YesNo,
    pub avg_f_score: f64,
}

// --- binary layout reports ---

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccurrenceRow {
    pub marker: String,
    pub section: String,
    pub file_offset: u64,
    pub va: u64,
    pub line_index: u64,
    pub page_index: u64,
    pub tail_merged: bool,
}

pub fn occurrence_rows(report: &StringLayoutReport) -> Vec<OccurrenceRow> {
    report
        .markers
        .iter()
        .flat_map(|m| {
            m.occurrences.iter().map(|o| OccurrenceRow {
                marker: m.marker.clone(),
                section: o.section.clone(),
                file_offset: o.file_offset,
                va: o.va,
                line_index: o.line_index,
                page_index: o.page_index,
                tail_merged: o.tail_merged,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRow {
    pub a: String,
    pub b: String,
    pub granularity: Granularity,
    pub class: crate::binscan::PairClass,
}

pub fn pair_rows(report: &StringLayoutReport) -> Vec<PairRow> {
    report
        .pairs
        .iter()
        .map(|p| PairRow {
            a: p.a.clone(),
            b: p.b.clone(),
            granularity: p.granularity,
            class: p.class,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeRow {
    pub a: String,
    pub b: String,
    pub grade: crate::binscan::LeakGrade,
}

pub fn grade_rows(grades: &[PairGrade]) -> Vec<GradeRow> {
    grades
        .iter()
        .map(|g| GradeRow {
            a: g.a.clone(),
            b: g.b.clone(),
            grade: g.grade,
        })
        .collect()
}
