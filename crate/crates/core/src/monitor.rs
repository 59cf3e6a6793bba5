//! Live detection against a classified template, and scoring of a detection
//! stream against a ground-truth event log.
//!
//! The monitor maps every template entry to the backend's granularity, then
//! loops reset-free rounds of: pre-touch suppression pages (page backends
//! only) → check all watched locations → record hits → reset. One round is
//! one check call, so round indices line up with the simulator's schedule
//! and serve as the detection timebase.
//!
//! A sustained victim access lights its location up over several consecutive
//! rounds; debouncing collapses a hit run — tolerating short gaps — into a
//! single detection. Scoring matches detections to ground-truth occurrences
//! greedily in time order within a tolerance window, per event, which makes
//! the report invariant under uniform time shifts.

use serde::{Deserialize, Serialize};

use crate::probes::{Presence, ProbeBackend, ProbeError};
use crate::template::ClassifiedTemplate;
use crate::trace::ScheduleEntry;
use crate::types::{EventId, Granularity, Location};

#[derive(Debug, thiserror::Error)]
pub enum MonitorError {
    #[error("entry at {location} ({got}) is coarser than the backend's {backend} granularity")]
    EntryTooCoarse {
        location: Location,
        got: Granularity,
        backend: Granularity,
    },
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

fn default_debounce() -> u64 {
    5
}

/// Matching window for `evaluate`, in probing rounds.
pub const DEFAULT_TOLERANCE: u64 = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorConfig {
    /// Hit runs separated by at most this many missed rounds merge into one
    /// detection.
    #[serde(default = "default_debounce")]
    pub debounce_misses: u64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            debounce_misses: default_debounce(),
        }
    }
}

/// One debounced observation: the entry's event group was active from round
/// `round` through `last_round`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub events: Vec<EventId>,
    pub location: Location,
    /// Monotonic sample index of the first hit in the run.
    pub round: u64,
    pub last_round: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonitorRun {
    pub rounds_completed: u64,
    /// Raw hit rounds per template entry, in entry order.
    pub hits: Vec<Vec<u64>>,
    /// Debounced detections, ordered by first round (ties: entry order).
    pub detections: Vec<DetectionEvent>,
    /// Backend failure that cut the run short, if any.
    pub interrupted: Option<String>,
}

/// Runs `rounds` probing rounds of the template against the backend.
///
/// Backend errors mid-run end the stream early and are reported inside the
/// (partial) `MonitorRun` rather than as an `Err`.
pub fn monitor_stream(
    template: &ClassifiedTemplate,
    backend: &mut dyn ProbeBackend,
    rounds: u64,
    cfg: &MonitorConfig,
) -> Result<MonitorRun, MonitorError> {
    let g = backend.granularity();
    let mut mapped: Vec<Location> = Vec::with_capacity(template.entries.len());
    for e in &template.entries {
        if e.location.granularity > g {
            return Err(MonitorError::EntryTooCoarse {
                location: e.location.clone(),
                got: e.location.granularity,
                backend: g,
            });
        }
        mapped.push(Location::enclosing(&e.location.source, e.location.offset, g));
    }
    // Entries can share a probe location (two lines on one page); probe each
    // location once and fan the observation out.
    let mut probe_locs: Vec<Location> = Vec::new();
    let entry_slot: Vec<usize> = mapped
        .iter()
        .map(|m| {
            probe_locs
                .iter()
                .position(|p| p == m)
                .unwrap_or_else(|| {
                    probe_locs.push(m.clone());
                    probe_locs.len() - 1
                })
        })
        .collect();
    // Suppression lists are 4 KiB pages by construction; they only make sense
    // (and only type-check against the backend) at page granularity. Never
    // touch a page we watch.
    let suppress: Vec<Location> = if g == Granularity::PAGE_4K {
        let mut all: Vec<Location> = template
            .entries
            .iter()
            .flat_map(|e| e.suppress.iter().cloned())
            .filter(|s| !probe_locs.contains(s))
            .collect();
        all.sort();
        all.dedup();
        all
    } else {
        Vec::new()
    };

    let mut hits: Vec<Vec<u64>> = vec![Vec::new(); template.entries.len()];
    let mut interrupted = None;
    let mut completed = 0;

    // Clear residue from mapping or a previous campaign so round 0 is honest.
    let run_round = |backend: &mut dyn ProbeBackend, round: u64, hits: &mut Vec<Vec<u64>>| -> Result<(), ProbeError> {
        if !suppress.is_empty() {
            backend.touch(&suppress)?;
        }
        let presence = backend.check(&probe_locs)?;
        for (entry, &slot) in entry_slot.iter().enumerate() {
            if presence[slot] == Presence::Present {
                hits[entry].push(round);
            }
        }
        backend.reset(&probe_locs)
    };

    if let Err(e) = backend.reset(&probe_locs) {
        interrupted = Some(e.to_string());
    } else {
        for round in 0..rounds {
            if let Err(e) = run_round(backend, round, &mut hits) {
                interrupted = Some(e.to_string());
                break;
            }
            completed = round + 1;
        }
    }

    let mut detections: Vec<DetectionEvent> = Vec::new();
    for (entry, entry_hits) in hits.iter().enumerate() {
        for (start, end) in merge_runs(
            entry_hits.iter().map(|&r| (r, r)).collect(),
            cfg.debounce_misses,
        ) {
            detections.push(DetectionEvent {
                events: template.entries[entry].events.clone(),
                location: template.entries[entry].location.clone(),
                round: start,
                last_round: end,
            });
        }
    }
    detections.sort_by_key(|d| d.round);

    Ok(MonitorRun {
        rounds_completed: completed,
        hits,
        detections,
        interrupted,
    })
}

/// Merges sorted inclusive runs whose gap is at most `misses` skipped rounds.
/// Idempotent: merging a second time changes nothing.
pub fn merge_runs(runs: Vec<(u64, u64)>, misses: u64) -> Vec<(u64, u64)> {
    let mut out: Vec<(u64, u64)> = Vec::with_capacity(runs.len());
    for (start, end) in runs {
        match out.last_mut() {
            Some((_, prev_end)) if start.saturating_sub(*prev_end) <= misses + 1 => {
                *prev_end = (*prev_end).max(end);
            }
            _ => out.push((start, end)),
        }
    }
    out
}

/// Re-applies debouncing to an already-built detection list (per location).
pub fn debounce_detections(detections: &[DetectionEvent], misses: u64) -> Vec<DetectionEvent> {
    let mut keys: Vec<(&Vec<EventId>, &Location)> = Vec::new();
    for d in detections {
        if !keys.iter().any(|(e, l)| **e == d.events && **l == d.location) {
            keys.push((&d.events, &d.location));
        }
    }
    let mut out = Vec::new();
    for (events, location) in keys {
        let mut runs: Vec<(u64, u64)> = detections
            .iter()
            .filter(|d| d.events == *events && d.location == *location)
            .map(|d| (d.round, d.last_round))
            .collect();
        runs.sort_unstable();
        for (start, end) in merge_runs(runs, misses) {
            out.push(DetectionEvent {
                events: events.clone(),
                location: location.clone(),
                round: start,
                last_round: end,
            });
        }
    }
    out.sort_by_key(|d| d.round);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub event: EventId,
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Unweighted mean of the per-event F-scores.
    pub macro_f: f64,
}

/// With zero denominators: 1.0 when the event never appeared anywhere
/// (vacuously perfect), 0.0 otherwise.
fn safe_ratio(num: u64, den: u64, all_zero: bool) -> f64 {
    if den > 0 {
        num as f64 / den as f64
    } else if all_zero {
        1.0
    } else {
        0.0
    }
}

/// `(precision, recall, f_score)` from match counts. An event with no truth
/// and no detections scores a vacuous 1.0 across the board.
pub fn score_counts(true_pos: u64, false_pos: u64, false_neg: u64) -> (f64, f64, f64) {
    let all_zero = true_pos == 0 && false_pos == 0 && false_neg == 0;
    let precision = safe_ratio(true_pos, true_pos + false_pos, all_zero);
    let recall = safe_ratio(true_pos, true_pos + false_neg, all_zero);
    // 2pr/(p+r) in the division-free form, so clean fractions stay exact.
    let f_score = safe_ratio(2 * true_pos, 2 * true_pos + false_pos + false_neg, all_zero);
    (precision, recall, f_score)
}

/// Scores detections against a ground-truth log on the shared round timebase.
///
/// Per event: its ground-truth occurrences are matched greedily in time order
/// against detections whose group contains the event, a pair matching when
/// the rounds differ by at most `tolerance`. A detection for a merged group
/// counts for every member — a true positive for the member that actually
/// fired, a false positive for the rest — so indistinguishable events pay for
/// their ambiguity in precision.
pub fn evaluate(
    detections: &[DetectionEvent],
    ground_truth: &[ScheduleEntry],
    tolerance: u64,
) -> EvalReport {
    let mut events: Vec<EventId> = ground_truth
        .iter()
        .map(|g| g.event.clone())
        .chain(detections.iter().flat_map(|d| d.events.iter().cloned()))
        .filter(|e| !e.is_idle())
        .collect();
    events.sort();
    events.dedup();

    let mut rows = Vec::with_capacity(events.len());
    for event in events {
        let mut gt: Vec<u64> = ground_truth
            .iter()
            .filter(|g| g.event == event)
            .map(|g| g.round)
            .collect();
        gt.sort_unstable();
        let mut det: Vec<u64> = detections
            .iter()
            .filter(|d| d.events.contains(&event))
            .map(|d| d.round)
            .collect();
        det.sort_unstable();

        let mut matched = vec![false; gt.len()];
        let mut tp = 0u64;
        let mut fp = 0u64;
        for &d in &det {
            let hit = gt
                .iter()
                .enumerate()
                .find(|(i, &g)| !matched[*i] && g.abs_diff(d) <= tolerance);
            match hit {
                Some((i, _)) => {
                    matched[i] = true;
                    tp += 1;
                }
                None => fp += 1,
            }
        }
        let false_neg = matched.iter().filter(|m| !**m).count() as u64;
        let (precision, recall, f_score) = score_counts(tp, fp, false_neg);
        rows.push(EvalRow {
            event,
            true_pos: tp,
            false_pos: fp,
            false_neg,
            precision,
            recall,
            f_score,
        });
    }
    let macro_f = if rows.is_empty() {
        1.0
    } else {
        rows.iter().map(|r| r.f_score).sum::<f64>() / rows.len() as f64
    };
    EvalReport { rows, macro_f }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::probes::{Capabilities, ReadaroundModel, SimBackend};
    use crate::template::{ClassifiedTemplate, TemplateEntry};
    use crate::trace::{AccessTrace, TraceBuilder};
    use crate::types::Granularity;

    fn key(n: &str) -> EventId {
        EventId::new(n).unwrap()
    }

    fn page(i: u64) -> Location {
        Location::enclosing("app", i * 4096, Granularity::PAGE_4K)
    }

    /// a/b/c each own a page; each fires for three consecutive rounds.
    fn replay_trace() -> Arc<AccessTrace> {
        let mut b = TraceBuilder::new()
            .region("app", 0, 40 * 4096)
            .event(key("a"), vec![("app".into(), 4096)])
            .event(key("b"), vec![("app".into(), 5 * 4096)])
            .event(key("c"), vec![("app".into(), 9 * 4096)]);
        for r in [2u64, 3, 4] {
            b = b.fire(r, key("a"));
        }
        for r in [10u64, 11, 12] {
            b = b.fire(r, key("b"));
        }
        for r in [20u64, 21, 22] {
            b = b.fire(r, key("c"));
        }
        Arc::new(b.build().unwrap())
    }

    fn template_abc() -> ClassifiedTemplate {
        ClassifiedTemplate::new(vec![
            TemplateEntry::new(vec![key("a")], page(1), 0.9),
            TemplateEntry::new(vec![key("b")], page(5), 0.9),
            TemplateEntry::new(vec![key("c")], page(9), 0.9),
        ])
    }

    #[test]
    fn replayed_events_come_out_in_order() {
        let trace = replay_trace();
        let mut backend = SimBackend::new(trace.clone(), Granularity::PAGE_4K, 7);
        let run = monitor_stream(
            &template_abc(),
            &mut backend,
            30,
            &MonitorConfig { debounce_misses: 2 },
        )
        .unwrap();
        assert_eq!(run.rounds_completed, 30);
        assert!(run.interrupted.is_none());
        let got: Vec<(&str, u64, u64)> = run
            .detections
            .iter()
            .map(|d| (d.events[0].as_str(), d.round, d.last_round))
            .collect();
        assert_eq!(got, vec![("a", 2, 4), ("b", 10, 12), ("c", 20, 22)]);
    }

    #[test]
    fn no_activity_means_no_detections() {
        let trace = Arc::new(
            TraceBuilder::new()
                .region("app", 0, 40 * 4096)
                .event(key("a"), vec![("app".into(), 4096)])
                .build()
                .unwrap(),
        );
        let mut backend = SimBackend::new(trace, Granularity::PAGE_4K, 7);
        let run =
            monitor_stream(&template_abc(), &mut backend, 10, &MonitorConfig::default()).unwrap();
        assert!(run.detections.is_empty());
        assert!(run.hits.iter().all(|h| h.is_empty()));
    }

    #[test]
    fn debounce_tolerates_short_gaps_only() {
        let runs = |misses| {
            merge_runs(
                vec![(0, 0), (1, 1), (2, 2), (5, 5), (6, 6)],
                misses,
            )
        };
        // gap between rounds 2 and 5 skips rounds 3 and 4
        assert_eq!(runs(2), vec![(0, 6)]);
        assert_eq!(runs(1), vec![(0, 2), (5, 6)]);
        assert_eq!(runs(0), vec![(0, 2), (5, 6)]);
    }

    #[test]
    fn debounce_is_idempotent() {
        let once = merge_runs(vec![(0, 1), (3, 3), (9, 12), (13, 13), (40, 41)], 2);
        let twice = merge_runs(once.clone(), 2);
        assert_eq!(once, twice);

        let d = |r: u64, l: u64| DetectionEvent {
            events: vec![key("a")],
            location: page(1),
            round: r,
            last_round: l,
        };
        let dets = vec![d(0, 2), d(4, 5), d(30, 31)];
        let merged = debounce_detections(&dets, 1);
        assert_eq!(merged, vec![d(0, 5), d(30, 31)]);
        assert_eq!(debounce_detections(&merged, 1), merged);
    }

    #[test]
    fn suppression_pages_blank_out_neighbor_faults() {
        // b hammers page 90 every round and c hammers 116 — the far edge
        // that can still fault onto the watched page (116's window starts at
        // 100). A's entry watches page 100. With the suppression list
        // touched each round both faults are silent; without it, A lights up
        // constantly.
        let mut builder = TraceBuilder::new()
            .region("app", 0, 200 * 4096)
            .readaround(ReadaroundModel::default())
            .event(key("b"), vec![("app".into(), 90 * 4096)])
            .event(key("c"), vec![("app".into(), 116 * 4096)]);
        for r in 0..10 {
            builder = builder.fire(r, key("b")).fire(r, key("c"));
        }
        let trace = Arc::new(builder.build().unwrap());

        let model = ReadaroundModel::default();
        let mut entry = TemplateEntry::new(vec![key("A")], page(100), 0.9);
        entry.suppress = model
            .suppression_pages(100)
            .into_iter()
            .map(page)
            .collect();
        let suppressed = ClassifiedTemplate::new(vec![entry.clone()]);
        let mut bare_entry = entry;
        bare_entry.suppress.clear();
        let bare = ClassifiedTemplate::new(vec![bare_entry]);

        let mut backend = SimBackend::new(trace.clone(), Granularity::PAGE_4K, 1);
        let quiet =
            monitor_stream(&suppressed, &mut backend, 10, &MonitorConfig::default()).unwrap();
        assert!(quiet.detections.is_empty(), "suppression failed: {:?}", quiet.detections);

        let mut backend = SimBackend::new(trace, Granularity::PAGE_4K, 1);
        let loud = monitor_stream(&bare, &mut backend, 10, &MonitorConfig::default()).unwrap();
        assert_eq!(loud.detections.len(), 1);
        assert_eq!(loud.hits[0].len(), 10);
    }

    /// Fails every probe op after the nth check.
    struct Flaky {
        inner: SimBackend,
        checks_left: u32,
    }

    impl ProbeBackend for Flaky {
        fn id(&self) -> &'static str {
            "flaky"
        }
        fn granularity(&self) -> Granularity {
            self.inner.granularity()
        }
        fn capabilities(&self) -> Capabilities {
            self.inner.capabilities()
        }
        fn reset(&mut self, l: &[Location]) -> Result<(), ProbeError> {
            self.inner.reset(l)
        }
        fn trigger(&mut self, e: &EventId) -> Result<(), ProbeError> {
            self.inner.trigger(e)
        }
        fn check(&mut self, l: &[Location]) -> Result<Vec<Presence>, ProbeError> {
            if self.checks_left == 0 {
                return Err(ProbeError::Backend("probe window lost".into()));
            }
            self.checks_left -= 1;
            self.inner.check(l)
        }
        fn touch(&mut self, l: &[Location]) -> Result<(), ProbeError> {
            self.inner.touch(l)
        }
    }

    #[test]
    fn backend_failure_yields_partial_results() {
        let trace = replay_trace();
        let mut backend = Flaky {
            inner: SimBackend::new(trace, Granularity::PAGE_4K, 7),
            checks_left: 7,
        };
        let run = monitor_stream(
            &template_abc(),
            &mut backend,
            30,
            &MonitorConfig { debounce_misses: 2 },
        )
        .unwrap();
        assert_eq!(run.rounds_completed, 7);
        assert!(run.interrupted.is_some());
        // only "a" (rounds 2-4) happened before the cut
        assert_eq!(run.detections.len(), 1);
        assert_eq!(run.detections[0].events, vec![key("a")]);
    }

    #[test]
    fn entries_coarser_than_the_backend_are_rejected() {
        let trace = replay_trace();
        let mut backend = SimBackend::new(trace, Granularity::LINE, 7);
        let err = monitor_stream(&template_abc(), &mut backend, 5, &MonitorConfig::default());
        assert!(matches!(err, Err(MonitorError::EntryTooCoarse { .. })));
    }

    #[test]
    fn line_entries_sharing_a_page_fan_out_from_one_probe() {
        let line = |off: u64| Location::enclosing("app", off, Granularity::LINE);
        let mut builder = TraceBuilder::new()
            .region("app", 0, 10 * 4096)
            .event(key("a"), vec![("app".into(), 4096 + 64)]);
        for r in 0..3 {
            builder = builder.fire(r, key("a"));
        }
        let trace = Arc::new(builder.build().unwrap());
        let template = ClassifiedTemplate::new(vec![
            TemplateEntry::new(vec![key("a")], line(4096 + 64), 0.9),
            TemplateEntry::new(vec![key("x")], line(4096 + 512), 0.9),
        ]);
        let mut backend = SimBackend::new(trace, Granularity::PAGE_4K, 7);
        let run = monitor_stream(&template, &mut backend, 5, &MonitorConfig::default()).unwrap();
        // both entries map to page 1; the page observation feeds both
        assert_eq!(run.hits[0], vec![0, 1, 2]);
        assert_eq!(run.hits[1], vec![0, 1, 2]);
    }

    #[test]
    fn eval_formula_hand_check() {
        // 10 ground-truth presses, 8 detected on time, 2 spurious detections.
        let gt: Vec<ScheduleEntry> = (0..10)
            .map(|i| ScheduleEntry {
                round: i * 200,
                event: key("K"),
            })
            .collect();
        let mut dets: Vec<DetectionEvent> = (0..8)
            .map(|i| DetectionEvent {
                events: vec![key("K")],
                location: page(1),
                round: i * 200 + 3,
                last_round: i * 200 + 4,
            })
            .collect();
        for r in [5000, 6000] {
            dets.push(DetectionEvent {
                events: vec![key("K")],
                location: page(1),
                round: r,
                last_round: r,
            });
        }
        let report = evaluate(&dets, &gt, 50);
        let row = &report.rows[0];
        assert_eq!((row.true_pos, row.false_pos, row.false_neg), (8, 2, 2));
        assert!((row.precision - 0.8).abs() < 1e-12);
        assert!((row.recall - 0.8).abs() < 1e-12);
        assert!((row.f_score - 0.8).abs() < 1e-12);
        assert!((report.macro_f - 0.8).abs() < 1e-12);
    }

    #[test]
    fn eval_zero_denominators() {
        // Perfect silence on an event that never fired: vacuously 1.0.
        let gt = vec![ScheduleEntry {
            round: 0,
            event: key("A"),
        }];
        let dets = vec![DetectionEvent {
            events: vec![key("B")],
            location: page(1),
            round: 500,
            last_round: 500,
        }];
        let report = evaluate(&dets, &gt, 50);
        let a = report.rows.iter().find(|r| r.event == key("A")).unwrap();
        // A: one miss, nothing detected → precision undefined→0.0, recall 0
        assert_eq!((a.true_pos, a.false_pos, a.false_neg), (0, 0, 1));
        assert_eq!((a.precision, a.recall, a.f_score), (0.0, 0.0, 0.0));
        let b = report.rows.iter().find(|r| r.event == key("B")).unwrap();
        // B: one detection, no truth → recall undefined→0.0
        assert_eq!((b.true_pos, b.false_pos, b.false_neg), (0, 1, 0));
        assert_eq!((b.precision, b.recall, b.f_score), (0.0, 0.0, 0.0));

        let empty = evaluate(&[], &[], 50);
        assert!(empty.rows.is_empty());
        assert_eq!(empty.macro_f, 1.0);
    }

    #[test]
    fn grouped_detection_charges_every_member() {
        let gt = vec![ScheduleEntry {
            round: 10,
            event: key("A"),
        }];
        let dets = vec![DetectionEvent {
            events: vec![key("A"), key("B")],
            location: page(1),
            round: 12,
            last_round: 12,
        }];
        let report = evaluate(&dets, &gt, 50);
        let a = report.rows.iter().find(|r| r.event == key("A")).unwrap();
        let b = report.rows.iter().find(|r| r.event == key("B")).unwrap();
        assert_eq!((a.true_pos, a.false_pos, a.false_neg), (1, 0, 0));
        assert_eq!((b.true_pos, b.false_pos, b.false_neg), (0, 1, 0));
    }

    #[test]
    fn evaluation_ignores_uniform_time_shifts() {
        let gt: Vec<ScheduleEntry> = (0..5)
            .map(|i| ScheduleEntry {
                round: i * 300,
                event: key("K"),
            })
            .collect();
        let dets: Vec<DetectionEvent> = (0..4)
            .map(|i| DetectionEvent {
                events: vec![key("K")],
                location: page(1),
                round: i * 300 + 7,
                last_round: i * 300 + 9,
            })
            .collect();
        let base = evaluate(&dets, &gt, 50);
        let shift = 100_000;
        let gt2: Vec<ScheduleEntry> = gt
            .iter()
            .map(|g| ScheduleEntry {
                round: g.round + shift,
                event: g.event.clone(),
            })
            .collect();
        let dets2: Vec<DetectionEvent> = dets
            .iter()
            .map(|d| DetectionEvent {
                round: d.round + shift,
                last_round: d.last_round + shift,
                ..d.clone()
            })
            .collect();
        assert_eq!(base, evaluate(&dets2, &gt2, 50));
    }

    #[test]
    fn idle_rows_never_appear_in_reports() {
        let gt = vec![
            ScheduleEntry {
                round: 0,
                event: key("A"),
            },
            ScheduleEntry {
                round: 5,
                event: EventId::idle(),
            },
        ];
        let report = evaluate(&[], &gt, 50);
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].event, key("A"));
    }
}
