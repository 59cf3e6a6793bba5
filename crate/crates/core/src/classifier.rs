//! Matrix → template classification.
//!
//! Each key's score at a location is its own hit ratio minus the summed
//! ratios of every other row there, so a location only scores high when it
//! fires for this key and stays quiet otherwise. The best-scoring location is
//! accepted if it clears both an absolute floor and the location's own noise
//! floor (idle ratio plus a margin). Keys that fail — typically because they
//! share their pages with another key — are merged with the event stealing
//! their signal and re-scored as a group, growing one member at a time until
//! the group passes or runs out of room. The result maps disjoint event
//! groups to locations.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::matrix::HitRatioMatrix;
use crate::probes::ReadaroundModel;
use crate::template::{ClassifiedTemplate, TemplateEntry, TemplateError};
use crate::types::{EventId, Granularity, Location};

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("matrix has no idle row but idle gating is enabled")]
    MissingIdleRow,
    #[error("matrix has no key rows to classify")]
    NoKeys,
    #[error("config: {0}")]
    BadConfig(String),
    #[error("template references {what} missing from the matrix")]
    MatrixMismatch { what: String },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

fn default_min_score() -> f64 {
    0.5
}
fn default_noise_margin() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// Absolute acceptance floor for group scores.
    #[serde(default = "default_min_score")]
    pub min_score: f64,
    /// A candidate must also beat the location's idle ratio by this margin.
    #[serde(default = "default_noise_margin")]
    pub noise_margin: f64,
    /// Merged groups stop growing here; unset means "all keys".
    #[serde(default)]
    pub max_group_size: Option<usize>,
    /// Gate against the idle row (requires the matrix to have one).
    #[serde(default = "default_true")]
    pub idle_gating: bool,
    /// Read-around model used to derive per-entry suppression lists.
    #[serde(default)]
    pub readaround: ReadaroundModel,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            min_score: default_min_score(),
            noise_margin: default_noise_margin(),
            max_group_size: None,
            idle_gating: true,
            readaround: ReadaroundModel::default(),
        }
    }
}

impl ClassifierConfig {
    fn validate(&self) -> Result<(), ClassifierError> {
        if !self.min_score.is_finite() || !self.noise_margin.is_finite() || self.noise_margin < 0.0
        {
            return Err(ClassifierError::BadConfig(
                "min_score and noise_margin must be finite, margin non-negative".into(),
            ));
        }
        if self.max_group_size == Some(0) {
            return Err(ClassifierError::BadConfig(
                "max_group_size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Precomputed ratio table with the group-scoring rules.
struct Scores {
    ratios: Vec<Vec<f64>>, // [event][location]
    totals: Vec<f64>,      // per-location sum over all events
    idle: Option<usize>,
}

impl Scores {
    fn new(matrix: &HitRatioMatrix) -> Self {
        let events = matrix.events().len();
        let locs = matrix.locations().len();
        let ratios: Vec<Vec<f64>> = (0..events)
            .map(|e| (0..locs).map(|l| matrix.ratio(e, l)).collect())
            .collect();
        let totals = (0..locs)
            .map(|l| (0..events).map(|e| ratios[e][l]).sum())
            .collect();
        Scores {
            ratios,
            totals,
            idle: matrix.events().iter().position(|e| e.is_idle()),
        }
    }

    /// Weakest member's ratio minus everything outside the group.
    fn group_score(&self, group: &[usize], loc: usize) -> f64 {
        let inside: f64 = group.iter().map(|&m| self.ratios[m][loc]).sum();
        let weakest = group
            .iter()
            .map(|&m| self.ratios[m][loc])
            .fold(f64::INFINITY, f64::min);
        weakest - (self.totals[loc] - inside)
    }

    /// Where the whole group fires: weakest member's ratio.
    fn group_ratio(&self, group: &[usize], loc: usize) -> f64 {
        group
            .iter()
            .map(|&m| self.ratios[m][loc])
            .fold(f64::INFINITY, f64::min)
    }

    fn floor(&self, cfg: &ClassifierConfig, loc: usize) -> f64 {
        match self.idle {
            Some(i) if cfg.idle_gating => cfg.min_score.max(self.ratios[i][loc] + cfg.noise_margin),
            _ => cfg.min_score,
        }
    }

    /// First location maximizing `f` (ties go to the lower column index,
    /// i.e. lower (source, offset)).
    fn argmax(&self, mut f: impl FnMut(usize) -> f64) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for loc in 0..self.totals.len() {
            let v = f(loc);
            if v > best.1 {
                best = (loc, v);
            }
        }
        best
    }
}

/// Classifies every key row of `matrix` into template entries.
pub fn classify(
    matrix: &HitRatioMatrix,
    cfg: &ClassifierConfig,
) -> Result<ClassifiedTemplate, ClassifierError> {
    cfg.validate()?;
    let events = matrix.events();
    let key_indices: Vec<usize> = (0..events.len()).filter(|&e| !events[e].is_idle()).collect();
    if key_indices.is_empty() {
        return Err(ClassifierError::NoKeys);
    }
    let scores = Scores::new(matrix);
    if cfg.idle_gating && scores.idle.is_none() {
        return Err(ClassifierError::MissingIdleRow);
    }
    let max_group = cfg.max_group_size.unwrap_or(key_indices.len()).max(1);

    let mut assigned = vec![false; events.len()];
    let mut entries: Vec<TemplateEntry> = Vec::new();
    let mut warnings: Vec<String> = Vec::new();

    for &driver in &key_indices {
        if assigned[driver] {
            continue;
        }
        let mut group = vec![driver];
        loop {
            let (loc, score) = scores.argmax(|l| scores.group_score(&group, l));
            if score >= scores.floor(cfg, loc) {
                for &m in &group {
                    assigned[m] = true;
                }
                entries.push(TemplateEntry::new(
                    group.iter().map(|&m| events[m].clone()).collect(),
                    matrix.locations()[loc].clone(),
                    score,
                ));
                break;
            }
            if group.len() >= max_group {
                warnings.push(format!(
                    "{}: best score {:.3} at {} is below the floor {:.3}; gave up at group size {}",
                    group_label(events, &group),
                    score,
                    matrix.locations()[loc],
                    scores.floor(cfg, loc),
                    group.len(),
                ));
                break;
            }
            // The group's signal lives where its weakest member still fires;
            // whoever else is loudest there is the one drowning it out.
            let (anchor, anchor_ratio) = scores.argmax(|l| scores.group_ratio(&group, l));
            if anchor_ratio <= 0.0 {
                warnings.push(format!(
                    "{}: no location shows joint activity",
                    group_label(events, &group),
                ));
                break;
            }
            let partner = key_indices
                .iter()
                .copied()
                .filter(|&e| !assigned[e] && !group.contains(&e))
                .max_by(|&a, &b| {
                    scores.ratios[a][anchor]
                        .partial_cmp(&scores.ratios[b][anchor])
                        .expect("ratios are finite")
                        // prefer the earlier row on ties
                        .then(b.cmp(&a))
                });
            match partner {
                Some(p) if scores.ratios[p][anchor] > 0.0 => group.push(p),
                _ => {
                    warnings.push(format!(
                        "{}: rejected at {} (score {:.3} < floor {:.3}) and no unassigned event shares its activity",
                        group_label(events, &group),
                        matrix.locations()[anchor],
                        scores.group_score(&group, anchor),
                        scores.floor(cfg, anchor),
                    ));
                    break;
                }
            }
        }
    }

    let unclassified: Vec<EventId> = key_indices
        .iter()
        .filter(|&&e| !assigned[e])
        .map(|&e| events[e].clone())
        .collect();

    compute_suppression(&mut entries, &cfg.readaround);

    let template = ClassifiedTemplate {
        version: 1,
        run_id: None,
        unclassified,
        warnings,
        fingerprint: Default::default(),
        entries,
    };
    template.validate()?;
    Ok(template)
}

fn group_label(events: &[EventId], group: &[usize]) -> String {
    let names: Vec<&str> = group.iter().map(|&m| events[m].as_str()).collect();
    names.join("+")
}

/// Enclosing 4 KiB page of a location no coarser than a page.
fn entry_page(loc: &Location) -> Option<(String, u64)> {
    (loc.granularity <= Granularity::PAGE_4K).then(|| (loc.source.clone(), loc.offset / 4096))
}

/// Fills each entry's suppression list: the pages a fault near the entry
/// would drag in, minus every page some entry actually watches (pre-touching
/// a watched page would blind its monitor).
fn compute_suppression(entries: &mut [TemplateEntry], model: &ReadaroundModel) {
    if !model.enabled {
        for e in entries.iter_mut() {
            e.suppress.clear();
        }
        return;
    }
    let watched: BTreeSet<(String, u64)> = entries.iter().filter_map(|e| entry_page(&e.location)).collect();
    for e in entries.iter_mut() {
        let Some((source, page)) = entry_page(&e.location) else {
            e.suppress = Vec::new();
            continue;
        };
        e.suppress = model
            .suppression_pages(page)
            .into_iter()
            .filter(|q| !watched.contains(&(source.clone(), *q)))
            .map(|q| Location {
                source: source.clone(),
                offset: q * 4096,
                granularity: Granularity::PAGE_4K,
            })
            .collect();
    }
}

/// Post-classification cleanup for read-around ambiguity.
///
/// Entries that landed on the same page are indistinguishable to any
/// page-level channel: they collapse into one merged entry (events unioned,
/// score recomputed against `matrix` as usual for a group). Entries whose
/// fault windows merely overlap stay separate, but each records the boundary
/// pages of its window that no overlapping neighbor's window covers — probing
/// those tells the events apart even with read-around in play.
pub fn filter_readaround(
    template: &ClassifiedTemplate,
    matrix: &HitRatioMatrix,
    model: &ReadaroundModel,
) -> Result<ClassifiedTemplate, ClassifierError> {
    let mut out = template.clone();
    if !model.enabled {
        return Ok(out);
    }
    let scores = Scores::new(matrix);

    // 1: collapse same-page page-granularity entries.
    let mut merged: Vec<TemplateEntry> = Vec::new();
    for entry in &out.entries {
        let same_page = entry.location.granularity == Granularity::PAGE_4K
            && merged
                .iter()
                .position(|m| m.location == entry.location)
                .is_some();
        if !same_page {
            merged.push(entry.clone());
            continue;
        }
        let target = merged
            .iter_mut()
            .find(|m| m.location == entry.location)
            .expect("checked above");
        let mut union = target.events.clone();
        union.extend(entry.events.iter().cloned());
        union.sort();
        union.dedup();
        let group: Vec<usize> = union
            .iter()
            .map(|ev| {
                matrix
                    .event_index(ev)
                    .ok_or_else(|| ClassifierError::MatrixMismatch {
                        what: format!("event {ev}"),
                    })
            })
            .collect::<Result<_, _>>()?;
        let loc = matrix
            .location_index(&entry.location)
            .ok_or_else(|| ClassifierError::MatrixMismatch {
                what: format!("location {}", entry.location),
            })?;
        out.warnings.push(format!(
            "{} and {} share page {} and are indistinguishable there; merged",
            target.events.iter().map(|e| e.as_str()).collect::<Vec<_>>().join("+"),
            entry.events.iter().map(|e| e.as_str()).collect::<Vec<_>>().join("+"),
            entry.location,
        ));
        target.events = union;
        target.score = scores.group_score(&group, loc);
    }

    // 2: boundary distinguishers for overlapping (but distinct) windows.
    let span = model.pages_before + model.pages_after;
    let pages: Vec<Option<(String, u64)>> = merged
        .iter()
        .map(|e| {
            (e.location.granularity == Granularity::PAGE_4K)
                .then(|| (e.location.source.clone(), e.location.offset / 4096))
        })
        .collect();
    for i in 0..merged.len() {
        let Some((ref src_i, page_i)) = pages[i] else {
            continue;
        };
        let overlapping: Vec<u64> = pages
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .filter_map(|(_, p)| p.as_ref())
            .filter(|(src_j, page_j)| src_j == src_i && page_j.abs_diff(page_i) <= span)
            .map(|(_, page_j)| *page_j)
            .collect();
        if overlapping.is_empty() {
            merged[i].distinguishers = Vec::new();
            continue;
        }
        let window = model.window(page_i);
        let unique: Vec<u64> = [*window.start(), *window.end()]
            .into_iter()
            .filter(|b| {
                overlapping
                    .iter()
                    .all(|&q| !model.window(q).contains(b))
            })
            .collect();
        if unique.is_empty() {
            out.warnings.push(format!(
                "{}: fault window has no boundary page outside its neighbors' windows",
                merged[i].location,
            ));
        } else {
            out.warnings.push(format!(
                "{}: fault window overlaps {} neighboring entries; boundary pages {} identify it",
                merged[i].location,
                overlapping.len(),
                unique
                    .iter()
                    .map(|p| format!("{p}"))
                    .collect::<Vec<_>>()
                    .join(","),
            ));
        }
        merged[i].distinguishers = unique
            .into_iter()
            .map(|q| Location {
                source: src_i.clone(),
                offset: q * 4096,
                granularity: Granularity::PAGE_4K,
            })
            .collect();
    }

    // 3: sub-page entries sharing a page are fine for fine-grained channels,
    // but a page-level monitor cannot separate them — tell the operator.
    let mut fine_pages: Vec<(String, u64, String)> = Vec::new();
    for e in &merged {
        if e.location.granularity < Granularity::PAGE_4K {
            let label = e.events.iter().map(|v| v.as_str()).collect::<Vec<_>>().join("+");
            if let Some((_, _, prior)) = fine_pages
                .iter()
                .find(|(s, p, _)| *s == e.location.source && *p == e.location.offset / 4096)
            {
                out.warnings.push(format!(
                    "{prior} and {label} share a page; only line-granularity monitoring separates them",
                ));
            } else {
                fine_pages.push((e.location.source.clone(), e.location.offset / 4096, label));
            }
        }
    }

    compute_suppression(&mut merged, model);
    out.entries = merged;
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::HitRatioMatrix;

    fn key(n: &str) -> EventId {
        EventId::new(n).unwrap()
    }

    fn page(i: u64) -> Location {
        Location::enclosing("app", i * 4096, Granularity::PAGE_4K)
    }

    /// Matrix from a ratio table (out of 20 samples), events × locations.
    fn matrix(events: &[EventId], pages_idx: &[u64], ratios: &[&[f64]]) -> HitRatioMatrix {
        let locs: Vec<Location> = pages_idx.iter().map(|&i| page(i)).collect();
        let mut hits = Vec::new();
        for row in ratios {
            assert_eq!(row.len(), locs.len());
            for &r in *row {
                let h = (r * 20.0).round() as u32;
                hits.push(h);
            }
        }
        HitRatioMatrix::from_counts(
            events.to_vec(),
            locs,
            20,
            hits,
            vec![20; events.len() * pages_idx.len()],
        )
        .unwrap()
    }

    fn no_suppress() -> ClassifierConfig {
        ClassifierConfig {
            readaround: ReadaroundModel::disabled(),
            ..ClassifierConfig::default()
        }
    }

    #[test]
    fn clean_signals_classify_one_to_one() {
        let events = [key("A"), key("B"), key("C"), EventId::idle()];
        let m = matrix(
            &events,
            &[0, 1, 2, 3],
            &[
                &[0.05, 0.00, 0.95, 0.00], // A → page 2
                &[0.00, 1.00, 0.05, 0.00], // B → page 1
                &[0.00, 0.00, 0.00, 0.90], // C → page 3
                &[0.05, 0.00, 0.05, 0.00], // idle
            ],
        );
        let t = classify(&m, &no_suppress()).unwrap();
        assert!(t.unclassified.is_empty());
        let got: Vec<(Vec<&str>, u64, f64)> = t
            .entries
            .iter()
            .map(|e| {
                (
                    e.events.iter().map(|v| v.as_str()).collect(),
                    e.location.offset / 4096,
                    e.score,
                )
            })
            .collect();
        // brute force oracle: A's score at page2 = 0.95 - (0.05 + 0.05) = 0.85,
        // B at page1 = 1.0, C at page3 = 0.9
        assert_eq!(got.len(), 3);
        assert_eq!(got[0].0, vec!["A"]);
        assert_eq!(got[0].1, 2);
        assert!((got[0].2 - 0.85).abs() < 1e-12);
        assert_eq!(got[1], (vec!["B"], 1, 1.0));
        assert_eq!(got[2], (vec!["C"], 3, 0.9));
    }

    #[test]
    fn brute_force_argmax_agrees() {
        // Independent oracle for the A row above: enumerate all scores.
        let events = [key("A"), key("B"), key("C"), EventId::idle()];
        let rows: &[&[f64]] = &[
            &[0.05, 0.00, 0.95, 0.00],
            &[0.00, 1.00, 0.05, 0.00],
            &[0.00, 0.00, 0.00, 0.90],
            &[0.05, 0.00, 0.05, 0.00],
        ];
        let m = matrix(&events, &[0, 1, 2, 3], rows);
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for (loc, _) in rows[0].iter().enumerate() {
            let noise: f64 = (1..4).map(|e| rows[e][loc]).sum();
            let score = rows[0][loc] - noise;
            if score > best.1 {
                best = (loc, score);
            }
        }
        let t = classify(&m, &no_suppress()).unwrap();
        assert_eq!(t.entries[0].location, page(best.0 as u64));
        assert!((t.entries[0].score - best.1).abs() < 1e-12);
    }

    #[test]
    fn events_sharing_a_page_merge_into_a_group() {
        let events = [key("A"), key("B"), key("C"), EventId::idle()];
        let m = matrix(
            &events,
            &[5, 9],
            &[
                &[0.90, 0.00],
                &[0.90, 0.00],
                &[0.00, 0.95],
                &[0.05, 0.00],
            ],
        );
        let t = classify(&m, &no_suppress()).unwrap();
        assert_eq!(t.entries.len(), 2);
        let g: Vec<&str> = t.entries[0].events.iter().map(|e| e.as_str()).collect();
        assert_eq!(g, vec!["A", "B"]);
        assert_eq!(t.entries[0].location, page(5));
        // group score: weakest member 0.9 minus outside noise 0.05
        assert!((t.entries[0].score - 0.85).abs() < 1e-12);
        assert_eq!(t.entries[1].events, vec![key("C")]);
        assert!(t.unclassified.is_empty());
    }

    #[test]
    fn noise_floor_gates_acceptance() {
        // A's only signal sits on a page the idle baseline also hits hard.
        let events = [key("A"), EventId::idle()];
        let m = matrix(&events, &[0], &[&[0.95], &[0.50]]);
        let t = classify(&m, &no_suppress()).unwrap();
        // score 0.45 < floor max(0.5, 0.5 + 0.1)
        assert!(t.entries.is_empty());
        assert_eq!(t.unclassified, vec![key("A")]);
        assert!(!t.warnings.is_empty());

        // Without idle gating the absolute floor still applies.
        let m2 = matrix(&events, &[0], &[&[0.95], &[0.10]]);
        let gated = classify(&m2, &no_suppress()).unwrap();
        // 0.95 - 0.1 = 0.85 >= max(0.5, 0.2): accepted
        assert_eq!(gated.entries.len(), 1);
    }

    #[test]
    fn max_group_size_one_disables_merging() {
        let events = [key("A"), key("B"), EventId::idle()];
        let m = matrix(&events, &[5], &[&[0.90], &[0.90], &[0.00]]);
        let cfg = ClassifierConfig {
            max_group_size: Some(1),
            ..no_suppress()
        };
        let t = classify(&m, &cfg).unwrap();
        assert!(t.entries.is_empty());
        assert_eq!(t.unclassified, vec![key("A"), key("B")]);
    }

    #[test]
    fn failed_driver_can_still_join_a_later_group() {
        // A fires on p (with C) and q (with B); p carries heavy idle noise.
        // A alone fails everywhere, A+C fails on p (idle floor), but B pulls
        // A into a clean group on q. C ends up unclassifiable.
        let events = [key("A"), key("B"), key("C"), EventId::idle()];
        let m = matrix(
            &events,
            &[0, 1], // p, q
            &[
                &[0.90, 0.90], // A
                &[0.00, 0.90], // B
                &[0.90, 0.00], // C
                &[0.60, 0.00], // idle
            ],
        );
        let cfg = ClassifierConfig {
            max_group_size: Some(2),
            ..no_suppress()
        };
        let t = classify(&m, &cfg).unwrap();
        assert_eq!(t.entries.len(), 1);
        assert_eq!(t.entries[0].events, vec![key("A"), key("B")]);
        assert_eq!(t.entries[0].location, page(1));
        assert!((t.entries[0].score - 0.9).abs() < 1e-12);
        // A is classified (inside B's group) — only C is left over.
        assert_eq!(t.unclassified, vec![key("C")]);
    }

    #[test]
    fn idle_row_is_required_only_when_gating() {
        let events = [key("A")];
        let m = matrix(&events, &[0], &[&[0.9]]);
        assert!(matches!(
            classify(&m, &no_suppress()),
            Err(ClassifierError::MissingIdleRow)
        ));
        let cfg = ClassifierConfig {
            idle_gating: false,
            ..no_suppress()
        };
        assert_eq!(classify(&m, &cfg).unwrap().entries.len(), 1);
    }

    #[test]
    fn idle_only_matrix_is_rejected() {
        let m = matrix(&[EventId::idle()], &[0], &[&[0.0]]);
        assert!(matches!(classify(&m, &no_suppress()), Err(ClassifierError::NoKeys)));
    }

    #[test]
    fn ties_resolve_to_the_lower_offset() {
        let events = [key("A"), EventId::idle()];
        let m = matrix(&events, &[3, 7], &[&[0.9, 0.9], &[0.0, 0.0]]);
        let t = classify(&m, &no_suppress()).unwrap();
        assert_eq!(t.entries[0].location, page(3));
    }

    #[test]
    fn suppression_lists_exclude_watched_pages() {
        let events = [key("A"), key("B"), EventId::idle()];
        let m = matrix(
            &events,
            &[100, 110],
            &[&[0.95, 0.00], &[0.00, 0.95], &[0.00, 0.00]],
        );
        let cfg = ClassifierConfig::default(); // read-around enabled
        let t = classify(&m, &cfg).unwrap();
        let a = &t.entries[0];
        assert_eq!(a.location, page(100));
        let sup_pages: Vec<u64> = a.suppress.iter().map(|l| l.offset / 4096).collect();
        // every page that can fault onto 100 ([85..116]) minus both watched
        // pages (100, 110)
        assert_eq!(sup_pages.len(), 30);
        assert!(!sup_pages.contains(&100));
        assert!(!sup_pages.contains(&110));
        assert!(sup_pages.contains(&85));
        assert!(sup_pages.contains(&116));
        let b = &t.entries[1];
        let sup_b: Vec<u64> = b.suppress.iter().map(|l| l.offset / 4096).collect();
        assert!((95..=126).filter(|p| sup_b.contains(p)).count() == 30);
    }

    #[test]
    fn classification_is_deterministic() {
        let events = [key("A"), key("B"), key("C"), EventId::idle()];
        let m = matrix(
            &events,
            &[0, 1, 2],
            &[
                &[0.90, 0.10, 0.00],
                &[0.90, 0.00, 0.10],
                &[0.00, 0.85, 0.05],
                &[0.05, 0.05, 0.05],
            ],
        );
        let a = classify(&m, &no_suppress()).unwrap();
        let b = classify(&m, &no_suppress()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn filter_merges_same_page_entries() {
        // Two entries forced onto the same page via separate classification
        // runs would violate disjointness, so build the template by hand.
        let events = [key("A"), key("B"), EventId::idle()];
        let m = matrix(&events, &[50], &[&[0.90], &[0.85], &[0.00]]);
        let t = ClassifiedTemplate::new(vec![
            TemplateEntry::new(vec![key("A")], page(50), 0.9),
            TemplateEntry::new(vec![key("B")], page(50), 0.85),
        ]);
        let f = filter_readaround(&t, &m, &ReadaroundModel::default()).unwrap();
        assert_eq!(f.entries.len(), 1);
        assert_eq!(f.entries[0].events, vec![key("A"), key("B")]);
        // recomputed group score: weakest 0.85 minus nothing outside
        assert!((f.entries[0].score - 0.85).abs() < 1e-12);
        assert!(f.warnings.iter().any(|w| w.contains("indistinguishable")));

        let disabled = filter_readaround(&t, &m, &ReadaroundModel::disabled()).unwrap();
        assert_eq!(disabled.entries.len(), 2);
    }

    #[test]
    fn filter_records_unique_boundary_pages() {
        let events = [key("A"), key("B"), EventId::idle()];
        let m = matrix(
            &events,
            &[100, 110],
            &[&[0.95, 0.00], &[0.00, 0.95], &[0.00, 0.00]],
        );
        let t = classify(&m, &ClassifierConfig::default()).unwrap();
        let f = filter_readaround(&t, &m, &ReadaroundModel::default()).unwrap();
        assert_eq!(f.entries.len(), 2);
        // A's window [84,115] vs B's [94,125]: only 84 is A's alone, only 125 B's.
        let da: Vec<u64> = f.entries[0].distinguishers.iter().map(|l| l.offset / 4096).collect();
        let db: Vec<u64> = f.entries[1].distinguishers.iter().map(|l| l.offset / 4096).collect();
        assert_eq!(da, vec![84]);
        assert_eq!(db, vec![125]);
        assert!(f.warnings.iter().any(|w| w.contains("boundary")));
    }

    #[test]
    fn filter_leaves_distant_entries_alone() {
        let events = [key("A"), key("B"), EventId::idle()];
        let m = matrix(
            &events,
            &[100, 500],
            &[&[0.95, 0.00], &[0.00, 0.95], &[0.00, 0.00]],
        );
        let t = classify(&m, &ClassifierConfig::default()).unwrap();
        let f = filter_readaround(&t, &m, &ReadaroundModel::default()).unwrap();
        assert_eq!(f.entries.len(), 2);
        assert!(f.entries.iter().all(|e| e.distinguishers.is_empty()));
    }

    #[test]
    fn filter_warns_about_line_entries_sharing_a_page() {
        let events = [key("A"), key("B"), EventId::idle()];
        let m = matrix(&events, &[0], &[&[0.9], &[0.9], &[0.0]]);
        let line = |off: u64| Location::enclosing("app", off, Granularity::LINE);
        let t = ClassifiedTemplate::new(vec![
            TemplateEntry::new(vec![key("A")], line(128), 0.9),
            TemplateEntry::new(vec![key("B")], line(256), 0.9),
        ]);
        let f = filter_readaround(&t, &m, &ReadaroundModel::default()).unwrap();
        assert_eq!(f.entries.len(), 2, "line entries are never merged");
        assert!(f
            .warnings
            .iter()
            .any(|w| w.contains("line-granularity")));
    }
}
