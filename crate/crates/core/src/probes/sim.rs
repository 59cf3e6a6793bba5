//! Trace-driven simulator backend.
//!
//! State is a set of "active" windows per source at the backend granularity.
//! `trigger` replays the event's traced accesses (plus optional seeded
//! jitter); at page granularity it also applies the read-around model the
//! trace declares: an access to a page that was not pre-touched drags the
//! whole fault window in, exactly like a major fault on a cold file page.
//! Coarser and finer granularities see only the direct accesses — a 64 B
//! probe never observes readahead (the prefetched lines are not loaded into
//! the cache), and a 2 MiB probe already absorbs the window into one unit.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::probes::{Capabilities, Presence, ProbeBackend, ProbeError};
use crate::trace::{AccessTrace, ScheduleEntry};
use crate::types::{EventId, Granularity, Location, SourceId};

pub struct SimBackend {
    granularity: Granularity,
    trace: Arc<AccessTrace>,
    rng: ChaCha8Rng,
    /// Aligned offsets with activity since their last reset, per source.
    active: HashMap<SourceId, BTreeSet<u64>>,
    /// Page indices we (the attacker) touched: faults there are silent, so no
    /// read-around springs from them.
    touched: HashMap<SourceId, BTreeSet<u64>>,
    /// Replay plan from the trace; entries fire during `check` when their
    /// round comes up.
    schedule: Vec<ScheduleEntry>,
    next_scheduled: usize,
    round: u64,
    destructive: bool,
    ops: OpCounts,
}

/// Backend-side tally of primitive operations, for cost accounting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub resets: u64,
    pub triggers: u64,
    pub checks: u64,
    /// Total locations across all `check` calls — the probe count that cost
    /// models talk about.
    pub locations_checked: u64,
}

impl SimBackend {
    pub fn new(trace: Arc<AccessTrace>, granularity: Granularity, seed: u64) -> Self {
        let schedule = trace.schedule.clone();
        SimBackend {
            granularity,
            trace,
            rng: ChaCha8Rng::seed_from_u64(seed),
            active: HashMap::new(),
            touched: HashMap::new(),
            schedule,
            next_scheduled: 0,
            round: 0,
            destructive: false,
            ops: OpCounts::default(),
        }
    }

    /// Emulate a channel whose read consumes the signal (the templater and
    /// monitor must behave identically either way, since they reset after
    /// every check).
    pub fn destructive(mut self, yes: bool) -> Self {
        self.destructive = yes;
        self
    }

    pub fn ops(&self) -> OpCounts {
        self.ops
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    fn expect_granularity(&self, locs: &[Location]) -> Result<(), ProbeError> {
        for l in locs {
            if l.granularity != self.granularity {
                return Err(ProbeError::WrongGranularity {
                    expected: self.granularity,
                    got: l.granularity,
                });
            }
        }
        Ok(())
    }

    fn is_active(&self, loc: &Location) -> bool {
        self.active
            .get(&loc.source)
            .is_some_and(|s| s.contains(&loc.offset))
    }

    fn was_touched(&self, source: &str, page: u64) -> bool {
        self.touched.get(source).is_some_and(|s| s.contains(&page))
    }

    fn mark_active(&mut self, source: &str, aligned_offset: u64) {
        self.active
            .entry(source.to_string())
            .or_default()
            .insert(aligned_offset);
    }

    fn apply_access(&mut self, source: &str, byte_offset: u64) {
        self.mark_active(source, self.granularity.align_down(byte_offset));
        let ra = self.trace.readaround;
        if self.granularity == Granularity::PAGE_4K && ra.enabled {
            let page = byte_offset / 4096;
            if !self.was_touched(source, page) {
                for q in ra.window(page) {
                    if self.trace.regions.intersects(source, q * 4096, 4096) {
                        self.mark_active(source, q * 4096);
                    }
                }
            }
        }
    }

    fn fire(&mut self, event: &EventId) -> Result<(), ProbeError> {
        self.ops.triggers += 1;
        let et = match self.trace.event(event) {
            Some(et) => et.clone(),
            // An idle trigger with no trace entry is a legitimate no-op: the
            // baseline row works on any trace.
            None if event.is_idle() => return Ok(()),
            None => return Err(ProbeError::UnknownEvent(event.clone())),
        };
        for a in &et.accesses {
            self.apply_access(&a.source, a.offset);
        }
        if et.jitter > 0.0 && self.rng.gen::<f64>() < et.jitter {
            let (source, offset) = self.random_in_region_byte();
            self.apply_access(&source, offset);
        }
        Ok(())
    }

    /// A byte chosen uniformly over all region bytes, for spurious accesses.
    fn random_in_region_byte(&mut self) -> (SourceId, u64) {
        let total = self.trace.regions.total_bytes();
        let mut pick = self.rng.gen_range(0..total);
        for r in self.trace.regions.iter() {
            if pick < r.length {
                return (r.source.clone(), r.offset + pick);
            }
            pick -= r.length;
        }
        unreachable!("pick inside total_bytes")
    }
}

impl ProbeBackend for SimBackend {
    fn id(&self) -> &'static str {
        "sim"
    }

    fn granularity(&self) -> Granularity {
        self.granularity
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            destructive_read: self.destructive,
            needs_privilege: false,
        }
    }

    fn reset(&mut self, locations: &[Location]) -> Result<(), ProbeError> {
        self.expect_granularity(locations)?;
        self.ops.resets += 1;
        for l in locations {
            if let Some(s) = self.active.get_mut(&l.source) {
                s.remove(&l.offset);
            }
        }
        Ok(())
    }

    fn trigger(&mut self, event: &EventId) -> Result<(), ProbeError> {
        self.fire(event)
    }

    fn check(&mut self, locations: &[Location]) -> Result<Vec<Presence>, ProbeError> {
        self.expect_granularity(locations)?;
        // Scheduled events fire before the reading of their round, so a
        // monitor checking round N observes everything scheduled at N.
        while self.next_scheduled < self.schedule.len()
            && self.schedule[self.next_scheduled].round <= self.round
        {
            let ev = self.schedule[self.next_scheduled].event.clone();
            self.next_scheduled += 1;
            self.fire(&ev)?;
        }
        self.ops.checks += 1;
        self.ops.locations_checked += locations.len() as u64;
        let mut out = Vec::with_capacity(locations.len());
        for l in locations {
            out.push(if self.is_active(l) {
                Presence::Present
            } else {
                Presence::Idle
            });
            if self.destructive {
                if let Some(s) = self.active.get_mut(&l.source) {
                    s.remove(&l.offset);
                }
            }
        }
        self.round += 1;
        Ok(out)
    }

    fn touch(&mut self, locations: &[Location]) -> Result<(), ProbeError> {
        self.expect_granularity(locations)?;
        for l in locations {
            self.mark_active(&l.source, l.offset);
            if self.granularity == Granularity::PAGE_4K {
                self.touched
                    .entry(l.source.clone())
                    .or_default()
                    .insert(l.offset / 4096);
            }
        }
        Ok(())
    }
}
