//! Hit-ratio matrix: per (event, location) hit counts out of the samples
//! actually taken. Ratios stay exact `hits/samples` pairs internally; they
//! only become decimals when scored or rendered.

use serde::{Deserialize, Serialize};

use crate::probes::Presence;
use crate::types::{EventId, Location};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MatrixError {
    #[error("event {0} is not a row of this matrix")]
    UnknownEvent(String),
    #[error("location {0} is not a column of this matrix")]
    UnknownLocation(String),
    #[error("matrix must have at least one event and one location")]
    Empty,
    #[error("cell ({event}, {location}) claims {hits} hits out of {samples} samples")]
    CountsOutOfRange {
        event: String,
        location: String,
        hits: u32,
        samples: u32,
    },
    #[error("duplicate {0} in header")]
    Duplicate(String),
}

/// One campaign layer's observations. Rows are events (the idle baseline is
/// an ordinary row), columns are probed locations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitRatioMatrix {
    events: Vec<EventId>,
    locations: Vec<Location>,
    /// Samples the campaign *intended* per cell; cells can hold fewer when a
    /// probe returned unknown or a layer was cut short.
    nominal_samples: u32,
    /// Row-major `events.len() * locations.len()`.
    hits: Vec<u32>,
    samples: Vec<u32>,
}

impl HitRatioMatrix {
    pub fn from_counts(
        events: Vec<EventId>,
        locations: Vec<Location>,
        nominal_samples: u32,
        hits: Vec<u32>,
        samples: Vec<u32>,
    ) -> Result<Self, MatrixError> {
        if events.is_empty() || locations.is_empty() {
            return Err(MatrixError::Empty);
        }
        for (name, dup) in [
            ("event", has_dup(&events)),
            ("location", has_dup(&locations)),
        ] {
            if dup {
                return Err(MatrixError::Duplicate(name.into()));
            }
        }
        let cells = events.len() * locations.len();
        assert_eq!(hits.len(), cells, "hit vector shape");
        assert_eq!(samples.len(), cells, "sample vector shape");
        let m = HitRatioMatrix {
            events,
            locations,
            nominal_samples,
            hits,
            samples,
        };
        for (ei, e) in m.events.iter().enumerate() {
            for (li, l) in m.locations.iter().enumerate() {
                let (h, s) = (m.hits[m.cell(ei, li)], m.samples[m.cell(ei, li)]);
                if h > s || s > m.nominal_samples {
                    return Err(MatrixError::CountsOutOfRange {
                        event: e.to_string(),
                        location: l.to_string(),
                        hits: h,
                        samples: s,
                    });
                }
            }
        }
        Ok(m)
    }

    fn cell(&self, event: usize, location: usize) -> usize {
        event * self.locations.len() + location
    }

    pub fn events(&self) -> &[EventId] {
        &self.events
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn nominal_samples(&self) -> u32 {
        self.nominal_samples
    }

    pub fn event_index(&self, event: &EventId) -> Option<usize> {
        self.events.iter().position(|e| e == event)
    }

    pub fn location_index(&self, location: &Location) -> Option<usize> {
        self.locations.iter().position(|l| l == location)
    }

    pub fn counts(&self, event: usize, location: usize) -> (u32, u32) {
        let c = self.cell(event, location);
        (self.hits[c], self.samples[c])
    }

    /// Hit fraction of one cell; a cell with no usable samples reads as 0.
    pub fn ratio(&self, event: usize, location: usize) -> f64 {
        let (h, s) = self.counts(event, location);
        if s == 0 {
            0.0
        } else {
            f64::from(h) / f64::from(s)
        }
    }

    fn idle_index(&self) -> Option<usize> {
        self.events.iter().position(|e| e.is_idle())
    }

    /// Per-location score of `event`: its own hit ratio minus the summed
    /// ratios of every other row (idle included). High only where the event
    /// fires and nothing else does.
    pub fn row_minus_noise(&self, event: &EventId) -> Result<Vec<f64>, MatrixError> {
        let ei = self
            .event_index(event)
            .ok_or_else(|| MatrixError::UnknownEvent(event.to_string()))?;
        Ok((0..self.locations.len())
            .map(|li| {
                let noise: f64 = (0..self.events.len())
                    .filter(|&e| e != ei)
                    .map(|e| self.ratio(e, li))
                    .sum();
                self.ratio(ei, li) - noise
            })
            .collect())
    }

    /// Locations whose best non-idle hit ratio reaches `theta`. The idle row
    /// never gates survival; it only feeds scoring.
    pub fn survivors(&self, theta: f64) -> Vec<Location> {
        let idle = self.idle_index();
        self.locations
            .iter()
            .enumerate()
            .filter(|(li, _)| {
                self.events
                    .iter()
                    .enumerate()
                    .filter(|(ei, _)| Some(*ei) != idle)
                    .any(|(ei, _)| self.ratio(ei, *li) >= theta)
            })
            .map(|(_, l)| l.clone())
            .collect()
    }
}

fn has_dup<T: PartialEq>(xs: &[T]) -> bool {
    xs.iter()
        .enumerate()
        .any(|(i, x)| xs[..i].contains(x))
}

/// Accumulates observations while a layer runs; tolerates aborting mid-layer
/// (whatever was recorded stands, the rest stays at zero samples).
pub struct MatrixBuilder {
    matrix: HitRatioMatrix,
}

impl MatrixBuilder {
    pub fn new(events: Vec<EventId>, locations: Vec<Location>, nominal_samples: u32) -> Result<Self, MatrixError> {
        let cells = events.len() * locations.len();
        if cells == 0 {
            return Err(MatrixError::Empty);
        }
        Ok(MatrixBuilder {
            matrix: HitRatioMatrix::from_counts(
                events,
                locations,
                nominal_samples,
                vec![0; cells],
                vec![0; cells],
            )?,
        })
    }

    pub fn locations(&self) -> &[Location] {
        self.matrix.locations()
    }

    /// Records one sample of `event` over all columns. `presence[i]` belongs
    /// to column i. Unknown readings leave the cell's sample count alone so
    /// they cannot dilute the ratio.
    pub fn record(&mut self, event: &EventId, presence: &[Presence]) -> Result<(), MatrixError> {
        let ei = self
            .matrix
            .event_index(event)
            .ok_or_else(|| MatrixError::UnknownEvent(event.to_string()))?;
        assert_eq!(presence.len(), self.matrix.locations.len(), "presence vector shape");
        for (li, p) in presence.iter().enumerate() {
            let c = self.matrix.cell(ei, li);
            match p {
                Presence::Present => {
                    self.matrix.hits[c] += 1;
                    self.matrix.samples[c] += 1;
                }
                Presence::Idle => self.matrix.samples[c] += 1,
                Presence::Unknown => {}
            }
        }
        Ok(())
    }

    pub fn finish(self) -> HitRatioMatrix {
        self.matrix
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Granularity;

    fn loc(off: u64) -> Location {
        Location::enclosing("lib", off, Granularity::PAGE_4K)
    }

    fn ev(n: &str) -> EventId {
        EventId::new(n).unwrap()
    }

    fn matrix_3x2() -> HitRatioMatrix {
        // rows: a, b, IDLE; columns: page 0, page 4096
        // ratios: a = [0.9, 0.0], b = [0.1, 1.0], idle = [0.2, 0.0]
        HitRatioMatrix::from_counts(
            vec![ev("a"), ev("b"), EventId::idle()],
            vec![loc(0), loc(4096)],
            10,
            vec![9, 0, 1, 10, 2, 0],
            vec![10; 6],
        )
        .unwrap()
    }

    #[test]
    fn ratio_is_exact_and_zero_when_unsampled() {
        let m = HitRatioMatrix::from_counts(
            vec![ev("a")],
            vec![loc(0), loc(4096)],
            20,
            vec![5, 0],
            vec![15, 0],
        )
        .unwrap();
        assert_eq!(m.ratio(0, 0), 5.0 / 15.0);
        assert_eq!(m.ratio(0, 1), 0.0);
    }

    #[test]
    fn row_minus_noise_hand_checked() {
        let m = matrix_3x2();
        // a at page0: 0.9 - (0.1 + 0.2) = 0.6; at page1: 0.0 - 1.0 = -1.0
        let scores = m.row_minus_noise(&ev("a")).unwrap();
        assert!((scores[0] - 0.6).abs() < 1e-12);
        assert!((scores[1] + 1.0).abs() < 1e-12);
        // idle row scores too (it is an ordinary row): 0.2 - (0.9 + 0.1) = -0.8
        let idle = m.row_minus_noise(&EventId::idle()).unwrap();
        assert!((idle[0] + 0.8).abs() < 1e-12);
        assert!(m.row_minus_noise(&ev("zzz")).is_err());
    }

    #[test]
    fn survivors_ignore_the_idle_row() {
        // Only idle fires on page0; only b reaches theta on page1.
        let m = HitRatioMatrix::from_counts(
            vec![ev("b"), EventId::idle()],
            vec![loc(0), loc(4096)],
            10,
            vec![0, 8, 9, 0],
            vec![10; 4],
        )
        .unwrap();
        assert_eq!(m.survivors(0.5), vec![loc(4096)]);
        // threshold is inclusive
        assert_eq!(m.survivors(0.8), vec![loc(4096)]);
        assert_eq!(m.survivors(0.81), Vec::<Location>::new());
    }

    #[test]
    fn builder_accumulates_and_skips_unknown() {
        let mut b = MatrixBuilder::new(vec![ev("a")], vec![loc(0), loc(4096)], 3).unwrap();
        b.record(&ev("a"), &[Presence::Present, Presence::Unknown]).unwrap();
        b.record(&ev("a"), &[Presence::Idle, Presence::Present]).unwrap();
        let m = b.finish();
        assert_eq!(m.counts(0, 0), (1, 2));
        assert_eq!(m.counts(0, 1), (1, 1));
        assert_eq!(m.nominal_samples(), 3);
    }

    #[test]
    fn from_counts_validates_shape_and_ranges() {
        assert!(HitRatioMatrix::from_counts(vec![], vec![loc(0)], 1, vec![], vec![]).is_err());
        let r = HitRatioMatrix::from_counts(
            vec![ev("a")],
            vec![loc(0)],
            5,
            vec![6],
            vec![5],
        );
        assert!(matches!(r, Err(MatrixError::CountsOutOfRange { .. })));
        let dup = HitRatioMatrix::from_counts(
            vec![ev("a"), ev("a")],
            vec![loc(0)],
            5,
            vec![0, 0],
            vec![0, 0],
        );
        assert!(matches!(dup, Err(MatrixError::Duplicate(_))));
    }
}
