//! The layered templating campaign.
//!
//! Per layer: warm every key up once, then for each of N repetitions visit
//! the events in a fresh random order, doing reset → trigger → check over all
//! candidate locations and recording hits. Locations whose best non-idle hit
//! ratio reaches the layer's threshold survive and are subdivided for the
//! next, finer layer. Coarse layers are cheap because the location count is
//! tiny; the expensive fine granularities only ever see the survivors'
//! children, which is where the entire speedup over a flat fine-grained sweep
//! comes from.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::matrix::{HitRatioMatrix, MatrixBuilder};
use crate::probes::{ProbeBackend, ProbeError};
use crate::types::{validate_ladder, EventId, Granularity, Location, RegionSet, TypeError};

#[derive(Debug, thiserror::Error)]
pub enum TemplaterError {
    #[error("campaign needs at least one key event")]
    NoKeys,
    #[error("duplicate key {0}")]
    DuplicateKey(EventId),
    #[error("key {0} is the reserved idle baseline")]
    IdleKey(EventId),
    #[error("samples_per_key must be at least 1")]
    NoSamples,
    #[error("pass threshold {0} is outside (0, 1]")]
    BadThreshold(f64),
    #[error("{got} per-layer thresholds for {layers} layers")]
    ThresholdCount { got: usize, layers: usize },
    #[error("no probeable regions")]
    NoRegions,
    #[error(transparent)]
    Ladder(#[from] TypeError),
    #[error("creating {granularity} backend: {error}")]
    Backend {
        granularity: Granularity,
        error: ProbeError,
    },
}

/// Pass threshold θ: one value for every layer, or one per layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaSpec {
    Uniform(f64),
    PerLayer(Vec<f64>),
}

impl Default for ThetaSpec {
    fn default() -> Self {
        ThetaSpec::Uniform(0.5)
    }
}

impl ThetaSpec {
    pub fn for_layer(&self, layer: usize) -> f64 {
        match self {
            ThetaSpec::Uniform(t) => *t,
            ThetaSpec::PerLayer(v) => v[layer],
        }
    }

    fn validate(&self, layers: usize) -> Result<(), TemplaterError> {
        let all = match self {
            ThetaSpec::Uniform(t) => std::slice::from_ref(t),
            ThetaSpec::PerLayer(v) => {
                if v.len() != layers {
                    return Err(TemplaterError::ThresholdCount {
                        got: v.len(),
                        layers,
                    });
                }
                v.as_slice()
            }
        };
        for &t in all {
            if !(t > 0.0 && t <= 1.0) {
                return Err(TemplaterError::BadThreshold(t));
            }
        }
        Ok(())
    }
}

fn default_samples() -> u32 {
    20
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    /// The input events to template (the idle baseline is added separately).
    pub keys: Vec<EventId>,
    /// N: repetitions per event per layer.
    #[serde(default = "default_samples")]
    pub samples_per_key: u32,
    /// Coarse-to-fine granularities.
    pub ladder: Vec<Granularity>,
    #[serde(default)]
    pub pass_threshold: ThetaSpec,
    /// Fire every key once before sampling so one-time initialization work
    /// (lazy loading, JIT warmup) does not masquerade as key-specific
    /// activity.
    #[serde(default = "default_true")]
    pub warmup: bool,
    /// Sample the no-input baseline as its own row.
    #[serde(default = "default_true")]
    pub include_idle: bool,
    #[serde(default)]
    pub rng_seed: u64,
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<(), TemplaterError> {
        if self.keys.is_empty() {
            return Err(TemplaterError::NoKeys);
        }
        for (i, k) in self.keys.iter().enumerate() {
            if k.is_idle() {
                return Err(TemplaterError::IdleKey(k.clone()));
            }
            if self.keys[..i].contains(k) {
                return Err(TemplaterError::DuplicateKey(k.clone()));
            }
        }
        if self.samples_per_key == 0 {
            return Err(TemplaterError::NoSamples);
        }
        validate_ladder(&self.ladder)?;
        self.pass_threshold.validate(self.ladder.len())?;
        Ok(())
    }

    /// The matrix rows: keys plus the idle baseline when enabled.
    pub fn events(&self) -> Vec<EventId> {
        let mut ev = self.keys.clone();
        if self.include_idle {
            ev.push(EventId::idle());
        }
        ev
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerResult {
    pub granularity: Granularity,
    pub theta: f64,
    pub matrix: HitRatioMatrix,
    pub survivors: Vec<Location>,
    /// Locations × events × repetitions actually checked in this layer.
    pub probe_count: u64,
    /// False when a backend failure cut the layer short; partial counts stay.
    pub complete: bool,
}

/// Why a ladder entry never ran.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedLayer {
    pub granularity: Granularity,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interruption {
    pub layer: usize,
    pub granularity: Granularity,
    pub event: Option<EventId>,
    pub repetition: u32,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignRun {
    pub layers: Vec<LayerResult>,
    pub skipped: Vec<SkippedLayer>,
    /// Set when a backend failure aborted the run; everything before it is
    /// intact and the failing layer keeps its partial matrix.
    pub interrupted: Option<Interruption>,
    pub total_probe_count: u64,
}

impl CampaignRun {
    pub fn final_matrix(&self) -> Option<&HitRatioMatrix> {
        self.layers.last().filter(|l| l.complete).map(|l| &l.matrix)
    }
}

/// Runs the whole ladder. `backend_for` supplies a fresh backend per layer
/// (layers probe at different granularities and must not inherit state).
pub fn run_campaign<F>(
    cfg: &CampaignConfig,
    regions: &RegionSet,
    mut backend_for: F,
) -> Result<CampaignRun, TemplaterError>
where
    F: FnMut(Granularity) -> Result<Box<dyn ProbeBackend>, ProbeError>,
{
    cfg.validate()?;
    if regions.is_empty() {
        return Err(TemplaterError::NoRegions);
    }
    let events = cfg.events();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let total_bytes = regions.total_bytes();

    let mut run = CampaignRun {
        layers: Vec::new(),
        skipped: Vec::new(),
        interrupted: None,
        total_probe_count: 0,
    };
    // Survivors of the previously *run* layer; None until the first layer runs.
    let mut survivors: Option<Vec<Location>> = None;

    for (li, &g) in cfg.ladder.iter().enumerate() {
        if g.bytes() > total_bytes {
            run.skipped.push(SkippedLayer {
                granularity: g,
                reason: format!(
                    "window ({} bytes) is coarser than the whole target ({total_bytes} bytes)",
                    g.bytes()
                ),
            });
            continue;
        }
        let locations = match &survivors {
            None => regions.cover(g),
            Some(parents) => {
                let mut out = Vec::new();
                for p in parents {
                    out.extend(p.children(g, regions)?);
                }
                out
            }
        };
        if locations.is_empty() {
            // Nothing survived the previous layer: every remaining layer is
            // empty too, and probing zero locations is not a layer.
            for &rest in &cfg.ladder[li..] {
                run.skipped.push(SkippedLayer {
                    granularity: rest,
                    reason: "no candidate locations (previous layer had no survivors)".into(),
                });
            }
            break;
        }

        let theta = cfg.pass_threshold.for_layer(li);
        let mut backend = match backend_for(g) {
            Ok(b) => b,
            Err(e) => {
                run.interrupted = Some(Interruption {
                    layer: li,
                    granularity: g,
                    event: None,
                    repetition: 0,
                    error: e.to_string(),
                });
                break;
            }
        };

        let mut builder = MatrixBuilder::new(events.clone(), locations.clone(), cfg.samples_per_key)
            .expect("validated events and non-empty locations");
        let mut probe_count = 0u64;
        let mut failure: Option<(Option<EventId>, u32, ProbeError)> = None;

        if cfg.warmup {
            for k in &cfg.keys {
                if let Err(e) = backend.trigger(k) {
                    failure = Some((Some(k.clone()), 0, e));
                    break;
                }
            }
        }

        if failure.is_none() {
            'reps: for rep in 0..cfg.samples_per_key {
                let mut order = events.clone();
                order.shuffle(&mut rng);
                for ev in &order {
                    let presence = (|| {
                        backend.reset(&locations)?;
                        backend.trigger(ev)?;
                        backend.check(&locations)
                    })();
                    match presence {
                        Ok(p) => {
                            builder.record(ev, &p).expect("event is a matrix row");
                            probe_count += locations.len() as u64;
                        }
                        Err(e) => {
                            failure = Some((Some(ev.clone()), rep, e));
                            break 'reps;
                        }
                    }
                }
            }
        }

        let matrix = builder.finish();
        let complete = failure.is_none();
        let layer_survivors = if complete { matrix.survivors(theta) } else { Vec::new() };
        run.total_probe_count += probe_count;
        run.layers.push(LayerResult {
            granularity: g,
            theta,
            matrix,
            survivors: layer_survivors.clone(),
            probe_count,
            complete,
        });
        if let Some((event, repetition, error)) = failure {
            run.interrupted = Some(Interruption {
                layer: li,
                granularity: g,
                event,
                repetition,
                error: error.to_string(),
            });
            break;
        }
        survivors = Some(layer_survivors);
    }
    Ok(run)
}
