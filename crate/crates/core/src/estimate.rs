//! Campaign cost model: what would a flat fine-grained sweep cost, what does
//! the layered ladder cost, and what speedup does layering buy.
//!
//! The flat baseline is quoted as seconds per MB per key (decimal MB), with
//! the per-location repetitions already folded in. Layer costs can be given
//! three ways, matching how measurements are usually available: per probe,
//! per key, or as a lump sum for the whole layer.

use serde::{Deserialize, Serialize};

use crate::types::Granularity;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostModel {
    /// seconds × locations × keys × samples.
    PerProbe { seconds_per_probe: f64, locations: u64 },
    /// seconds × keys. For costs dominated by per-key overhead (input
    /// injection, settling time) rather than probe volume.
    PerKey { seconds_per_key: f64 },
    /// A measured wall-clock total for the layer.
    Total { seconds: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCostSpec {
    pub granularity: Granularity,
    #[serde(flatten)]
    pub model: CostModel,
}

fn default_samples() -> u32 {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateParams {
    /// Flat-sweep cost: seconds per decimal MB of target, per key.
    pub flat_seconds_per_mb: f64,
    /// Target size in decimal MB.
    pub region_mb: f64,
    pub keys: u32,
    #[serde(default = "default_samples")]
    pub samples_per_key: u32,
    #[serde(rename = "layer", default)]
    pub layers: Vec<LayerCostSpec>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EstimateError {
    #[error("{what} must be finite and non-negative, got {value}")]
    BadValue { what: &'static str, value: f64 },
    #[error("parsing layer spec {spec:?}: {reason}")]
    BadLayerSpec { spec: String, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEstimate {
    pub granularity: Granularity,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub flat_seconds: f64,
    pub layers: Vec<LayerEstimate>,
    pub layered_seconds: f64,
    /// flat / layered; absent when the layered plan costs nothing.
    pub speedup: Option<f64>,
}

pub const SECONDS_PER_DAY: f64 = 86_400.0;

impl Estimate {
    pub fn flat_days(&self) -> f64 {
        self.flat_seconds / SECONDS_PER_DAY
    }

    pub fn layered_hours(&self) -> f64 {
        self.layered_seconds / 3_600.0
    }
}

pub fn estimate_campaign(params: &EstimateParams) -> Result<Estimate, EstimateError> {
    for (what, value) in [
        ("flat_seconds_per_mb", params.flat_seconds_per_mb),
        ("region_mb", params.region_mb),
    ] {
        if !value.is_finite() || value < 0.0 {
            return Err(EstimateError::BadValue { what, value });
        }
    }
    let keys = f64::from(params.keys);
    let flat_seconds = params.flat_seconds_per_mb * params.region_mb * keys;
    let mut layers = Vec::with_capacity(params.layers.len());
    for spec in &params.layers {
        let seconds = match spec.model {
            CostModel::PerProbe {
                seconds_per_probe,
                locations,
            } => {
                check(seconds_per_probe, "seconds_per_probe")?;
                seconds_per_probe * locations as f64 * keys * f64::from(params.samples_per_key)
            }
            CostModel::PerKey { seconds_per_key } => {
                check(seconds_per_key, "seconds_per_key")?;
                seconds_per_key * keys
            }
            CostModel::Total { seconds } => {
                check(seconds, "seconds")?;
                seconds
            }
        };
        layers.push(LayerEstimate {
            granularity: spec.granularity,
            seconds,
        });
    }
    let layered_seconds: f64 = layers.iter().map(|l| l.seconds).sum();
    let speedup = (layered_seconds > 0.0).then(|| flat_seconds / layered_seconds);
    Ok(Estimate {
        flat_seconds,
        layers,
        layered_seconds,
        speedup,
    })
}

fn check(value: f64, what: &'static str) -> Result<(), EstimateError> {
    if !value.is_finite() || value < 0.0 {
        return Err(EstimateError::BadValue { what, value });
    }
    Ok(())
}

/// CLI shorthand for one layer's cost, colon-separated:
/// `GRAN:total:SECONDS`, `GRAN:per-key:SECONDS`, or
/// `GRAN:per-probe:SECONDS:LOCATIONS` (GRAN like `4K`, `2M`, `64`).
pub fn parse_layer_spec(spec: &str) -> Result<LayerCostSpec, EstimateError> {
    let bad = |reason: &str| EstimateError::BadLayerSpec {
        spec: spec.to_string(),
        reason: reason.to_string(),
    };
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() < 3 {
        return Err(bad("expected GRAN:MODE:ARGS"));
    }
    let granularity: Granularity = parts[0].parse().map_err(|e| bad(&format!("{e}")))?;
    let seconds: f64 = parts[2].parse().map_err(|_| bad("seconds must be a number"))?;
    let model = match (parts[1], parts.len()) {
        ("total", 3) => CostModel::Total { seconds },
        ("per-key", 3) => CostModel::PerKey { seconds_per_key: seconds },
        ("per-probe", 4) => CostModel::PerProbe {
            seconds_per_probe: seconds,
            locations: parts[3].parse().map_err(|_| bad("locations must be an integer"))?,
        },
        ("per-probe", _) => return Err(bad("per-probe needs GRAN:per-probe:SECONDS:LOCATIONS")),
        (other, _) => return Err(bad(&format!("unknown mode {other:?}"))),
    };
    Ok(LayerCostSpec { granularity, model })
}
