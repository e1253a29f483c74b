//! Geotagged records, classification, vegetation index and heatmaps.

mod classify;
mod heatmap;
mod store;

use rand::Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classify::{Classifier, ClassifierSpec, NoisyOracle, OracleClassifier};
pub use heatmap::{build_heatmap, GridSpec, HeatCell, HeatmapDoc, HeatmapGrid};
pub use store::{IngestReport, RecordStore};

use crate::geo::geojson::FieldLayers;
use crate::geo::{contains, GeoPoint, LocalPoint, Polygon};
use crate::UavId;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("degenerate spectrum: nir + red = 0")]
    DegenerateSpectrum,
    #[error("classifier unavailable: {0}")]
    ClassifierUnavailable(String),
    #[error("invalid classifier config: {0}")]
    InvalidClassifier(String),
    #[error("invalid record {id}: {reason}")]
    InvalidRecord { id: u64, reason: String },
    #[error("invalid ground truth: {0}")]
    InvalidTruth(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("record store line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Surface classes, in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Soil,
    Crop,
    Grass,
    BroadleafWeed,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 4] = [
        ClassLabel::Soil,
        ClassLabel::Crop,
        ClassLabel::Grass,
        ClassLabel::BroadleafWeed,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Nominal `(red, nir)` reflectance for synthetic captures.
    pub fn nominal_spectrum(self) -> (f64, f64) {
        match self {
            ClassLabel::Soil => (0.30, 0.35),
            ClassLabel::Crop => (0.08, 0.55),
            ClassLabel::Grass => (0.10, 0.45),
            ClassLabel::BroadleafWeed => (0.12, 0.50),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Spectrum {
    pub red: f64,
    pub nir: f64,
    /// Ground-truth label, known only to the scenario generator and the
    /// oracle classifiers.
    pub true_class: ClassLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ImageRecord {
    pub record_id: u64,
    pub uav_id: UavId,
    pub position: GeoPoint,
    /// Capture point in the scenario's local frame.
    pub local: LocalPoint,
    /// Simulation tick of the capture.
    pub timestamp: u64,
    pub payload: Spectrum,
}

impl ImageRecord {
    pub fn validate(&self) -> Result<(), FieldError> {
        let ok = |v: f64| (0.0..=1.0).contains(&v);
        if !ok(self.payload.red) || !ok(self.payload.nir) {
            return Err(FieldError::InvalidRecord {
                id: self.record_id,
                reason: "reflectance outside [0, 1]".into(),
            });
        }
        if !self.position.is_valid() {
            return Err(FieldError::InvalidRecord {
                id: self.record_id,
                reason: "invalid position".into(),
            });
        }
        Ok(())
    }
}

/// `(nir − red) / (nir + red)`.
pub fn ndvi(red: f64, nir: f64) -> Result<f64, FieldError> {
    let sum = nir + red;
    if sum == 0.0 {
        return Err(FieldError::DegenerateSpectrum);
    }
    Ok((nir - red) / sum)
}

pub fn record_ndvi(record: &ImageRecord) -> Result<f64, FieldError> {
    ndvi(record.payload.red, record.payload.nir)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct TruthRegion {
    pub polygon: Polygon,
    pub class: ClassLabel,
}

/// Ground-truth class map of a scenario field. The first region containing
/// a point decides its class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct FieldTruth {
    #[serde(default)]
    pub regions: Vec<TruthRegion>,
    #[serde(default = "default_class")]
    pub default_class: ClassLabel,
}

fn default_class() -> ClassLabel {
    ClassLabel::Soil
}

impl Default for FieldTruth {
    fn default() -> Self {
        FieldTruth {
            regions: Vec::new(),
            default_class: default_class(),
        }
    }
}

impl FieldTruth {
    /// Reads the `truth` features of a field document. Each needs a `class`
    /// property naming a [`ClassLabel`].
    pub fn from_layers(layers: &FieldLayers) -> Result<Self, FieldError> {
        let mut regions = Vec::new();
        for (i, t) in layers.truth.iter().enumerate() {
            let class = t
                .properties
                .get("class")
                .cloned()
                .ok_or_else(|| FieldError::InvalidTruth(format!("truth feature {i} has no class")))
                .and_then(|v| {
                    serde_json::from_value::<ClassLabel>(v)
                        .map_err(|e| FieldError::InvalidTruth(format!("truth feature {i}: {e}")))
                })?;
            let polygon = layers
                .local_polygon(&t.ring)
                .map_err(|e| FieldError::InvalidTruth(format!("truth feature {i}: {e}")))?;
            regions.push(TruthRegion { polygon, class });
        }
        Ok(FieldTruth {
            regions,
            default_class: default_class(),
        })
    }

    pub fn class_at(&self, p: LocalPoint) -> ClassLabel {
        self.regions
            .iter()
            .find(|r| contains(&r.polygon, p))
            .map_or(self.default_class, |r| r.class)
    }

    /// Synthetic reflectance for a capture at `p`: the class's nominal pair
    /// plus uniform jitter of up to `jitter` on each band.
    pub fn sample<R: Rng>(&self, p: LocalPoint, jitter: f64, rng: &mut R) -> Spectrum {
        let class = self.class_at(p);
        let (red, nir) = class.nominal_spectrum();
        let mut j = || {
            if jitter > 0.0 {
                rng.gen_range(-jitter..=jitter)
            } else {
                0.0
            }
        };
        let red = (red + j()).clamp(0.0, 1.0);
        let nir = (nir + j()).clamp(0.0, 1.0);
        Spectrum {
            red,
            nir,
            true_class: class,
        }
    }
}
