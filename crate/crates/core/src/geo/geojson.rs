//! GeoJSON ingestion and export for field layers.
//!
//! A field is a `FeatureCollection` of Polygon features. The `role` property
//! selects the layer: `roi` (exactly one; an untagged polygon is taken as the
//! ROI when no feature is tagged `roi`), `nofly`, `priority` (with `spacing`
//! and `rank`) or `truth` (with `class`). An optional top-level
//! `"origin": [lon, lat]` member fixes the projection origin; otherwise the
//! south-west corner of the ROI bounding box is used.

use geojson::{Feature, FeatureCollection, GeoJson, Geometry, JsonObject, Value};
use thiserror::Error;

use super::{project, unproject, GeoError, GeoPoint, LocalPoint, Polygon};

#[derive(Debug, Error)]
pub enum GeoJsonError {
    #[error("invalid GeoJSON: {0}")]
    Parse(String),
    #[error("expected a FeatureCollection")]
    NotACollection,
    #[error("feature {index}: {reason}")]
    BadFeature { index: usize, reason: String },
    #[error("no ROI polygon found")]
    MissingRoi,
    #[error("more than one ROI polygon")]
    MultipleRoi,
    #[error(transparent)]
    Geo(#[from] GeoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Roi,
    NoFly,
    Priority,
    Truth,
}

/// One polygon ring in WGS84 plus its feature properties.
#[derive(Debug, Clone)]
pub struct TaggedRing {
    pub ring: Vec<GeoPoint>,
    pub properties: JsonObject,
}

/// Field layers as read from GeoJSON, still in geographic coordinates.
#[derive(Debug, Clone)]
pub struct FieldLayers {
    pub origin: GeoPoint,
    pub roi: Vec<GeoPoint>,
    pub nofly: Vec<TaggedRing>,
    pub priority: Vec<TaggedRing>,
    pub truth: Vec<TaggedRing>,
}

impl FieldLayers {
    pub fn parse(text: &str) -> Result<Self, GeoJsonError> {
        let gj: GeoJson = text
            .parse()
            .map_err(|e: geojson::Error| GeoJsonError::Parse(e.to_string()))?;
        match gj {
            GeoJson::FeatureCollection(fc) => Self::from_collection(&fc),
            _ => Err(GeoJsonError::NotACollection),
        }
    }

    pub fn from_collection(fc: &FeatureCollection) -> Result<Self, GeoJsonError> {
        let mut roi: Option<Vec<GeoPoint>> = None;
        let mut untagged: Vec<Vec<GeoPoint>> = Vec::new();
        let mut nofly = Vec::new();
        let mut priority = Vec::new();
        let mut truth = Vec::new();

        for (index, feature) in fc.features.iter().enumerate() {
            let bad = |reason: String| GeoJsonError::BadFeature { index, reason };
            let ring = polygon_ring(feature).map_err(bad)?;
            let properties = feature.properties.clone().unwrap_or_default();
            let role = match properties.get("role").and_then(|v| v.as_str()) {
                None => None,
                Some("roi") => Some(Role::Roi),
                Some("nofly") => Some(Role::NoFly),
                Some("priority") => Some(Role::Priority),
                Some("truth") => Some(Role::Truth),
                Some(other) => return Err(bad(format!("unknown role {other:?}"))),
            };
            match role {
                Some(Role::Roi) => {
                    if roi.replace(ring).is_some() {
                        return Err(GeoJsonError::MultipleRoi);
                    }
                }
                None => untagged.push(ring),
                Some(Role::NoFly) => nofly.push(TaggedRing { ring, properties }),
                Some(Role::Priority) => priority.push(TaggedRing { ring, properties }),
                Some(Role::Truth) => truth.push(TaggedRing { ring, properties }),
            }
        }
        let roi = match roi {
            Some(r) => r,
            None => {
                if untagged.len() > 1 {
                    return Err(GeoJsonError::MultipleRoi);
                }
                untagged.pop().ok_or(GeoJsonError::MissingRoi)?
            }
        };

        let origin = match fc.foreign_members.as_ref().and_then(|m| m.get("origin")) {
            Some(v) => {
                let pos: Vec<f64> =
                    serde_json::from_value(v.clone()).map_err(|e| GeoJsonError::Parse(format!("origin: {e}")))?;
                if pos.len() < 2 {
                    return Err(GeoJsonError::Parse("origin needs [lon, lat]".into()));
                }
                GeoPoint::new(pos[1], pos[0])?
            }
            None => {
                let lat = roi.iter().map(|p| p.lat).fold(f64::INFINITY, f64::min);
                let lon = roi.iter().map(|p| p.lon).fold(f64::INFINITY, f64::min);
                GeoPoint::new(lat, lon)?
            }
        };

        Ok(FieldLayers {
            origin,
            roi,
            nofly,
            priority,
            truth,
        })
    }

    /// Projects a ring into the local plane of this field's origin.
    pub fn local_polygon(&self, ring: &[GeoPoint]) -> Result<Polygon, GeoError> {
        let pts = ring
            .iter()
            .map(|g| project(self.origin, *g))
            .collect::<Result<Vec<_>, _>>()?;
        Polygon::new(pts)
    }

    pub fn local_roi(&self) -> Result<Polygon, GeoError> {
        self.local_polygon(&self.roi)
    }
}

fn polygon_ring(feature: &Feature) -> Result<Vec<GeoPoint>, String> {
    let geometry = feature.geometry.as_ref().ok_or("feature has no geometry")?;
    let rings = match &geometry.value {
        Value::Polygon(rings) => rings,
        other => return Err(format!("expected Polygon geometry, got {}", other.type_name())),
    };
    let outer = rings.first().ok_or("polygon has no rings")?;
    if rings.len() > 1 {
        return Err("polygon holes are not supported; tag interior areas as nofly".into());
    }
    outer
        .iter()
        .map(|pos| {
            if pos.len() < 2 {
                return Err("position needs [lon, lat]".to_string());
            }
            GeoPoint::new(pos[1], pos[0]).map_err(|e| e.to_string())
        })
        .collect()
}

/// Builds a closed GeoJSON Polygon feature from a local ring.
pub fn polygon_feature(origin: GeoPoint, poly: &Polygon, properties: JsonObject) -> Feature {
    let mut ring: Vec<Vec<f64>> = poly
        .vertices()
        .iter()
        .map(|p| {
            let g = unproject(origin, *p);
            vec![g.lon, g.lat]
        })
        .collect();
    ring.push(ring[0].clone());
    Feature {
        bbox: None,
        geometry: Some(Geometry::new(Value::Polygon(vec![ring]))),
        id: None,
        properties: Some(properties),
        foreign_members: None,
    }
}

/// Builds a GeoJSON LineString feature from a local path.
pub fn linestring_feature(origin: GeoPoint, path: &[LocalPoint], properties: JsonObject) -> Feature {
    let coords = path
        .iter()
        .map(|p| {
            let g = unproject(origin, *p);
            vec![g.lon, g.lat]
        })
        .collect();
    Feature {
        bbox: None,
        geometry: Some(Geometry::new(Value::LineString(coords))),
        id: None,
        properties: Some(properties),
        foreign_members: None,
    }
}

/// Assembles a field collection from local polygons, with an explicit origin.
pub fn field_collection(origin: GeoPoint, features: Vec<Feature>) -> FeatureCollection {
    let mut members = JsonObject::new();
    members.insert("origin".into(), serde_json::json!([origin.lon, origin.lat]));
    FeatureCollection {
        bbox: None,
        features,
        foreign_members: Some(members),
    }
}

/// Convenience for building feature properties from a `json!` object.
pub fn props(value: serde_json::Value) -> JsonObject {
    match value {
        serde_json::Value::Object(m) => m,
        _ => JsonObject::new(),
    }
}
