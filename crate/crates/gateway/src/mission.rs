//! Missions: a stored field plus sweep settings and a fleet.
//!
//! [`plan_document`] is the one place plan bytes are produced, so the CLI
//! `plan` command and `POST /api/missions` write identical files.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use agriswarm_core::agent::{Station, StationKind};
use agriswarm_core::allocator::{
    segment_mission, AllocError, AllocatorConfig, BatteryModel, SegmentExport, Segmentation, SkipReason,
    MIN_THRESHOLD_PCT,
};
use agriswarm_core::coverage::{plan_field, FieldSpec, MissionPlan, SweepConfig};
use agriswarm_core::geo::LocalPoint;
use agriswarm_core::sim::{FaultEvent, Scenario};
use agriswarm_core::UavId;

use crate::error::GatewayError;

/// Plans `field_geojson` and returns the plan and its canonical JSON text.
pub fn plan_document(field_geojson: &str, sweep: &SweepConfig) -> Result<(MissionPlan, String), GatewayError> {
    let field = FieldSpec::from_geojson(field_geojson)?;
    let plan = plan_field(&field, sweep)?;
    let mut text =
        serde_json::to_string_pretty(&plan.to_document()).map_err(|e| GatewayError::Internal(e.to_string()))?;
    text.push('\n');
    Ok((plan, text))
}

pub fn sweep_config(spacing: f64, angle_deg: Option<f64>) -> SweepConfig {
    let sweep = SweepConfig::with_spacing(spacing);
    match angle_deg {
        Some(a) => sweep.at_angle(a),
        None => sweep,
    }
}

/// A priority region drawn on the map: a closed `[lon, lat]` ring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PriorityInput {
    pub ring: Vec<[f64; 2]>,
    pub spacing: f64,
    /// 1 is flown first.
    pub rank: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FleetInput {
    pub uav_id: UavId,
    /// Take-off point in local meters. Defaults to the first station.
    #[serde(default)]
    pub start: Option<LocalPoint>,
    #[serde(default)]
    pub battery_pct: Option<f64>,
    pub drain_const: f64,
    /// Overrides the mission threshold for this UAV.
    #[serde(default)]
    pub threshold_pct: Option<f64>,
}

/// Body of `POST /api/missions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MissionRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    pub field_id: String,
    pub spacing: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub priorities: Vec<PriorityInput>,
    /// Battery level at which a UAV heads for a swap, percent. At least 10.
    pub threshold_pct: f64,
    pub fleet: Vec<FleetInput>,
    /// Defaults to one combined swap and offload station at the local origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stations: Option<Vec<Station>>,
}

impl MissionRequest {
    /// Checks the threshold floor and the fleet before any planning.
    pub fn validate(&self) -> Result<(), GatewayError> {
        let low = |t: f64| !(t >= MIN_THRESHOLD_PCT);
        if low(self.threshold_pct) {
            return Err(GatewayError::Unprocessable(format!(
                "threshold_pct {} is below the minimum of {MIN_THRESHOLD_PCT}",
                self.threshold_pct
            )));
        }
        for (i, m) in self.fleet.iter().enumerate() {
            if let Some(t) = m.threshold_pct.filter(|t| low(*t)) {
                return Err(GatewayError::Unprocessable(format!(
                    "fleet[{i}].threshold_pct {t} is below the minimum of {MIN_THRESHOLD_PCT}"
                )));
            }
        }
        if self.fleet.is_empty() {
            return Err(GatewayError::Unprocessable("fleet is empty".into()));
        }
        if !(self.spacing > 0.0) {
            return Err(GatewayError::Unprocessable(format!(
                "spacing {} must be positive",
                self.spacing
            )));
        }
        Ok(())
    }

    pub fn stations(&self) -> Vec<Station> {
        self.stations.clone().unwrap_or_else(|| {
            vec![Station {
                kind: StationKind::Combined,
                position: LocalPoint::new(0.0, 0.0),
            }]
        })
    }

    pub fn sweep(&self) -> SweepConfig {
        sweep_config(self.spacing, self.angle_deg)
    }

    /// The field document with the priority regions added as features.
    pub fn field_with_priorities(&self, field_geojson: &str) -> Result<String, GatewayError> {
        if self.priorities.is_empty() {
            return Ok(field_geojson.to_string());
        }
        let mut doc: Value =
            serde_json::from_str(field_geojson).map_err(|e| GatewayError::BadRequest(e.to_string()))?;
        let Some(features) = doc.get_mut("features").and_then(Value::as_array_mut) else {
            return Err(GatewayError::Unprocessable("field is not a FeatureCollection".into()));
        };
        for p in &self.priorities {
            features.push(json!({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [p.ring]},
                "properties": {"role": "priority", "spacing": p.spacing, "rank": p.rank},
            }));
        }
        Ok(doc.to_string())
    }

    /// Scenario for a run of this mission. Settings not covered by the
    /// mission take their scenario defaults.
    pub fn scenario(
        &self,
        mission_id: &str,
        field: &str,
        seed: u64,
        faults: &[FaultEvent],
    ) -> Result<Scenario, GatewayError> {
        let stations = self.stations();
        let home = stations.first().map_or(LocalPoint::new(0.0, 0.0), |s| s.position);
        let fleet: Vec<Value> = self
            .fleet
            .iter()
            .map(|m| {
                json!({
                    "uav_id": m.uav_id,
                    "start": m.start.unwrap_or(home),
                    "battery_pct": m.battery_pct.unwrap_or(100.0),
                    "drain_const": m.drain_const,
                    "threshold_pct": m.threshold_pct.unwrap_or(self.threshold_pct),
                })
            })
            .collect();
        let field: Value = serde_json::from_str(field).map_err(|e| GatewayError::BadRequest(e.to_string()))?;
        let doc = json!({
            "name": mission_id,
            "field": field,
            "stations": stations,
            "fleet": fleet,
            "sweep": self.sweep(),
            "faults": faults,
            "seed": seed,
        });
        Ok(Scenario::from_json(&doc.to_string())?)
    }
}

/// Response of `POST /api/missions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct MissionResponse {
    pub mission_id: String,
    pub field_id: String,
    /// The plan document, identical to `agriswarm plan` output.
    pub plan: Value,
    pub segments: Vec<SegmentExport>,
    pub skipped: Vec<(UavId, SkipReason)>,
    /// First plan index no UAV could take on one charge, if any.
    pub unassigned_from: Option<usize>,
}

/// How a plan splits across a mission fleet.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub segments: Vec<SegmentExport>,
    pub skipped: Vec<(UavId, SkipReason)>,
    /// First plan index no UAV could take on one charge, if any.
    pub unassigned_from: Option<usize>,
}

/// Splits `plan` across the mission fleet in fleet order.
pub fn allocate(req: &MissionRequest, plan: &MissionPlan) -> Result<Allocation, GatewayError> {
    let fleet: Vec<(UavId, BatteryModel)> = req
        .fleet
        .iter()
        .map(|m| {
            let bm = BatteryModel::new(
                m.battery_pct.unwrap_or(100.0),
                m.threshold_pct.unwrap_or(req.threshold_pct),
                m.drain_const,
            )
            .map_err(|e| GatewayError::Unprocessable(format!("{}: {e}", m.uav_id)))?;
            Ok((m.uav_id, bm))
        })
        .collect::<Result<_, GatewayError>>()?;
    let export = |s: &Segmentation| s.segments.iter().map(|g| g.export()).collect();
    match segment_mission(&plan.waypoints, &fleet, &AllocatorConfig::default()) {
        Ok(s) => Ok(Allocation {
            segments: export(&s),
            skipped: s.skipped,
            unassigned_from: None,
        }),
        Err(AllocError::InsufficientFleet {
            partial,
            residual_start,
        }) => Ok(Allocation {
            segments: export(&partial),
            skipped: partial.skipped,
            unassigned_from: Some(residual_start),
        }),
        Err(e) => Err(GatewayError::Unprocessable(e.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(threshold: f64) -> MissionRequest {
        MissionRequest {
            request_id: None,
            field_id: "f".into(),
            spacing: 4.0,
            angle_deg: None,
            priorities: Vec::new(),
            threshold_pct: threshold,
            fleet: vec![FleetInput {
                uav_id: UavId(1),
                start: None,
                battery_pct: None,
                drain_const: 0.05,
                threshold_pct: None,
            }],
            stations: None,
        }
    }

    #[test]
    fn threshold_floor() {
        assert!(request(10.0).validate().is_ok());
        assert!(matches!(request(9.99).validate(), Err(GatewayError::Unprocessable(_))));
        assert!(matches!(
            request(f64::NAN).validate(),
            Err(GatewayError::Unprocessable(_))
        ));
        let mut r = request(20.0);
        r.fleet[0].threshold_pct = Some(5.0);
        assert!(matches!(r.validate(), Err(GatewayError::Unprocessable(_))));
    }

    #[test]
    fn default_station_is_combined_at_origin() {
        let s = request(10.0).stations();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].kind, StationKind::Combined);
    }
}
