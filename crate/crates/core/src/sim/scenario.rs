use std::collections::BTreeSet;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::agent::Station;
use crate::allocator::{AllocatorConfig, MIN_THRESHOLD_PCT};
use crate::coverage::SweepConfig;
use crate::field::ClassifierSpec;
use crate::geo::LocalPoint;
use crate::link::{ChannelConfig, OffloadConfig};
use crate::{UavId, GROUND_STATION_SYS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FleetMember {
    pub uav_id: UavId,
    pub start: LocalPoint,
    #[serde(default = "full_battery")]
    pub battery_pct: f64,
    /// The agent's initial estimate of its drain constant, % per meter.
    pub drain_const: f64,
    /// Drain constant used by the battery physics. Defaults to `drain_const`.
    #[serde(default)]
    pub true_drain_const: Option<f64>,
    #[serde(default = "default_threshold")]
    pub threshold_pct: f64,
}

impl FleetMember {
    pub fn physical_drain(&self) -> f64 {
        self.true_drain_const.unwrap_or(self.drain_const)
    }
}

fn full_battery() -> f64 {
    100.0
}

fn default_threshold() -> f64 {
    MIN_THRESHOLD_PCT
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultKind {
    BatteryDrop { pct: f64 },
    CommBlackout { duration: u64 },
    ControllerFail,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FaultEvent {
    pub at_tick: u64,
    pub uav_id: UavId,
    pub kind: FaultKind,
}

impl FaultEvent {
    pub fn validate(&self) -> Result<(), SimError> {
        match self.kind {
            FaultKind::BatteryDrop { pct } if !(pct > 0.0 && pct <= 100.0) => Err(SimError::InvalidScenario(format!(
                "battery drop {pct} outside (0, 100]"
            ))),
            FaultKind::CommBlackout { duration: 0 } => {
                Err(SimError::InvalidScenario("blackout duration must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// A complete simulation input: field, stations, fleet and run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    /// GeoJSON FeatureCollection. Features carry a `role` property: `roi`,
    /// `nofly`, `priority` (with `spacing` and `rank`) or `truth` (with
    /// `class`).
    pub field: serde_json::Value,
    pub stations: Vec<Station>,
    pub fleet: Vec<FleetMember>,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub allocator: AllocatorConfig,
    #[serde(default)]
    pub radio: ChannelConfig,
    #[serde(default)]
    pub offload: OffloadConfig,
    #[serde(default)]
    pub faults: Vec<FaultEvent>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tick_seconds")]
    pub tick_seconds: f64,
    #[serde(default = "default_speed")]
    pub uav_speed_mps: f64,
    /// Battery percent per 90 degrees of heading change.
    #[serde(default = "default_k_turn")]
    pub k_turn: f64,
    #[serde(default = "default_service_ticks")]
    pub service_ticks: u32,
    /// Ground station re-uploads work stranded on failed UAVs.
    #[serde(default = "default_true")]
    pub gs_redispatch: bool,
    /// Telemetry silence after which the ground station checks for failure.
    #[serde(default = "default_failure_timeout")]
    pub failure_timeout_ticks: u64,
    #[serde(default = "default_peer_timeout")]
    pub peer_timeout_ticks: u64,
    #[serde(default)]
    pub classifier: ClassifierSpec,
    #[serde(default = "default_cell")]
    pub heatmap_cell_m: f64,
    /// Uniform reflectance noise added to synthetic captures.
    #[serde(default = "default_jitter")]
    pub spectral_jitter: f64,
    /// Distance between captures along a sweep leg. Defaults to the spacing.
    #[serde(default)]
    pub capture_interval_m: Option<f64>,
    #[serde(default = "default_max_ticks")]
    pub max_ticks: u64,
}

fn default_tick_seconds() -> f64 {
    1.0
}
fn default_speed() -> f64 {
    5.0
}
fn default_k_turn() -> f64 {
    0.05
}
fn default_service_ticks() -> u32 {
    60
}
fn default_true() -> bool {
    true
}
fn default_failure_timeout() -> u64 {
    10
}
fn default_peer_timeout() -> u64 {
    10
}
fn default_cell() -> f64 {
    10.0
}
fn default_jitter() -> f64 {
    0.02
}
fn default_max_ticks() -> u64 {
    200_000
}

impl Scenario {
    /// Parses a scenario document. Errors carry the JSON pointer of the
    /// offending value.
    pub fn from_json(text: &str) -> Result<Scenario, SimError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let s: Scenario = serde_path_to_error::deserialize(de).map_err(|e| SimError::Schema {
            pointer: json_pointer(&e.path().to_string()),
            message: e.inner().to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if !self.stations.iter().any(|s| s.kind.swaps()) {
            return bad("at least one battery swap station is required".into());
        }
        if self.fleet.is_empty() {
            return bad("fleet is empty".into());
        }
        let mut ids = BTreeSet::new();
        for m in &self.fleet {
            if m.uav_id.0 == 0 || m.uav_id.0 == GROUND_STATION_SYS {
                return bad(format!("uav id {} is reserved", m.uav_id.0));
            }
            if !ids.insert(m.uav_id) {
                return bad(format!("duplicate uav id {}", m.uav_id.0));
            }
            if !(0.0..=100.0).contains(&m.battery_pct) {
                return bad(format!("{}: battery {} outside [0, 100]", m.uav_id, m.battery_pct));
            }
            if m.threshold_pct < MIN_THRESHOLD_PCT || m.threshold_pct >= 100.0 {
                return bad(format!(
                    "{}: threshold {} outside [{MIN_THRESHOLD_PCT}, 100)",
                    m.uav_id, m.threshold_pct
                ));
            }
            if !(m.drain_const > 0.0) || !(m.physical_drain() > 0.0) {
                return bad(format!("{}: drain constants must be positive", m.uav_id));
            }
        }
        for f in &self.faults {
            f.validate()?;
            if !ids.contains(&f.uav_id) {
                return bad(format!("fault targets unknown {}", f.uav_id));
            }
        }
        if !(self.tick_seconds > 0.0) || !(self.uav_speed_mps > 0.0) {
            return bad("tick_seconds and uav_speed_mps must be positive".into());
        }
        if !(self.k_turn >= 0.0) {
            return bad(format!("k_turn {} is negative", self.k_turn));
        }
        if !(self.heatmap_cell_m > 0.0) {
            return bad("heatmap_cell_m must be positive".into());
        }
        if !(self.spectral_jitter >= 0.0) {
            return bad("spectral_jitter must not be negative".into());
        }
        if let Some(i) = self.capture_interval_m {
            if !(i > 0.0) {
                return bad("capture_interval_m must be positive".into());
            }
        }
        if self.max_ticks == 0 {
            return bad("max_ticks must be positive".into());
        }
        self.radio
            .validate()
            .map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        Ok(())
    }

    pub fn json_schema() -> serde_json::Value {
        serde_json::to_value(schemars::schema_for!(Scenario)).expect("schema serializes")
    }
}

/// Turns a serde path like `fleet[0].drain_const` into `/fleet/0/drain_const`.
pub fn json_pointer(path: &str) -> String {
    if path == "." || path.is_empty() {
        return String::new();
    }
    let mut out = String::new();
    for part in path.split('.') {
        let mut rest = part;
        while let Some(open) = rest.find('[') {
            if open > 0 {
                out.push('/');
                out.push_str(&rest[..open]);
            }
            let close = rest[open..].find(']').map_or(rest.len(), |c| open + c);
            out.push('/');
            out.push_str(&rest[open + 1..close]);
            rest = rest.get(close + 1..).unwrap_or("");
        }
        if !rest.is_empty() {
            out.push('/');
            out.push_str(rest);
        }
    }
    out
}
