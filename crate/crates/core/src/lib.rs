//! Multi-UAV field survey engine.
//!
//! Plans boustrophedon coverage over a field, splits the path across a fleet
//! by battery budget, runs the fleet in a deterministic tick simulator whose
//! agents swap batteries and hand missions to each other, and turns the
//! geotagged captures into a class heatmap.

pub mod agent;
pub mod allocator;
pub mod coverage;
pub mod field;
pub mod geo;
pub mod link;
pub mod sim;

use std::fmt;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::geo::LocalPoint;

/// System id of a UAV on the radio link (1–254).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(transparent)]
pub struct UavId(pub u8);

impl fmt::Display for UavId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "uav-{}", self.0)
    }
}

/// System id reserved for the ground station.
pub const GROUND_STATION_SYS: u8 = 255;

/// Unique id of one unit of waypoint work. Ids minted by the ground station
/// have a zero high word; agents mint ids under their own system id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(transparent)]
pub struct WaypointId(pub u64);

impl WaypointId {
    pub fn minted(issuer: u8, counter: u32) -> Self {
        WaypointId(((issuer as u64) << 32) | counter as u64)
    }
}

/// A plan waypoint as carried by agents and mission messages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Waypoint {
    pub id: WaypointId,
    /// Index of this point in the original mission plan.
    pub plan_index: u32,
    pub pos: LocalPoint,
}

/// Agent flight mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Idle,
    MissionAssigned,
    Flying,
    ReturningToBss,
    AtBss,
    Transferring,
    Offloading,
    Failed,
}

impl Mode {
    pub const ALL: [Mode; 8] = [
        Mode::Idle,
        Mode::MissionAssigned,
        Mode::Flying,
        Mode::ReturningToBss,
        Mode::AtBss,
        Mode::Transferring,
        Mode::Offloading,
        Mode::Failed,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Mode> {
        Mode::ALL.get(code as usize).copied()
    }

    pub fn airborne(self) -> bool {
        matches!(self, Mode::Flying | Mode::ReturningToBss | Mode::Transferring)
    }
}
