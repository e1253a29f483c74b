//! Battery-budgeted mission segmentation.
//!
//! A UAV with battery level `b`, threshold `β` and drain constant `c`
//! (percent per meter) can fly `d = (b − β) / c` meters before it must be
//! back on the ground. The plan is cut greedily into contiguous slices whose
//! internal length stays strictly below each UAV's `d`.

use std::collections::BTreeMap;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{dist, LocalPoint};
use crate::UavId;

/// Lowest battery threshold a manager may configure, in percent.
pub const MIN_THRESHOLD_PCT: f64 = 10.0;
pub const DEFAULT_THRESHOLD_PCT: f64 = 10.0;
/// Weight of the newest flight in the drain-constant moving average.
pub const DEFAULT_EMA_ALPHA: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocError {
    #[error("invalid battery model: {0}")]
    InvalidBattery(String),
    #[error("flight log entry {index} is invalid: {reason}")]
    InvalidLog { index: usize, reason: String },
    #[error("flight history is empty")]
    EmptyHistory,
    #[error("mission has no waypoints")]
    EmptyPlan,
    #[error("fleet is empty")]
    EmptyFleet,
    #[error("fleet exhausted with waypoints from index {residual_start} still unassigned")]
    InsufficientFleet {
        partial: Segmentation,
        residual_start: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct BatteryModel {
    pub level_pct: f64,
    pub threshold_pct: f64,
    /// Percent of battery used per meter flown.
    pub drain_const: f64,
}

impl BatteryModel {
    pub fn new(level_pct: f64, threshold_pct: f64, drain_const: f64) -> Result<Self, AllocError> {
        let bm = BatteryModel {
            level_pct,
            threshold_pct,
            drain_const,
        };
        bm.validate()?;
        Ok(bm)
    }

    pub fn validate(&self) -> Result<(), AllocError> {
        if !(0.0..=100.0).contains(&self.level_pct) {
            return Err(AllocError::InvalidBattery(format!(
                "level {} outside [0, 100]",
                self.level_pct
            )));
        }
        if !(MIN_THRESHOLD_PCT..=100.0).contains(&self.threshold_pct) {
            return Err(AllocError::InvalidBattery(format!(
                "threshold {} below the {MIN_THRESHOLD_PCT}% floor",
                self.threshold_pct
            )));
        }
        if !(self.drain_const > 0.0) || !self.drain_const.is_finite() {
            return Err(AllocError::InvalidBattery(format!(
                "drain constant {} must be > 0",
                self.drain_const
            )));
        }
        Ok(())
    }

    pub fn with_level(self, level_pct: f64) -> Self {
        BatteryModel { level_pct, ..self }
    }
}

/// Meters the UAV can fly before reaching its threshold, clamped at zero.
pub fn reachable_distance(bm: &BatteryModel) -> f64 {
    ((bm.level_pct - bm.threshold_pct) / bm.drain_const).max(0.0)
}

/// One completed sortie: battery at take-off and landing, distance flown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct FlightLogEntry {
    pub initial_pct: f64,
    pub final_pct: f64,
    pub distance_m: f64,
    pub mission_id: u64,
}

impl FlightLogEntry {
    fn drain_const(&self, index: usize) -> Result<f64, AllocError> {
        let bad = |reason: &str| AllocError::InvalidLog {
            index,
            reason: reason.to_string(),
        };
        if !(self.distance_m > 0.0) {
            return Err(bad("distance must be positive"));
        }
        if self.final_pct > self.initial_pct {
            return Err(bad("final battery above initial"));
        }
        if self.final_pct < 0.0 {
            return Err(bad("final battery below zero"));
        }
        Ok((self.initial_pct - self.final_pct) / self.distance_m)
    }
}

/// Drain constant from flight history (oldest first): an exponential moving
/// average of the per-sortie constants with [`DEFAULT_EMA_ALPHA`].
pub fn update_drain_const(history: &[FlightLogEntry]) -> Result<f64, AllocError> {
    update_drain_const_with(history, DEFAULT_EMA_ALPHA)
}

/// As [`update_drain_const`] with an explicit newest-entry weight. `alpha = 1`
/// keeps only the latest sortie.
pub fn update_drain_const_with(history: &[FlightLogEntry], alpha: f64) -> Result<f64, AllocError> {
    let mut iter = history.iter().enumerate();
    let (_, first) = iter.next().ok_or(AllocError::EmptyHistory)?;
    let mut c = first.drain_const(0)?;
    for (i, entry) in iter {
        c = alpha * entry.drain_const(i)? + (1.0 - alpha) * c;
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct AllocatorConfig {
    /// Reserve subtracted from every UAV's reachable distance, meters.
    pub ferry_margin_m: f64,
}

/// A contiguous slice `waypoints[start..=end]` of the plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct MissionSegment {
    pub uav_id: UavId,
    pub start: usize,
    pub end: usize,
    pub waypoints: Vec<LocalPoint>,
    pub internal_length: f64,
}

impl MissionSegment {
    pub fn export(&self) -> SegmentExport {
        SegmentExport {
            uav_id: self.uav_id,
            waypoint_indices: [self.start, self.end],
            length_m: self.internal_length,
        }
    }
}

/// Exported segment record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SegmentExport {
    pub uav_id: UavId,
    pub waypoint_indices: [usize; 2],
    pub length_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    BatteryBelowThreshold,
    /// Budget too small for even the next leg.
    RangeTooShort,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
pub struct Segmentation {
    pub segments: Vec<MissionSegment>,
    pub skipped: Vec<(UavId, SkipReason)>,
}

/// Greedy left-to-right split of `waypoints` across `fleet` in fleet order.
///
/// Consecutive segments share their boundary waypoint. UAVs at or below their
/// threshold are skipped and listed in [`Segmentation::skipped`]. When the
/// fleet runs out first, [`AllocError::InsufficientFleet`] carries the
/// segments made so far and the index where the unassigned tail begins.
pub fn segment_mission(
    waypoints: &[LocalPoint],
    fleet: &[(UavId, BatteryModel)],
    cfg: &AllocatorConfig,
) -> Result<Segmentation, AllocError> {
    if waypoints.is_empty() {
        return Err(AllocError::EmptyPlan);
    }
    if fleet.is_empty() {
        return Err(AllocError::EmptyFleet);
    }
    let last = waypoints.len() - 1;
    let mut out = Segmentation::default();
    let mut start = 0usize;
    let mut done = false;

    for (uav_id, bm) in fleet {
        if done {
            break;
        }
        bm.validate()?;
        if bm.level_pct <= bm.threshold_pct {
            out.skipped.push((*uav_id, SkipReason::BatteryBelowThreshold));
            continue;
        }
        let budget = reachable_distance(bm) - cfg.ferry_margin_m;
        let mut end = start;
        let mut length = 0.0;
        while end < last {
            let leg = dist(waypoints[end], waypoints[end + 1]);
            if length + leg < budget {
                length += leg;
                end += 1;
            } else {
                break;
            }
        }
        if end == start && last > 0 {
            out.skipped.push((*uav_id, SkipReason::RangeTooShort));
            continue;
        }
        out.segments.push(MissionSegment {
            uav_id: *uav_id,
            start,
            end,
            waypoints: waypoints[start..=end].to_vec(),
            internal_length: length,
        });
        start = end;
        done = end == last;
    }

    if done {
        Ok(out)
    } else {
        Err(AllocError::InsufficientFleet {
            partial: out,
            residual_start: start,
        })
    }
}

/// Which segment each UAV flies, in segmentation order.
pub fn assign(segmentation: &Segmentation) -> BTreeMap<UavId, usize> {
    segmentation
        .segments
        .iter()
        .enumerate()
        .map(|(i, s)| (s.uav_id, i))
        .collect()
}
