//! Simulated ground station: initial mission upload, telemetry tracking and
//! re-dispatch of queued work to idle UAVs.

use std::collections::BTreeMap;

use serde::Serialize;

use super::SimError;
use crate::allocator::{segment_mission, AllocError, AllocatorConfig, BatteryModel};
use crate::geo::{project, GeoPoint, LocalPoint};
use crate::link::{EventCode, LinkMessage, Outcome, Received, ReliableEndpoint, RetryPolicy, SendHandle};
use crate::{Mode, UavId, Waypoint, WaypointId, GROUND_STATION_SYS};

/// Largest waypoint list sent in one upload frame.
pub const MAX_UPLOAD_WAYPOINTS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Track {
    pub position: LocalPoint,
    pub battery_pct: f64,
    pub mode: Mode,
    pub heard_tick: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Upload {
    pub uav: UavId,
    pub mission_id: u32,
    pub waypoints: Vec<Waypoint>,
}

/// What the ground station did, as written to the trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GsAction {
    MissionUpload {
        uav_id: UavId,
        mission_id: u32,
        count: usize,
        first_plan_index: Option<u32>,
    },
    Requeue {
        uav_id: UavId,
        mission_id: u32,
        count: usize,
    },
    Recover {
        uav_id: UavId,
        count: usize,
    },
    Queue {
        count: usize,
    },
    Notified {
        uav_id: UavId,
        event: EventCode,
        detail: String,
    },
}

#[derive(Debug, Clone)]
pub struct GroundStation {
    pub endpoint: ReliableEndpoint,
    pub tracks: BTreeMap<UavId, Track>,
    pub queue: Vec<Waypoint>,
    pub uploads: BTreeMap<SendHandle, Upload>,
    /// Threshold and drain estimate the station assumes for each UAV.
    pub models: BTreeMap<UavId, (f64, f64)>,
    pub failure_timeout: u64,
    origin: GeoPoint,
    next_mission: u32,
    minted: u64,
}

impl GroundStation {
    pub fn new(
        origin: GeoPoint,
        policy: RetryPolicy,
        models: BTreeMap<UavId, (f64, f64)>,
        failure_timeout: u64,
    ) -> Self {
        GroundStation {
            endpoint: ReliableEndpoint::new(GROUND_STATION_SYS, 0, policy),
            tracks: BTreeMap::new(),
            queue: Vec::new(),
            uploads: BTreeMap::new(),
            models,
            failure_timeout,
            origin,
            next_mission: 1,
            minted: 0,
        }
    }

    /// Number of waypoint ids this station has issued.
    pub fn minted(&self) -> u64 {
        self.minted
    }

    pub fn mint(&mut self, plan_index: u32, pos: LocalPoint) -> Waypoint {
        self.minted += 1;
        Waypoint {
            id: WaypointId(self.minted),
            plan_index,
            pos,
        }
    }

    /// Copy of `w` under a fresh id.
    fn remint(&mut self, w: &Waypoint) -> Waypoint {
        self.mint(w.plan_index, w.pos)
    }

    pub fn heard(&self, uav: UavId) -> u64 {
        self.tracks.get(&uav).map_or(0, |t| t.heard_tick)
    }

    /// Splits the plan across the fleet and uploads each segment. Work the
    /// fleet cannot cover in one charge is queued for later dispatch.
    pub fn initial_dispatch(
        &mut self,
        now: u64,
        plan: &[LocalPoint],
        fleet: &[(UavId, BatteryModel)],
        cfg: &AllocatorConfig,
    ) -> Result<Vec<GsAction>, SimError> {
        let (segments, residual) = match segment_mission(plan, fleet, cfg) {
            Ok(s) => (s.segments, None),
            Err(AllocError::InsufficientFleet {
                partial,
                residual_start,
            }) => (partial.segments, Some(residual_start)),
            Err(e) => return Err(e.into()),
        };
        let mut actions = Vec::new();
        for seg in &segments {
            let items: Vec<Waypoint> = (seg.start..=seg.end).map(|i| self.mint(i as u32, plan[i])).collect();
            actions.extend(self.upload(now, seg.uav_id, items)?);
        }
        if let Some(start) = residual {
            let tail: Vec<Waypoint> = (start..plan.len()).map(|i| self.mint(i as u32, plan[i])).collect();
            actions.push(GsAction::Queue { count: tail.len() });
            self.queue.extend(tail);
        }
        Ok(actions)
    }

    pub fn upload(&mut self, now: u64, uav: UavId, items: Vec<Waypoint>) -> Result<Vec<GsAction>, SimError> {
        let mut actions = Vec::new();
        for chunk in items.chunks(MAX_UPLOAD_WAYPOINTS) {
            let mission_id = self.next_mission;
            self.next_mission += 1;
            let msg = LinkMessage::MissionUpload {
                mission_id,
                items: chunk.to_vec(),
            };
            let handle = self.endpoint.send(now, uav.0, 1, &msg)?;
            self.uploads.insert(
                handle,
                Upload {
                    uav,
                    mission_id,
                    waypoints: chunk.to_vec(),
                },
            );
            actions.push(GsAction::MissionUpload {
                uav_id: uav,
                mission_id,
                count: chunk.len(),
                first_plan_index: chunk.first().map(|w| w.plan_index),
            });
        }
        Ok(actions)
    }

    pub fn on_message(&mut self, now: u64, r: Received) -> Option<GsAction> {
        match r.msg {
            LinkMessage::Telemetry {
                position,
                battery_pct,
                mode,
                ..
            } => {
                if let Ok(p) = project(self.origin, position) {
                    self.tracks.insert(
                        UavId(r.from),
                        Track {
                            position: p,
                            battery_pct,
                            mode,
                            heard_tick: now,
                        },
                    );
                }
                None
            }
            LinkMessage::NotifyGs { event, detail } => Some(GsAction::Notified {
                uav_id: UavId(r.from),
                event,
                detail,
            }),
            _ => None,
        }
    }

    /// Settles a finished upload. A failed upload the UAV never received
    /// goes back to the queue.
    pub fn on_outcome(
        &mut self,
        handle: SendHandle,
        outcome: Outcome,
        received: impl Fn(UavId, u32) -> bool,
    ) -> Option<GsAction> {
        let up = self.uploads.remove(&handle)?;
        match outcome {
            Outcome::Delivered { .. } => None,
            Outcome::Failed { .. } => {
                if received(up.uav, up.mission_id) {
                    return None;
                }
                let count = up.waypoints.len();
                self.queue.extend(up.waypoints);
                Some(GsAction::Requeue {
                    uav_id: up.uav,
                    mission_id: up.mission_id,
                    count,
                })
            }
        }
    }

    /// Hands queued work to idle UAVs that reported recently. The queue is
    /// split by their battery budgets; whatever does not fit goes to the last
    /// UAV that got a piece, which will cover it across battery swaps.
    pub fn dispatch(&mut self, now: u64) -> Result<Vec<GsAction>, SimError> {
        if self.queue.is_empty() {
            return Ok(Vec::new());
        }
        let busy: Vec<UavId> = self.uploads.values().map(|u| u.uav).collect();
        let candidates: Vec<(UavId, BatteryModel)> = self
            .tracks
            .iter()
            .filter(|(id, t)| {
                t.mode == Mode::Idle && now.saturating_sub(t.heard_tick) <= self.failure_timeout && !busy.contains(id)
            })
            .filter_map(|(id, t)| {
                let (threshold, c) = *self.models.get(id)?;
                Some((
                    *id,
                    BatteryModel {
                        level_pct: t.battery_pct.clamp(0.0, 100.0),
                        threshold_pct: threshold,
                        drain_const: c,
                    },
                ))
            })
            .collect();
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let queue = std::mem::take(&mut self.queue);
        let positions: Vec<LocalPoint> = queue.iter().map(|w| w.pos).collect();
        let (segments, residual) = match segment_mission(&positions, &candidates, &AllocatorConfig::default()) {
            Ok(s) => (s.segments, None),
            Err(AllocError::InsufficientFleet {
                partial,
                residual_start,
            }) => (partial.segments, Some(residual_start)),
            Err(e) => {
                self.queue = queue;
                return Err(e.into());
            }
        };

        let mut pieces: Vec<(UavId, Vec<Waypoint>)> = Vec::new();
        for (k, seg) in segments.iter().enumerate() {
            let mut items: Vec<Waypoint> = queue[seg.start..=seg.end].to_vec();
            if k > 0 {
                items[0] = self.remint(&queue[seg.start]);
            }
            pieces.push((seg.uav_id, items));
        }
        if let Some(start) = residual {
            match pieces.last_mut() {
                Some((_, items)) => items.extend_from_slice(&queue[start + 1..]),
                None => pieces.push((candidates[0].0, queue.clone())),
            }
        }
        let mut actions = Vec::new();
        for (uav, items) in pieces {
            actions.extend(self.upload(now, uav, items)?);
        }
        Ok(actions)
    }
}
