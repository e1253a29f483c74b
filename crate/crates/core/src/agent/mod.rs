//! Per-UAV decision logic.
//!
//! Each tick the simulator hands an agent its battery reading, position and
//! inbox; [`UavState::step`] returns declarative actions. Before every leg
//! the agent checks that it can fly to the next waypoint and from there to
//! the nearest swap station on what is left above its threshold. When it
//! cannot, it tells the ground station, offers its remaining work to the
//! nearest peer and heads for a swap. Work it could not hand over stays in
//! its cache and is resumed after the swap.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocator::{reachable_distance, update_drain_const_with, BatteryModel, FlightLogEntry, DEFAULT_EMA_ALPHA};
use crate::field::{FieldTruth, ImageRecord};
use crate::geo::{dist, project, unproject, GeoPoint, LocalPoint};
use crate::link::{EventCode, LinkMessage, Received, RejectReason, ServerReceipt};
use crate::{Mode, UavId, Waypoint, WaypointId, GROUND_STATION_SYS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("invalid transition from {mode:?}: {detail}")]
    InvalidTransition { mode: Mode, detail: String },
    #[error("inbox holds {len} messages, limit is {max}")]
    InboxOverflow { len: usize, max: usize },
    #[error("invalid tick input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum StationKind {
    Bss,
    Offload,
    Combined,
}

impl StationKind {
    pub fn swaps(self) -> bool {
        matches!(self, StationKind::Bss | StationKind::Combined)
    }

    pub fn offloads(self) -> bool {
        matches!(self, StationKind::Offload | StationKind::Combined)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Station {
    pub kind: StationKind,
    pub position: LocalPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub origin: GeoPoint,
    pub stations: Vec<Station>,
    /// Ticks a landed UAV spends at a station before its battery is swapped.
    pub service_ticks: u32,
    /// A peer not heard from for this many ticks is not offered work.
    pub peer_timeout_ticks: u64,
    /// An offer with no answer after this many ticks is asked again.
    pub answer_timeout_ticks: u64,
    pub max_inbox: usize,
    pub ema_alpha: f64,
}

impl AgentConfig {
    pub fn new(origin: GeoPoint, stations: Vec<Station>) -> Self {
        AgentConfig {
            origin,
            stations,
            service_ticks: 60,
            peer_timeout_ticks: 10,
            answer_timeout_ticks: 40,
            max_inbox: 1024,
            ema_alpha: DEFAULT_EMA_ALPHA,
        }
    }

    /// Index of the swap-capable station closest to `p`; ties go to the
    /// lower index.
    pub fn nearest_swap_station(&self, p: LocalPoint) -> Option<usize> {
        self.nearest_where(p, |s| s.kind.swaps())
    }

    pub fn nearest_offload_station(&self, p: LocalPoint) -> Option<usize> {
        self.nearest_where(p, |s| s.kind.offloads())
    }

    fn nearest_where(&self, p: LocalPoint, keep: impl Fn(&Station) -> bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in self.stations.iter().enumerate() {
            if !keep(s) {
                continue;
            }
            let d = dist(p, s.position);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }

    fn station_at(&self, p: LocalPoint) -> Option<usize> {
        self.stations.iter().position(|s| s.position == p)
    }
}

/// A one-tick battery loss this far above the expected drain is not logged
/// as flight drain.
pub const SUDDEN_DROP_PCT: f64 = 1.0;

/// Where the agent is currently flying.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Target {
    Waypoint { waypoint: Waypoint },
    Station { index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignedSegment {
    pub mission_id: u32,
    pub waypoints: Vec<Waypoint>,
}

/// Work offered to a peer and not yet answered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutboundTransfer {
    pub transfer_id: u32,
    pub peer: UavId,
    pub waypoints: Vec<Waypoint>,
    /// The last request went unacknowledged; ask again once the peer is heard.
    #[serde(default)]
    pub unanswered: bool,
    /// Tick of the last request.
    #[serde(default)]
    pub asked_tick: u64,
}

/// Last telemetry heard from a peer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeerInfo {
    pub position: LocalPoint,
    pub battery_pct: f64,
    pub mode: Mode,
    pub heard_tick: u64,
}

/// A peer as seen by [`nearest_peer`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeerSnapshot {
    pub id: UavId,
    pub position: LocalPoint,
    pub live: bool,
    pub failed: bool,
}

/// Closest live, non-failed peer; ties go to the lower id.
pub fn nearest_peer(position: LocalPoint, fleet: &[PeerSnapshot]) -> Option<UavId> {
    let mut best: Option<(UavId, f64)> = None;
    for p in fleet {
        if !p.live || p.failed {
            continue;
        }
        let d = dist(position, p.position);
        let better = match best {
            None => true,
            Some((id, bd)) => d < bd || (d == bd && p.id < id),
        };
        if better {
            best = Some((p.id, d));
        }
    }
    best.map(|(id, _)| id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AgentAction {
    GoTo {
        waypoint: Waypoint,
        capture: bool,
    },
    Capture {
        waypoint: Waypoint,
    },
    NotifyGs {
        event: String,
        detail: String,
    },
    SendTransferRequest {
        peer: UavId,
        transfer_id: u32,
        waypoints: Vec<Waypoint>,
    },
    AcceptTransfer {
        peer: UavId,
        transfer_id: u32,
        count: usize,
    },
    RejectTransfer {
        peer: UavId,
        transfer_id: u32,
        reason: String,
    },
    GoToBss {
        station: usize,
        position: LocalPoint,
    },
    Land {
        station: usize,
    },
    SwapBattery,
    BeginOffload {
        records: usize,
    },
    Halt,
}

impl AgentAction {
    pub fn notify(event: EventCode, detail: impl Into<String>) -> Self {
        AgentAction::NotifyGs {
            event: event_name(event).into(),
            detail: detail.into(),
        }
    }
}

pub fn event_name(e: EventCode) -> &'static str {
    match e {
        EventCode::LowBattery => "low_battery",
        EventCode::MissionComplete => "mission_complete",
        EventCode::TransferFailed => "transfer_failed",
        EventCode::WorkUnreachable => "work_unreachable",
    }
}

pub fn event_from_name(name: &str) -> Option<EventCode> {
    [
        EventCode::LowBattery,
        EventCode::MissionComplete,
        EventCode::TransferFailed,
        EventCode::WorkUnreachable,
    ]
    .into_iter()
    .find(|e| event_name(*e) == name)
}

pub fn reason_name(r: RejectReason) -> &'static str {
    match r {
        RejectReason::Busy => "busy",
        RejectReason::Battery => "battery",
    }
}

/// One action with the rule that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub action: AgentAction,
    pub reason: String,
}

fn decide(out: &mut Vec<Decision>, action: AgentAction, reason: impl Into<String>) {
    out.push(Decision {
        action,
        reason: reason.into(),
    });
}

/// Link-layer news about messages this agent sent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkNotice {
    TransferUndeliverable { transfer_id: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum OffloadResult {
    Receipt(ServerReceipt),
    Failed,
}

/// Everything an agent learns in one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickInput {
    pub tick: u64,
    pub position: LocalPoint,
    pub battery_pct: f64,
    pub inbox: Vec<Received>,
    pub notices: Vec<LinkNotice>,
    pub offload: Option<OffloadResult>,
    pub controller_fail: bool,
}

impl TickInput {
    pub fn reading(tick: u64, position: LocalPoint, battery_pct: f64) -> Self {
        TickInput {
            tick,
            position,
            battery_pct,
            inbox: Vec::new(),
            notices: Vec::new(),
            offload: None,
            controller_fail: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UavState {
    pub uav_id: UavId,
    pub position: LocalPoint,
    pub battery: BatteryModel,
    pub mode: Mode,
    pub current_segment: Option<AssignedSegment>,
    pub next_index: usize,
    pub cached: Vec<Waypoint>,
    pub storage: Vec<ImageRecord>,
    pub flight_log: Vec<FlightLogEntry>,
    pub target: Option<Target>,
    pub at_station: Option<usize>,
    pub last_executed: Option<Waypoint>,
    pub outbound: Vec<OutboundTransfer>,
    pub peers: BTreeMap<UavId, PeerInfo>,
    /// Transfers this agent accepted, by `(requester, transfer_id)`.
    pub accepted_transfers: BTreeSet<(UavId, u32)>,
    pub received_uploads: BTreeSet<u32>,
    /// Ids this agent created for anchor waypoints.
    pub minted: Vec<WaypointId>,
    pub service_left: u32,
    pub sortie_start_pct: f64,
    pub sortie_distance_m: f64,
    pub offload_failed: bool,
    pub stuck: bool,
    /// Transfers this agent turned down, as `(requester, transfer_id, reason)`.
    #[serde(default)]
    rejected_transfers: BTreeSet<(UavId, u32, String)>,
    #[serde(default)]
    swap_requested: bool,
    next_transfer_id: u32,
    next_mint: u32,
    next_record: u32,
    tick: u64,
}

impl UavState {
    pub fn new(uav_id: UavId, position: LocalPoint, battery: BatteryModel) -> Self {
        UavState {
            uav_id,
            position,
            battery,
            mode: Mode::Idle,
            current_segment: None,
            next_index: 0,
            cached: Vec::new(),
            storage: Vec::new(),
            flight_log: Vec::new(),
            target: None,
            at_station: None,
            last_executed: None,
            outbound: Vec::new(),
            peers: BTreeMap::new(),
            accepted_transfers: BTreeSet::new(),
            received_uploads: BTreeSet::new(),
            minted: Vec::new(),
            service_left: 0,
            sortie_start_pct: battery.level_pct,
            sortie_distance_m: 0.0,
            offload_failed: false,
            stuck: false,
            rejected_transfers: BTreeSet::new(),
            swap_requested: false,
            next_transfer_id: 1,
            next_mint: 1,
            next_record: 1,
            tick: 0,
        }
    }

    /// Marks the agent as parked at a station, if `position` is one.
    pub fn with_station(mut self, cfg: &AgentConfig) -> Self {
        self.at_station = cfg.station_at(self.position);
        self
    }

    /// Next waypoint to fly: the cache first, then the assigned segment.
    pub fn next_work(&self) -> Option<Waypoint> {
        self.cached.first().copied().or_else(|| {
            self.current_segment
                .as_ref()
                .and_then(|s| s.waypoints.get(self.next_index).copied())
        })
    }

    /// Waypoints still owned by this agent: cache plus unflown segment.
    pub fn pending_work(&self) -> Vec<Waypoint> {
        let mut v = self.cached.clone();
        if let Some(s) = &self.current_segment {
            v.extend_from_slice(&s.waypoints[self.next_index.min(s.waypoints.len())..]);
        }
        v
    }

    pub fn has_work(&self) -> bool {
        self.next_work().is_some()
    }

    /// Fresh record id: the agent's system id in the high word.
    pub fn next_record_id(&mut self) -> u64 {
        let id = ((self.uav_id.0 as u64) << 32) | self.next_record as u64;
        self.next_record += 1;
        id
    }

    pub fn store(&mut self, record: ImageRecord) {
        self.storage.push(record);
    }

    fn mint(&mut self) -> WaypointId {
        let id = WaypointId::minted(self.uav_id.0, self.next_mint);
        self.next_mint += 1;
        self.minted.push(id);
        id
    }

    fn can_reach(&self, cfg: &AgentConfig, p: LocalPoint) -> bool {
        if self.battery.level_pct <= self.battery.threshold_pct {
            return false;
        }
        let Some(bss) = cfg.nearest_swap_station(p) else {
            return false;
        };
        dist(self.position, p) + dist(p, cfg.stations[bss].position) <= reachable_distance(&self.battery)
    }

    fn is_capture_leg(&self, wp: &Waypoint) -> bool {
        self.last_executed
            .is_some_and(|l| l.plan_index + 1 == wp.plan_index && l.pos == self.position)
    }

    fn peer_snapshots(&self, cfg: &AgentConfig) -> Vec<PeerSnapshot> {
        self.peers
            .iter()
            .filter(|(id, _)| **id != self.uav_id)
            .map(|(id, p)| PeerSnapshot {
                id: *id,
                position: p.position,
                live: self.tick.saturating_sub(p.heard_tick) <= cfg.peer_timeout_ticks,
                failed: p.mode == Mode::Failed,
            })
            .collect()
    }

    /// Removes and returns all remaining work. When the agent is partway
    /// through a plan leg, an anchor copy of the leg's start is put first so
    /// whoever resumes flies the whole leg.
    pub fn take_remaining_work(&mut self) -> Vec<Waypoint> {
        let mut work = Vec::new();
        if let (Some(last), Some(first)) = (self.last_executed, self.next_work()) {
            if last.plan_index + 1 == first.plan_index {
                let id = self.mint();
                work.push(Waypoint {
                    id,
                    plan_index: last.plan_index,
                    pos: last.pos,
                });
            }
        }
        work.append(&mut self.cached);
        if let Some(seg) = self.current_segment.take() {
            work.extend_from_slice(&seg.waypoints[self.next_index.min(seg.waypoints.len())..]);
        }
        self.next_index = 0;
        self.last_executed = None;
        work
    }

    /// Runs one tick of the decision logic.
    pub fn step(&mut self, cfg: &AgentConfig, input: TickInput) -> Result<Vec<Decision>, AgentError> {
        if input.inbox.len() > cfg.max_inbox {
            return Err(AgentError::InboxOverflow {
                len: input.inbox.len(),
                max: cfg.max_inbox,
            });
        }
        if !(0.0..=100.0).contains(&input.battery_pct) {
            return Err(AgentError::InvalidInput(format!(
                "battery {} outside [0, 100]",
                input.battery_pct
            )));
        }
        let mut out = Vec::new();
        if self.mode == Mode::Failed {
            return Ok(out);
        }
        let moved = if self.mode.airborne() {
            dist(self.position, input.position)
        } else {
            0.0
        };
        self.sortie_distance_m += moved;
        let expected = self.battery.drain_const * moved;
        let dropped = self.battery.level_pct - input.battery_pct;
        if dropped > 2.0 * expected + SUDDEN_DROP_PCT {
            self.sortie_start_pct -= dropped - expected;
        }
        self.position = input.position;
        self.battery.level_pct = input.battery_pct;
        self.tick = input.tick;

        if input.controller_fail || (self.mode.airborne() && input.battery_pct <= 0.0) {
            let why = if input.controller_fail {
                "controller failure"
            } else {
                "battery depleted in flight"
            };
            self.mode = Mode::Failed;
            self.target = None;
            decide(&mut out, AgentAction::Halt, why);
            return Ok(out);
        }

        for r in input.inbox {
            self.handle_message(cfg, r, &mut out);
        }
        for n in input.notices {
            match n {
                LinkNotice::TransferUndeliverable { transfer_id } => {
                    if let Some(o) = self.outbound.iter_mut().find(|o| o.transfer_id == transfer_id) {
                        o.unanswered = true;
                        decide(
                            &mut out,
                            AgentAction::notify(
                                EventCode::TransferFailed,
                                format!("transfer {transfer_id} unanswered"),
                            ),
                            "peer unreachable; offer held until the peer is heard again",
                        );
                    }
                }
            }
        }
        self.repeat_unanswered(cfg, &mut out);
        if let Some(result) = input.offload {
            match result {
                OffloadResult::Receipt(receipt) => {
                    let accepted: BTreeSet<u64> = receipt.accepted.iter().copied().collect();
                    self.storage.retain(|r| !accepted.contains(&r.record_id));
                    self.offload_failed = !self.storage.is_empty();
                }
                OffloadResult::Failed => self.offload_failed = true,
            }
            if self.mode == Mode::Offloading {
                self.mode = Mode::Idle;
            }
        }

        self.advance(cfg, &mut out)?;
        Ok(out)
    }

    fn handle_message(&mut self, cfg: &AgentConfig, r: Received, out: &mut Vec<Decision>) {
        match r.msg {
            LinkMessage::Telemetry {
                position,
                battery_pct,
                mode,
                ..
            } => {
                if r.from == GROUND_STATION_SYS || r.from == self.uav_id.0 {
                    return;
                }
                if let Ok(p) = project(cfg.origin, position) {
                    self.peers.insert(
                        UavId(r.from),
                        PeerInfo {
                            position: p,
                            battery_pct,
                            mode,
                            heard_tick: self.tick,
                        },
                    );
                }
            }
            LinkMessage::MissionUpload { mission_id, items } => {
                if !self.received_uploads.insert(mission_id) || items.is_empty() {
                    return;
                }
                match &mut self.current_segment {
                    Some(seg) => seg.waypoints.extend(items),
                    None => {
                        self.current_segment = Some(AssignedSegment {
                            mission_id,
                            waypoints: items,
                        });
                        self.next_index = 0;
                    }
                }
                self.stuck = false;
                if self.mode == Mode::Idle {
                    self.mode = Mode::MissionAssigned;
                }
            }
            LinkMessage::TransferRequest {
                transfer_id, waypoints, ..
            } => {
                let peer = UavId(r.from);
                if self.accepted_transfers.contains(&(peer, transfer_id)) {
                    decide(
                        out,
                        AgentAction::AcceptTransfer {
                            peer,
                            transfer_id,
                            count: waypoints.len(),
                        },
                        "repeat of an accepted transfer",
                    );
                    return;
                }
                if let Some((_, _, reason)) = self
                    .rejected_transfers
                    .iter()
                    .find(|r| r.0 == peer && r.1 == transfer_id)
                {
                    decide(
                        out,
                        AgentAction::RejectTransfer {
                            peer,
                            transfer_id,
                            reason: reason.clone(),
                        },
                        "repeat of a rejected transfer",
                    );
                    return;
                }
                match accept_transfer(self, cfg, &waypoints) {
                    Ok(()) => {
                        let count = waypoints.len();
                        self.cached.extend(waypoints);
                        self.accepted_transfers.insert((peer, transfer_id));
                        self.stuck = false;
                        decide(
                            out,
                            AgentAction::AcceptTransfer {
                                peer,
                                transfer_id,
                                count,
                            },
                            "idle with enough range",
                        );
                    }
                    Err(reason) => {
                        self.rejected_transfers
                            .insert((peer, transfer_id, reason_name(reason).into()));
                        decide(
                            out,
                            AgentAction::RejectTransfer {
                                peer,
                                transfer_id,
                                reason: reason_name(reason).into(),
                            },
                            match reason {
                                RejectReason::Busy => "not idle",
                                RejectReason::Battery => "reachable distance below transferred length plus ferry",
                            },
                        )
                    }
                }
            }
            LinkMessage::TransferAccept { transfer_id } => {
                if let Some(i) = self.outbound.iter().position(|o| o.transfer_id == transfer_id) {
                    self.outbound.remove(i);
                }
                if self.mode == Mode::Transferring && self.outbound.is_empty() {
                    self.mode = Mode::ReturningToBss;
                }
            }
            LinkMessage::TransferReject { transfer_id, .. } => {
                self.restore_transfer(transfer_id);
            }
            LinkMessage::MissionAck { .. } | LinkMessage::NotifyGs { .. } | LinkMessage::OffloadManifest { .. } => {}
        }
    }

    /// Takes back work from a rejected transfer.
    fn restore_transfer(&mut self, transfer_id: u32) -> bool {
        let Some(i) = self.outbound.iter().position(|o| o.transfer_id == transfer_id) else {
            return false;
        };
        let t = self.outbound.remove(i);
        let mut work = t.waypoints;
        work.append(&mut self.cached);
        self.cached = work;
        self.stuck = false;
        if self.mode == Mode::Transferring && self.outbound.is_empty() {
            self.mode = Mode::ReturningToBss;
        }
        true
    }

    /// Asks again about unanswered offers whose peer is live. The peer
    /// answers a repeated request the same way it answered the first one.
    fn repeat_unanswered(&mut self, cfg: &AgentConfig, out: &mut Vec<Decision>) {
        let live: BTreeSet<UavId> = self
            .peer_snapshots(cfg)
            .into_iter()
            .filter(|p| p.live && !p.failed)
            .map(|p| p.id)
            .collect();
        let now = self.tick;
        for o in self.outbound.iter_mut() {
            if now.saturating_sub(o.asked_tick) >= cfg.answer_timeout_ticks {
                o.unanswered = true;
            }
        }
        for o in self
            .outbound
            .iter_mut()
            .filter(|o| o.unanswered && live.contains(&o.peer))
        {
            o.unanswered = false;
            o.asked_tick = now;
            decide(
                out,
                AgentAction::SendTransferRequest {
                    peer: o.peer,
                    transfer_id: o.transfer_id,
                    waypoints: o.waypoints.clone(),
                },
                "peer heard again; repeating unanswered offer",
            );
        }
    }

    fn advance(&mut self, cfg: &AgentConfig, out: &mut Vec<Decision>) -> Result<(), AgentError> {
        match self.mode {
            Mode::Idle | Mode::MissionAssigned => self.try_depart(cfg, out),
            Mode::Flying => self.fly(cfg, out)?,
            Mode::ReturningToBss | Mode::Transferring => {
                let Some(Target::Station { index }) = self.target else {
                    return Err(AgentError::InvalidTransition {
                        mode: self.mode,
                        detail: "returning without a station target".into(),
                    });
                };
                if self.position == cfg.stations[index].position {
                    self.mode = Mode::AtBss;
                    self.target = None;
                    self.at_station = Some(index);
                    self.service_left = cfg.service_ticks;
                    decide(out, AgentAction::Land { station: index }, "arrived at station");
                }
            }
            Mode::AtBss => {
                if self.service_left > 0 {
                    self.service_left -= 1;
                }
                if self.service_left == 0 {
                    self.finish_service(cfg, out);
                }
            }
            Mode::Offloading => {}
            Mode::Failed => {}
        }
        Ok(())
    }

    fn finish_service(&mut self, cfg: &AgentConfig, out: &mut Vec<Decision>) {
        let station = self.at_station.map(|i| cfg.stations[i]);
        let needs_swap = self.swap_requested || self.has_work() || self.battery.level_pct <= self.battery.threshold_pct;
        self.swap_requested = false;
        if needs_swap && station.is_some_and(|s| s.kind.swaps()) {
            let entry = FlightLogEntry {
                initial_pct: self.sortie_start_pct,
                final_pct: self.battery.level_pct,
                distance_m: self.sortie_distance_m,
                mission_id: self.flight_log.len() as u64 + 1,
            };
            if entry.distance_m > 0.0 && entry.final_pct <= entry.initial_pct {
                self.flight_log.push(entry);
                if let Ok(c) = update_drain_const_with(&self.flight_log, cfg.ema_alpha) {
                    if c > 0.0 {
                        self.battery.drain_const = c;
                    }
                }
            }
            self.battery.level_pct = 100.0;
            decide(out, AgentAction::SwapBattery, "service complete");
        }
        self.sortie_start_pct = self.battery.level_pct;
        self.sortie_distance_m = 0.0;
        if !self.storage.is_empty() && station.is_some_and(|s| s.kind.offloads()) {
            self.mode = Mode::Offloading;
            decide(
                out,
                AgentAction::BeginOffload {
                    records: self.storage.len(),
                },
                "storage holds captures",
            );
        } else {
            self.mode = if self.has_work() {
                Mode::MissionAssigned
            } else {
                Mode::Idle
            };
        }
    }

    fn take_off(&mut self, wp: Waypoint, out: &mut Vec<Decision>, reason: &str) {
        self.mode = Mode::Flying;
        self.at_station = None;
        self.sortie_start_pct = self.battery.level_pct;
        self.sortie_distance_m = 0.0;
        self.stuck = false;
        let capture = self.is_capture_leg(&wp);
        self.target = Some(Target::Waypoint { waypoint: wp });
        decide(out, AgentAction::GoTo { waypoint: wp, capture }, reason);
    }

    fn try_depart(&mut self, cfg: &AgentConfig, out: &mut Vec<Decision>) {
        match self.next_work() {
            Some(wp) => {
                if self.can_reach(cfg, wp.pos) {
                    self.take_off(wp, out, "work pending and reachable");
                    return;
                }
                let parked_at_swap = self.at_station.is_some_and(|i| cfg.stations[i].kind.swaps());
                if self.battery.level_pct < 100.0 {
                    self.swap_requested = true;
                    if parked_at_swap {
                        self.mode = Mode::AtBss;
                        self.service_left = cfg.service_ticks;
                    } else if let Some(i) = cfg.nearest_swap_station(self.position) {
                        self.go_to_station(cfg, i, Mode::ReturningToBss, out, "battery too low for pending work");
                    }
                } else if !self.stuck {
                    self.stuck = true;
                    decide(
                        out,
                        AgentAction::notify(
                            EventCode::WorkUnreachable,
                            format!("waypoint {} out of range on a full battery", wp.id.0),
                        ),
                        "pending work unreachable even after a swap",
                    );
                }
            }
            None => {
                if self.mode == Mode::MissionAssigned {
                    self.mode = Mode::Idle;
                }
                if self.storage.is_empty() || self.offload_failed {
                    return;
                }
                let here = self.at_station.is_some_and(|i| cfg.stations[i].kind.offloads());
                if here {
                    return;
                }
                if let Some(i) = cfg.nearest_offload_station(self.position) {
                    let d = dist(self.position, cfg.stations[i].position);
                    if self.battery.level_pct > self.battery.threshold_pct && d <= reachable_distance(&self.battery) {
                        self.go_to_station(cfg, i, Mode::ReturningToBss, out, "captures waiting for offload");
                    }
                }
            }
        }
    }

    fn go_to_station(&mut self, cfg: &AgentConfig, index: usize, mode: Mode, out: &mut Vec<Decision>, reason: &str) {
        if mode.airborne() && self.at_station.is_some() {
            self.at_station = None;
            self.sortie_start_pct = self.battery.level_pct;
            self.sortie_distance_m = 0.0;
        }
        self.mode = mode;
        self.target = Some(Target::Station { index });
        decide(
            out,
            AgentAction::GoToBss {
                station: index,
                position: cfg.stations[index].position,
            },
            reason,
        );
    }

    fn fly(&mut self, cfg: &AgentConfig, out: &mut Vec<Decision>) -> Result<(), AgentError> {
        let Some(Target::Waypoint { waypoint: wp }) = self.target else {
            return Err(AgentError::InvalidTransition {
                mode: self.mode,
                detail: "flying without a waypoint target".into(),
            });
        };
        if self.position != wp.pos {
            if !self.can_reach(cfg, wp.pos) {
                self.abort(cfg, out, "next waypoint no longer reachable mid-leg");
            }
            return Ok(());
        }

        if let Some(i) = self.cached.iter().position(|c| c.id == wp.id) {
            self.cached.remove(i);
        } else if self
            .current_segment
            .as_ref()
            .and_then(|s| s.waypoints.get(self.next_index))
            .is_some_and(|s| s.id == wp.id)
        {
            self.next_index += 1;
        } else {
            return Err(AgentError::InvalidTransition {
                mode: self.mode,
                detail: format!("arrived at waypoint {} which is not the next work item", wp.id.0),
            });
        }
        self.last_executed = Some(wp);
        decide(out, AgentAction::Capture { waypoint: wp }, "arrived at waypoint");

        match self.next_work() {
            Some(next) => {
                if self.can_reach(cfg, next.pos) {
                    let capture = self.is_capture_leg(&next);
                    self.target = Some(Target::Waypoint { waypoint: next });
                    decide(
                        out,
                        AgentAction::GoTo {
                            waypoint: next,
                            capture,
                        },
                        "battery above threshold and next waypoint reachable",
                    );
                } else {
                    self.abort(cfg, out, "next waypoint plus return leg exceeds reachable distance");
                }
            }
            None => {
                self.last_executed = None;
                match cfg.nearest_swap_station(self.position) {
                    Some(i) => self.go_to_station(cfg, i, Mode::ReturningToBss, out, "assigned work complete"),
                    None => {
                        return Err(AgentError::InvalidTransition {
                            mode: self.mode,
                            detail: "no swap station configured".into(),
                        })
                    }
                }
            }
        }
        Ok(())
    }

    fn abort(&mut self, cfg: &AgentConfig, out: &mut Vec<Decision>, why: &str) {
        decide(
            out,
            AgentAction::notify(
                EventCode::LowBattery,
                format!(
                    "battery {:.2}% insufficient at ({:.1}, {:.1})",
                    self.battery.level_pct, self.position.x, self.position.y
                ),
            ),
            why,
        );
        let work = self.take_remaining_work();
        self.swap_requested = true;
        let mut mode = Mode::ReturningToBss;
        if !work.is_empty() {
            match nearest_peer(self.position, &self.peer_snapshots(cfg)) {
                Some(peer) => {
                    let transfer_id = self.next_transfer_id;
                    self.next_transfer_id += 1;
                    self.outbound.push(OutboundTransfer {
                        transfer_id,
                        peer,
                        waypoints: work.clone(),
                        unanswered: false,
                        asked_tick: self.tick,
                    });
                    decide(
                        out,
                        AgentAction::SendTransferRequest {
                            peer,
                            transfer_id,
                            waypoints: work,
                        },
                        "offer remaining work to nearest live peer",
                    );
                    mode = Mode::Transferring;
                }
                None => self.cached = work,
            }
        }
        let Some(i) = cfg.nearest_swap_station(self.position) else {
            self.mode = mode;
            return;
        };
        self.go_to_station(cfg, i, mode, out, "return for battery swap");
    }
}

/// Decides whether the agent can take on `waypoints` from a peer. It must
/// have no work of its own, be idle or landed, and have range for the
/// transferred path plus the ferry leg to its first waypoint. A landed agent
/// at a swap station is judged on the full battery it will leave with.
pub fn accept_transfer(state: &UavState, cfg: &AgentConfig, waypoints: &[Waypoint]) -> Result<(), RejectReason> {
    if !matches!(state.mode, Mode::Idle | Mode::AtBss) || state.has_work() {
        return Err(RejectReason::Busy);
    }
    let Some(first) = waypoints.first() else {
        return Err(RejectReason::Busy);
    };
    let internal: f64 = waypoints.windows(2).map(|w| dist(w[0].pos, w[1].pos)).sum();
    let ferry = dist(state.position, first.pos);
    let landed_at_swap = state.mode == Mode::AtBss
        && state
            .at_station
            .and_then(|i| cfg.stations.get(i))
            .is_some_and(|s| s.kind.swaps());
    let battery = if landed_at_swap {
        state.battery.with_level(100.0)
    } else {
        state.battery
    };
    if reachable_distance(&battery) >= internal + ferry {
        Ok(())
    } else {
        Err(RejectReason::Battery)
    }
}

/// Builds the record for a capture at `at`, with synthetic reflectance
/// sampled from the scenario ground truth.
pub fn geotag<R: Rng>(
    state: &mut UavState,
    origin: GeoPoint,
    at: LocalPoint,
    tick: u64,
    truth: &FieldTruth,
    jitter: f64,
    rng: &mut R,
) -> ImageRecord {
    let record_id = state.next_record_id();
    ImageRecord {
        record_id,
        uav_id: state.uav_id,
        position: unproject(origin, at),
        local: at,
        timestamp: tick,
        payload: truth.sample(at, jitter, rng),
    }
}
