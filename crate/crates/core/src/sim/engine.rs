use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::ground::{GroundStation, GsAction};
use super::physics::{advance, drain_micro, from_micro, to_micro, turn_angle_deg, FULL_MICRO};
use super::report::*;
use super::scenario::{FaultEvent, FaultKind, Scenario};
use super::trace::{event_line, footer_line, header_line, EventKind, TraceEvent, TraceFooter};
use super::SimError;
use crate::agent::{
    event_from_name, geotag, AgentAction, AgentConfig, Decision, LinkNotice, OffloadResult, TickInput, UavState,
};
use crate::allocator::BatteryModel;
use crate::coverage::{plan_field, raster_coverage, FieldSpec, MissionPlan};
use crate::field::{build_heatmap, Classifier, FieldTruth, GridSpec, ImageRecord, RecordStore};
use crate::geo::geojson::FieldLayers;
use crate::geo::{dist, unproject, LocalPoint};
use crate::link::{
    offload, Channel, LinkMessage, MsgType, OffloadItem, OffloadServer, Outcome, Received, RejectReason,
    ReliableEndpoint, RetryPolicy, SendHandle, WifiLink,
};
use crate::{Mode, UavId, WaypointId, GROUND_STATION_SYS};

/// Raster pitch used to measure coverage, meters.
pub const COVERAGE_PITCH_M: f64 = 0.5;

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: SimReport,
    pub report_json: String,
    pub trace: String,
    pub heatmap_json: String,
    pub records: Vec<ImageRecord>,
}

impl RunOutput {
    pub fn report_sha256(&self) -> String {
        sha256_hex(self.report_json.as_bytes())
    }

    pub fn trace_sha256(&self) -> String {
        sha256_hex(self.trace.as_bytes())
    }

    /// Writes `report.json`, `trace.jsonl`, `heatmap.json` and
    /// `records.jsonl` into `dir`.
    pub fn write_to(&self, dir: &std::path::Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), &self.report_json)?;
        std::fs::write(dir.join("trace.jsonl"), &self.trace)?;
        std::fs::write(dir.join("heatmap.json"), &self.heatmap_json)?;
        let mut records = String::new();
        for r in &self.records {
            records.push_str(&serde_json::to_string(r).expect("records serialize"));
            records.push('\n');
        }
        std::fs::write(dir.join("records.jsonl"), records)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Derives an independent sub-seed from the run seed.
fn mix(seed: u64, salt: u64, stream: u64) -> u64 {
    let mut z = seed ^ salt.rotate_left(17) ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy)]
struct Goal {
    dest: LocalPoint,
    capture: bool,
    start: LocalPoint,
    length: f64,
    progress: f64,
}

#[derive(Debug, Clone)]
struct Body {
    pos: LocalPoint,
    battery: i64,
    drain_const: f64,
    goal: Option<Goal>,
    last_dir: Option<LocalPoint>,
    failed: bool,
    controller_fail: bool,
    distance: f64,
    turns: u32,
    swaps: u32,
    transfers_in: u32,
    transfers_out: u32,
    executed: u64,
    captures: u64,
    energy: EnergyLedger,
}

#[derive(Debug, Clone)]
struct PendingOffload {
    due: u64,
    idx: usize,
    manifest_id: u64,
    result: Result<(crate::link::ServerReceipt, Vec<ImageRecord>), String>,
}

#[derive(Debug, Clone, Copy)]
enum SentKind {
    TransferRequest(u32),
    Other,
}

pub struct Engine {
    scenario: Scenario,
    field: FieldSpec,
    truth: FieldTruth,
    plan: MissionPlan,
    classifier: Box<dyn Classifier + Send + Sync>,
    agent_cfg: AgentConfig,
    agents: Vec<UavState>,
    bodies: Vec<Body>,
    endpoints: Vec<ReliableEndpoint>,
    inboxes: Vec<Vec<Received>>,
    notices: Vec<Vec<LinkNotice>>,
    offload_results: Vec<Option<OffloadResult>>,
    sent: Vec<BTreeMap<SendHandle, SentKind>>,
    gs: GroundStation,
    channel: Channel,
    wifi: WifiLink,
    server: OffloadServer,
    store: RecordStore,
    pending_offloads: Vec<PendingOffload>,
    next_manifest: u64,
    capture_rng: ChaCha8Rng,
    capture_interval: f64,
    schedule: Vec<FaultEvent>,
    tick: u64,
    status: RunStatus,
    trace: Vec<String>,
    executed: BTreeSet<WaypointId>,
    executed_twice: u64,
    swaths: Vec<(LocalPoint, LocalPoint)>,
    audit_violations: u64,
    first_violation: Option<String>,
    recovered: BTreeSet<UavId>,
    redispatches: u64,
    transfers: TransferSummary,
    accepted_seen: BTreeSet<(UavId, UavId, u32)>,
    requested_seen: BTreeSet<(UavId, u32)>,
    rejected_seen: BTreeSet<(UavId, UavId, u32)>,
    offload_summary: OffloadSummary,
    failed_sends: u64,
    timeline: Vec<TimelineEntry>,
    output: Option<RunOutput>,
}

impl Engine {
    pub fn new(scenario: Scenario) -> Result<Engine, SimError> {
        scenario.validate()?;
        let layers = FieldLayers::parse(&scenario.field.to_string()).map_err(|e| SimError::Field(e.to_string()))?;
        let field = FieldSpec::from_layers(&layers)?;
        let truth = FieldTruth::from_layers(&layers).map_err(|e| SimError::Field(e.to_string()))?;
        let plan = plan_field(&field, &scenario.sweep)?;
        let classifier = scenario
            .classifier
            .build()
            .map_err(|e| SimError::InvalidScenario(e.to_string()))?;

        let mut agent_cfg = AgentConfig::new(field.origin, scenario.stations.clone());
        agent_cfg.service_ticks = scenario.service_ticks;
        agent_cfg.peer_timeout_ticks = scenario.peer_timeout_ticks;
        agent_cfg.max_inbox = 4096;

        let mut radio = scenario.radio.clone();
        radio.seed = mix(scenario.seed, radio.seed, 1);
        let policy = RetryPolicy::from(&radio);
        agent_cfg.answer_timeout_ticks = 2 * policy.ack_timeout_ticks * (u64::from(policy.max_retries) + 1);
        let mut channel = Channel::new(radio)?;
        channel.subscribe(GROUND_STATION_SYS, MsgType::Telemetry);
        channel.set_position(GROUND_STATION_SYS, scenario.stations[0].position);

        let mut fleet = scenario.fleet.clone();
        fleet.sort_by_key(|m| m.uav_id);
        let mut agents = Vec::new();
        let mut bodies = Vec::new();
        let mut endpoints = Vec::new();
        let mut models = BTreeMap::new();
        for m in &fleet {
            let battery = BatteryModel::new(m.battery_pct, m.threshold_pct, m.drain_const)?;
            agents.push(UavState::new(m.uav_id, m.start, battery).with_station(&agent_cfg));
            let level = to_micro(m.battery_pct);
            bodies.push(Body {
                pos: m.start,
                battery: level,
                drain_const: m.physical_drain(),
                goal: None,
                last_dir: None,
                failed: false,
                controller_fail: false,
                distance: 0.0,
                turns: 0,
                swaps: 0,
                transfers_in: 0,
                transfers_out: 0,
                executed: 0,
                captures: 0,
                energy: EnergyLedger {
                    initial_micro: level,
                    final_micro: level,
                    ..Default::default()
                },
            });
            endpoints.push(ReliableEndpoint::new(m.uav_id.0, 1, policy));
            channel.subscribe(m.uav_id.0, MsgType::Telemetry);
            channel.set_position(m.uav_id.0, m.start);
            models.insert(m.uav_id, (m.threshold_pct, m.drain_const));
        }
        let n = agents.len();
        let gs = GroundStation::new(field.origin, policy, models, scenario.failure_timeout_ticks);

        let mut schedule = scenario.faults.clone();
        schedule.sort_by_key(|f| f.at_tick);
        let capture_interval = scenario.capture_interval_m.unwrap_or(plan.spacing);
        let trace = vec![header_line(&scenario)];
        Ok(Engine {
            wifi: WifiLink::new(
                scenario.offload.corrupt_prob,
                mix(scenario.seed, scenario.offload.seed, 3),
            ),
            capture_rng: ChaCha8Rng::seed_from_u64(mix(scenario.seed, 0, 2)),
            scenario,
            field,
            truth,
            plan,
            classifier,
            agent_cfg,
            agents,
            bodies,
            endpoints,
            inboxes: vec![Vec::new(); n],
            notices: vec![Vec::new(); n],
            offload_results: vec![None; n],
            sent: vec![BTreeMap::new(); n],
            gs,
            channel,
            server: OffloadServer::new(),
            store: RecordStore::in_memory(),
            pending_offloads: Vec::new(),
            next_manifest: 1,
            capture_interval,
            schedule,
            tick: 0,
            status: RunStatus::Running,
            trace,
            executed: BTreeSet::new(),
            executed_twice: 0,
            swaths: Vec::new(),
            audit_violations: 0,
            first_violation: None,
            recovered: BTreeSet::new(),
            redispatches: 0,
            transfers: TransferSummary::default(),
            accepted_seen: BTreeSet::new(),
            requested_seen: BTreeSet::new(),
            rejected_seen: BTreeSet::new(),
            offload_summary: OffloadSummary::default(),
            failed_sends: 0,
            timeline: Vec::new(),
            output: None,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn plan(&self) -> &MissionPlan {
        &self.plan
    }

    pub fn field(&self) -> &FieldSpec {
        &self.field
    }

    pub fn agents(&self) -> &[UavState] {
        &self.agents
    }

    /// Next tick to be simulated; equals the number of ticks run so far.
    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn status(&self) -> RunStatus {
        self.status
    }

    pub fn is_running(&self) -> bool {
        self.status == RunStatus::Running
    }

    pub fn trace_lines(&self) -> &[String] {
        &self.trace
    }

    pub fn output(&self) -> Option<&RunOutput> {
        self.output.as_ref()
    }

    fn index_of(&self, id: UavId) -> Option<usize> {
        self.agents.iter().position(|a| a.uav_id == id)
    }

    /// Schedules a fault for the next tick boundary or later. Returns the
    /// fault with the tick it will actually fire at.
    pub fn inject(&mut self, mut fault: FaultEvent) -> Result<FaultEvent, SimError> {
        if !self.is_running() {
            return Err(SimError::NotRunning);
        }
        fault.validate()?;
        if self.index_of(fault.uav_id).is_none() {
            return Err(SimError::InvalidScenario(format!(
                "fault targets unknown {}",
                fault.uav_id
            )));
        }
        fault.at_tick = fault.at_tick.max(self.tick);
        self.schedule_raw(fault);
        Ok(fault)
    }

    pub(crate) fn schedule_raw(&mut self, fault: FaultEvent) {
        let pos = self.schedule.partition_point(|f| f.at_tick <= fault.at_tick);
        self.schedule.insert(pos, fault);
    }

    fn emit(&mut self, kind: EventKind, payload: serde_json::Value) {
        let line = event_line(&TraceEvent {
            tick: self.tick,
            kind,
            payload,
        });
        self.trace.push(line);
    }

    fn note(&mut self, kind: &str, uav: Option<UavId>, summary: String) {
        self.timeline.push(TimelineEntry {
            tick: self.tick,
            kind: kind.into(),
            uav_id: uav,
            summary,
        });
    }

    fn emit_gs(&mut self, actions: Vec<GsAction>, reason: &str) {
        for a in actions {
            let summary = match &a {
                GsAction::MissionUpload { uav_id, count, .. } => Some(format!("upload {count} waypoints to {uav_id}")),
                GsAction::Requeue { uav_id, count, .. } => {
                    Some(format!("requeue {count} waypoints undelivered to {uav_id}"))
                }
                GsAction::Recover { uav_id, count } => Some(format!("recover {count} waypoints from failed {uav_id}")),
                GsAction::Queue { count } => Some(format!("queue {count} waypoints beyond fleet range")),
                GsAction::Notified { uav_id, event, detail } => Some(format!("{uav_id} reported {event:?}: {detail}")),
            };
            if let Some(s) = summary {
                self.note("ground_station", None, s);
            }
            let payload = json!({
                "uav_id": GROUND_STATION_SYS,
                "mode": serde_json::Value::Null,
                "battery": serde_json::Value::Null,
                "action": serde_json::to_value(&a).expect("gs action serializes"),
                "reason": reason,
            });
            self.emit(EventKind::AgentAction, payload);
        }
    }

    /// Runs one tick.
    pub fn step(&mut self) -> Result<RunStatus, SimError> {
        if !self.is_running() {
            return Ok(self.status);
        }
        let t = self.tick;
        if t == 0 {
            let fleet: Vec<(UavId, BatteryModel)> = self.agents.iter().map(|a| (a.uav_id, a.battery)).collect();
            let actions = self
                .gs
                .initial_dispatch(t, &self.plan.waypoints, &fleet, &self.scenario.allocator)?;
            self.emit_gs(actions, "initial mission allocation");
        }

        self.apply_faults(t);
        self.deliver_frames(t)?;
        self.poll_endpoints(t)?;
        self.complete_offloads(t)?;
        self.ground_station(t)?;
        for idx in 0..self.agents.len() {
            self.step_agent(t, idx)?;
        }
        for idx in 0..self.bodies.len() {
            self.move_body(t, idx);
        }
        self.transmit(t)?;
        self.audit(t);

        self.tick += 1;
        if self.finished() {
            self.finalize(RunStatus::Done)?;
        } else if self.tick >= self.scenario.max_ticks {
            self.finalize(RunStatus::TickLimitExceeded)?;
        }
        Ok(self.status)
    }

    pub fn run_to_end(&mut self) -> Result<(), SimError> {
        while self.is_running() {
            self.step()?;
        }
        Ok(())
    }

    /// Stops the run at the current tick boundary.
    pub fn abort(&mut self) -> Result<(), SimError> {
        if self.is_running() {
            self.finalize(RunStatus::Aborted)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<RunOutput, SimError> {
        self.output.take().ok_or(SimError::NotRunning)
    }

    fn apply_faults(&mut self, t: u64) {
        let due = self.schedule.partition_point(|f| f.at_tick <= t);
        let faults: Vec<FaultEvent> = self.schedule.drain(..due).collect();
        for f in faults {
            self.emit(EventKind::Fault, serde_json::to_value(f).expect("fault serializes"));
            let Some(idx) = self.index_of(f.uav_id) else { continue };
            let summary = match f.kind {
                FaultKind::BatteryDrop { pct } => {
                    let b = &mut self.bodies[idx];
                    let drop = to_micro(pct).min(b.battery);
                    b.battery -= drop;
                    b.energy.fault_loss_micro += drop;
                    format!("battery drop {pct}%")
                }
                FaultKind::CommBlackout { duration } => {
                    self.channel.add_blackout(f.uav_id.0, t, t + duration);
                    format!("radio blackout for {duration} ticks")
                }
                FaultKind::ControllerFail => {
                    self.bodies[idx].controller_fail = true;
                    "controller failure".to_string()
                }
            };
            self.note("fault", Some(f.uav_id), summary);
        }
    }

    fn deliver_frames(&mut self, t: u64) -> Result<(), SimError> {
        for d in self.channel.deliver(t) {
            if d.to == GROUND_STATION_SYS {
                if let Some(r) = self.gs.endpoint.on_bytes(t, &d.bytes)? {
                    if let Some(a) = self.gs.on_message(t, r) {
                        self.emit_gs(vec![a], "message from uav");
                    }
                }
                continue;
            }
            let Some(idx) = self.index_of(UavId(d.to)) else {
                continue;
            };
            if self.bodies[idx].failed {
                continue;
            }
            if let Some(r) = self.endpoints[idx].on_bytes(t, &d.bytes)? {
                self.inboxes[idx].push(r);
            }
        }
        Ok(())
    }

    fn poll_endpoints(&mut self, t: u64) -> Result<(), SimError> {
        self.gs.endpoint.poll(t)?;
        let agents = &self.agents;
        let received = |uav: UavId, mission: u32| {
            agents
                .iter()
                .find(|a| a.uav_id == uav)
                .is_some_and(|a| a.received_uploads.contains(&mission))
        };
        let mut requeued = Vec::new();
        for (h, outcome) in self.gs.endpoint.take_outcomes() {
            if matches!(outcome, Outcome::Failed { .. }) {
                self.failed_sends += 1;
            }
            if let Some(a) = self.gs.on_outcome(h, outcome, received) {
                requeued.push(a);
            }
        }
        self.emit_gs(requeued, "upload undeliverable");

        for idx in 0..self.endpoints.len() {
            if self.bodies[idx].failed {
                continue;
            }
            self.endpoints[idx].poll(t)?;
            for (h, outcome) in self.endpoints[idx].take_outcomes() {
                let kind = self.sent[idx].remove(&h);
                if let Outcome::Failed { .. } = outcome {
                    self.failed_sends += 1;
                    if let Some(SentKind::TransferRequest(transfer_id)) = kind {
                        self.notices[idx].push(LinkNotice::TransferUndeliverable { transfer_id });
                        self.transfers.unanswered += 1;
                        let uav = self.agents[idx].uav_id;
                        self.emit(
                            EventKind::Transfer,
                            json!({"from": uav, "transfer_id": transfer_id, "outcome": "unanswered"}),
                        );
                        self.note("transfer", Some(uav), format!("transfer {transfer_id} unanswered"));
                    }
                }
            }
        }
        Ok(())
    }

    fn complete_offloads(&mut self, t: u64) -> Result<(), SimError> {
        let (due, later): (Vec<_>, Vec<_>) = std::mem::take(&mut self.pending_offloads)
            .into_iter()
            .partition(|p| p.due <= t);
        self.pending_offloads = later;
        for p in due {
            let uav = self.agents[p.idx].uav_id;
            match p.result {
                Ok((receipt, records)) => {
                    let rep = self
                        .store
                        .ingest(&receipt, &records)
                        .map_err(|e| SimError::Field(e.to_string()))?;
                    self.offload_summary.records_stored += rep.stored as u64;
                    self.emit(
                        EventKind::Offload,
                        json!({"uav_id": uav, "manifest_id": p.manifest_id, "status": "stored",
                               "records": receipt.accepted.len(), "stored": rep.stored}),
                    );
                    self.note("offload", Some(uav), format!("{} records stored", rep.stored));
                    self.offload_results[p.idx] = Some(OffloadResult::Receipt(receipt));
                }
                Err(reason) => {
                    self.offload_summary.failures += 1;
                    self.emit(
                        EventKind::Offload,
                        json!({"uav_id": uav, "manifest_id": p.manifest_id, "status": "failed", "reason": reason}),
                    );
                    self.note("offload", Some(uav), format!("offload failed: {reason}"));
                    self.offload_results[p.idx] = Some(OffloadResult::Failed);
                }
            }
        }
        Ok(())
    }

    fn ground_station(&mut self, t: u64) -> Result<(), SimError> {
        for idx in 0..self.agents.len() {
            let uav = self.agents[idx].uav_id;
            if self.agents[idx].mode != Mode::Failed
                || self.recovered.contains(&uav)
                || !self.scenario.gs_redispatch
                || t.saturating_sub(self.gs.heard(uav)) <= self.gs.failure_timeout
            {
                continue;
            }
            let mut work = self.agents[idx].take_remaining_work();
            for o in std::mem::take(&mut self.agents[idx].outbound) {
                let taken = self
                    .index_of(o.peer)
                    .is_some_and(|p| self.agents[p].accepted_transfers.contains(&(uav, o.transfer_id)));
                if !taken {
                    work.extend(o.waypoints);
                }
            }
            for j in 0..self.agents.len() {
                let requester = self.agents[j].uav_id;
                let (to_failed, kept): (Vec<_>, Vec<_>) = std::mem::take(&mut self.agents[j].outbound)
                    .into_iter()
                    .partition(|o| o.peer == uav);
                self.agents[j].outbound = kept;
                for o in to_failed {
                    if !self.agents[idx]
                        .accepted_transfers
                        .contains(&(requester, o.transfer_id))
                    {
                        work.extend(o.waypoints);
                    }
                }
            }
            self.recovered.insert(uav);
            if !work.is_empty() {
                self.redispatches += 1;
                let count = work.len();
                self.gs.queue.extend(work);
                self.emit_gs(
                    vec![GsAction::Recover { uav_id: uav, count }],
                    "telemetry silent and uav failed",
                );
            }
        }
        let actions = self.gs.dispatch(t)?;
        self.emit_gs(actions, "queued work for idle uav");
        Ok(())
    }

    fn step_agent(&mut self, t: u64, idx: usize) -> Result<(), SimError> {
        if self.agents[idx].mode == Mode::Failed {
            self.inboxes[idx].clear();
            return Ok(());
        }
        let body = &self.bodies[idx];
        let input = TickInput {
            tick: t,
            position: body.pos,
            battery_pct: from_micro(body.battery),
            inbox: std::mem::take(&mut self.inboxes[idx]),
            notices: std::mem::take(&mut self.notices[idx]),
            offload: self.offload_results[idx].take(),
            controller_fail: body.controller_fail,
        };
        let battery = input.battery_pct;
        let uav = self.agents[idx].uav_id;
        let decisions = self.agents[idx]
            .step(&self.agent_cfg, input)
            .map_err(|source| SimError::Agent { uav, source })?;
        for d in decisions {
            let payload = json!({
                "uav_id": uav,
                "mode": self.agents[idx].mode,
                "battery": battery,
                "action": serde_json::to_value(&d.action).expect("action serializes"),
                "reason": d.reason,
            });
            self.emit(EventKind::AgentAction, payload);
            self.execute(t, idx, d)?;
        }
        Ok(())
    }

    fn capture(&mut self, t: u64, idx: usize, at: LocalPoint) {
        let rec = geotag(
            &mut self.agents[idx],
            self.field.origin,
            at,
            t,
            &self.truth,
            self.scenario.spectral_jitter,
            &mut self.capture_rng,
        );
        self.agents[idx].store(rec);
        self.bodies[idx].captures += 1;
        self.offload_summary.records_captured += 1;
    }

    fn execute(&mut self, t: u64, idx: usize, d: Decision) -> Result<(), SimError> {
        let uav = self.agents[idx].uav_id;
        match d.action {
            AgentAction::GoTo { waypoint, capture } => {
                let start = self.bodies[idx].pos;
                self.bodies[idx].goal = Some(Goal {
                    dest: waypoint.pos,
                    capture,
                    start,
                    length: dist(start, waypoint.pos),
                    progress: 0.0,
                });
            }
            AgentAction::GoToBss { position, .. } => {
                let start = self.bodies[idx].pos;
                self.bodies[idx].goal = Some(Goal {
                    dest: position,
                    capture: false,
                    start,
                    length: dist(start, position),
                    progress: 0.0,
                });
            }
            AgentAction::Capture { waypoint } => {
                if !self.executed.insert(waypoint.id) {
                    self.executed_twice += 1;
                }
                self.bodies[idx].executed += 1;
                self.capture(t, idx, waypoint.pos);
            }
            AgentAction::NotifyGs { event, detail } => {
                if let Some(event) = event_from_name(&event) {
                    self.note("notify_gs", Some(uav), format!("{event:?}: {detail}"));
                    let h =
                        self.endpoints[idx].send(t, GROUND_STATION_SYS, 0, &LinkMessage::NotifyGs { event, detail })?;
                    self.sent[idx].insert(h, SentKind::Other);
                }
            }
            AgentAction::SendTransferRequest {
                peer,
                transfer_id,
                waypoints,
            } => {
                if self.requested_seen.insert((uav, transfer_id)) {
                    self.transfers.requested += 1;
                }
                self.note(
                    "transfer_request",
                    Some(uav),
                    format!("offer {} waypoints to {peer} (transfer {transfer_id})", waypoints.len()),
                );
                let msg = LinkMessage::TransferRequest {
                    transfer_id,
                    requester: uav.0,
                    waypoints,
                };
                let h = self.endpoints[idx].send(t, peer.0, 1, &msg)?;
                self.sent[idx].insert(h, SentKind::TransferRequest(transfer_id));
            }
            AgentAction::AcceptTransfer {
                peer,
                transfer_id,
                count,
            } => {
                if self.accepted_seen.insert((peer, uav, transfer_id)) {
                    self.transfers.accepted += 1;
                    self.bodies[idx].transfers_in += 1;
                    if let Some(p) = self.index_of(peer) {
                        self.bodies[p].transfers_out += 1;
                    }
                    self.emit(
                        EventKind::Transfer,
                        json!({"from": peer, "to": uav, "transfer_id": transfer_id, "outcome": "accepted", "count": count}),
                    );
                    self.note("transfer", Some(uav), format!("accepted {count} waypoints from {peer}"));
                }
                let h = self.endpoints[idx].send(t, peer.0, 1, &LinkMessage::TransferAccept { transfer_id })?;
                self.sent[idx].insert(h, SentKind::Other);
            }
            AgentAction::RejectTransfer {
                peer,
                transfer_id,
                reason,
            } => {
                if self.rejected_seen.insert((peer, uav, transfer_id)) {
                    self.transfers.rejected += 1;
                    self.emit(
                        EventKind::Transfer,
                        json!({"from": peer, "to": uav, "transfer_id": transfer_id, "outcome": "rejected", "reason": reason}),
                    );
                    self.note(
                        "transfer",
                        Some(uav),
                        format!("rejected transfer from {peer}: {reason}"),
                    );
                }
                let reason = if reason == "battery" {
                    RejectReason::Battery
                } else {
                    RejectReason::Busy
                };
                let h = self.endpoints[idx].send(t, peer.0, 1, &LinkMessage::TransferReject { transfer_id, reason })?;
                self.sent[idx].insert(h, SentKind::Other);
            }
            AgentAction::Land { .. } => {
                let b = &mut self.bodies[idx];
                b.goal = None;
                b.last_dir = None;
            }
            AgentAction::SwapBattery => {
                let b = &mut self.bodies[idx];
                let credit = FULL_MICRO - b.battery;
                let from_pct = from_micro(b.battery);
                b.battery = FULL_MICRO;
                b.energy.swap_credit_micro += credit;
                b.swaps += 1;
                self.emit(
                    EventKind::Swap,
                    json!({"uav_id": uav, "from_pct": from_pct, "credit_pct": from_micro(credit)}),
                );
                self.note("swap", Some(uav), format!("battery swapped at {from_pct:.2}%"));
            }
            AgentAction::BeginOffload { .. } => self.begin_offload(t, idx)?,
            AgentAction::Halt => {
                let b = &mut self.bodies[idx];
                b.failed = true;
                b.goal = None;
                self.note("failed", Some(uav), d.reason);
            }
        }
        Ok(())
    }

    fn begin_offload(&mut self, t: u64, idx: usize) -> Result<(), SimError> {
        let uav = self.agents[idx].uav_id;
        let records = self.agents[idx].storage.clone();
        let items: Vec<OffloadItem> = records
            .iter()
            .map(|r| OffloadItem {
                id: r.record_id,
                bytes: serde_json::to_vec(r).expect("records serialize"),
            })
            .collect();
        let manifest_id = self.next_manifest;
        self.next_manifest += 1;
        self.offload_summary.manifests += 1;
        let per = self.scenario.offload.records_per_chunk.max(1);
        let duration = (items.len().div_ceil(per) as u64).max(1);
        let result = match offload(
            uav.0,
            manifest_id,
            &items,
            &self.scenario.offload,
            &mut self.wifi,
            &mut self.server,
        ) {
            Ok((receipt, got, stats)) => {
                self.offload_summary.manifest_attempts += stats.manifest_attempts as u64;
                self.offload_summary.chunk_resends += stats.chunk_resends as u64;
                let mut decoded = Vec::with_capacity(got.len());
                for it in got {
                    let rec: ImageRecord = serde_json::from_slice(&it.bytes)
                        .map_err(|e| SimError::Field(format!("offloaded record {} unreadable: {e}", it.id)))?;
                    decoded.push(rec);
                }
                Ok((receipt, decoded))
            }
            Err(e) => Err(e.to_string()),
        };
        self.emit(
            EventKind::Offload,
            json!({"uav_id": uav, "manifest_id": manifest_id, "status": "started", "records": items.len()}),
        );
        self.pending_offloads.push(PendingOffload {
            due: t + duration,
            idx,
            manifest_id,
            result,
        });
        Ok(())
    }

    fn move_body(&mut self, t: u64, idx: usize) {
        let step = self.scenario.uav_speed_mps * self.scenario.tick_seconds;
        let k_turn = self.scenario.k_turn;
        let threshold = self.plan.turn_threshold_deg;
        let b = &mut self.bodies[idx];
        if b.failed || b.battery == 0 {
            return;
        }
        let Some(mut goal) = b.goal else { return };
        let from = b.pos;
        let to = advance(from, goal.dest, step);
        let moved = dist(from, to);
        if moved <= 0.0 {
            return;
        }
        let dir = (to - from).scale(1.0 / moved);
        let angle = b.last_dir.map_or(0.0, |d| turn_angle_deg(d, dir));
        if angle > threshold {
            b.turns += 1;
        }
        b.last_dir = Some(dir);
        let cost = drain_micro(b.drain_const, moved, angle, k_turn);
        let take = cost.min(b.battery);
        b.battery -= take;
        b.energy.consumed_micro += take;
        b.distance += moved;
        b.pos = to;

        let mut along = Vec::new();
        if goal.capture {
            self.swaths.push((from, to));
            let before = goal.progress;
            let after = before + moved;
            let interval = self.capture_interval;
            let mut k = (before / interval).floor() as u64 + 1;
            while (k as f64) * interval <= after + 1e-9 && (k as f64) * interval < goal.length - 1e-6 {
                along.push(goal.start.lerp(goal.dest, (k as f64) * interval / goal.length));
                k += 1;
            }
            goal.progress = after;
        }
        b.goal = Some(goal);
        for p in along {
            self.capture(t, idx, p);
        }
    }

    fn transmit(&mut self, t: u64) -> Result<(), SimError> {
        for bytes in self.gs.endpoint.take_outbox() {
            self.channel.transmit(t, &bytes)?;
        }
        for idx in 0..self.endpoints.len() {
            let outbox = self.endpoints[idx].take_outbox();
            if self.bodies[idx].failed {
                continue;
            }
            let uav = self.agents[idx].uav_id;
            self.channel.set_position(uav.0, self.bodies[idx].pos);
            for bytes in outbox {
                self.channel.transmit(t, &bytes)?;
            }
        }
        for idx in 0..self.endpoints.len() {
            if self.bodies[idx].failed {
                continue;
            }
            let uav = self.agents[idx].uav_id;
            let pos = self.bodies[idx].pos;
            let battery = from_micro(self.bodies[idx].battery);
            let mode = self.agents[idx].mode;
            let msg = LinkMessage::Telemetry {
                position: unproject(self.field.origin, pos),
                battery_pct: battery,
                mode,
                timestamp: t as u32,
            };
            let bytes = self.endpoints[idx].publish(&msg)?;
            let queued = self.channel.transmit(t, &bytes)?;
            self.emit(
                EventKind::Telemetry,
                json!({"uav_id": uav, "x": pos.x, "y": pos.y, "battery": battery, "mode": mode,
                       "queued": queued, "frame": hex::encode(&bytes)}),
            );
        }
        Ok(())
    }

    /// Ids of all unexecuted work and who holds it.
    fn pending_work(&self) -> Vec<(WaypointId, Option<UavId>)> {
        let mut out = Vec::new();
        for a in &self.agents {
            out.extend(a.pending_work().iter().map(|w| (w.id, Some(a.uav_id))));
            for o in &a.outbound {
                let taken = self
                    .index_of(o.peer)
                    .is_some_and(|p| self.agents[p].accepted_transfers.contains(&(a.uav_id, o.transfer_id)));
                if !taken {
                    out.extend(o.waypoints.iter().map(|w| (w.id, Some(a.uav_id))));
                }
            }
        }
        out.extend(self.gs.queue.iter().map(|w| (w.id, None)));
        for up in self.gs.uploads.values() {
            let received = self
                .index_of(up.uav)
                .is_some_and(|i| self.agents[i].received_uploads.contains(&up.mission_id));
            if !received {
                out.extend(up.waypoints.iter().map(|w| (w.id, None)));
            }
        }
        out
    }

    fn planned(&self) -> u64 {
        self.gs.minted() + self.agents.iter().map(|a| a.minted.len() as u64).sum::<u64>()
    }

    fn audit(&mut self, t: u64) {
        let pending = self.pending_work();
        let mut seen = BTreeSet::new();
        let mut problem = None;
        for (id, _) in &pending {
            if !seen.insert(*id) {
                problem = Some(format!("tick {t}: waypoint {} held twice", id.0));
                break;
            }
            if self.executed.contains(id) {
                problem = Some(format!("tick {t}: waypoint {} executed and still pending", id.0));
                break;
            }
        }
        let planned = self.planned();
        if problem.is_none() && seen.len() as u64 + self.executed.len() as u64 != planned {
            problem = Some(format!(
                "tick {t}: {planned} planned but {} executed and {} pending",
                self.executed.len(),
                seen.len()
            ));
        }
        if let Some(p) = problem {
            self.audit_violations += 1;
            if self.first_violation.is_none() {
                self.first_violation = Some(p);
            }
        }
    }

    fn has_offload_station(&self) -> bool {
        self.scenario.stations.iter().any(|s| s.kind.offloads())
    }

    fn finished(&self) -> bool {
        if !self.gs.uploads.is_empty() || !self.pending_offloads.is_empty() {
            return false;
        }
        let any_live = self.agents.iter().any(|a| a.mode != Mode::Failed);
        if !self.gs.queue.is_empty() && any_live {
            return false;
        }
        for a in &self.agents {
            if a.mode == Mode::Failed {
                let holds = a.has_work() || !a.outbound.is_empty();
                if holds && self.scenario.gs_redispatch && !self.recovered.contains(&a.uav_id) {
                    return false;
                }
                continue;
            }
            let parked = a.mode == Mode::Idle || (a.mode == Mode::MissionAssigned && a.stuck);
            if !parked {
                return false;
            }
            let waiting = a.outbound.iter().any(|o| {
                let peer_down = self
                    .index_of(o.peer)
                    .is_none_or(|p| self.agents[p].mode == Mode::Failed);
                !peer_down || (self.scenario.gs_redispatch && !self.recovered.contains(&o.peer))
            });
            if waiting {
                return false;
            }
            if a.has_work() && !a.stuck {
                return false;
            }
            if !a.storage.is_empty() && !a.offload_failed && self.has_offload_station() && !a.stuck {
                return false;
            }
        }
        true
    }

    fn finalize(&mut self, status: RunStatus) -> Result<(), SimError> {
        self.status = status;
        self.emit(EventKind::Done, json!({"status": status}));
        self.note("done", None, format!("{status:?}"));
        let (report, heatmap_json) = self.build_report()?;
        let report_json = report.to_json();
        let footer = TraceFooter {
            status,
            ticks: self.tick,
            report_sha256: sha256_hex(report_json.as_bytes()),
        };
        self.trace.push(footer_line(&footer));
        let mut trace = self.trace.join("\n");
        trace.push('\n');
        self.output = Some(RunOutput {
            report,
            report_json,
            trace,
            heatmap_json,
            records: self.store.records().to_vec(),
        });
        Ok(())
    }

    fn build_report(&self) -> Result<(SimReport, String), SimError> {
        let radius = self.plan.spacing / 2.0;
        let cov = raster_coverage(&self.field, &self.swaths, radius, COVERAGE_PITCH_M);

        let pending = self.pending_work();
        let mut stranded_by: BTreeMap<Option<UavId>, (u64, String)> = BTreeMap::new();
        for (_, holder) in &pending {
            let reason = match holder {
                None => "left in ground station queue".to_string(),
                Some(u) => {
                    let a = &self.agents[self.index_of(*u).expect("holder exists")];
                    if a.mode == Mode::Failed {
                        "held by failed uav".to_string()
                    } else if a.stuck {
                        "unreachable on a full battery".to_string()
                    } else if self.status == RunStatus::Done {
                        "unfinished".to_string()
                    } else {
                        continue;
                    }
                }
            };
            if holder.is_none() && self.status != RunStatus::Done {
                continue;
            }
            let e = stranded_by.entry(*holder).or_insert((0, reason));
            e.0 += 1;
        }
        let stranded: Vec<StrandedWork> = stranded_by
            .into_iter()
            .map(|(uav_id, (count, reason))| StrandedWork { uav_id, count, reason })
            .collect();
        let stranded_total: u64 = stranded.iter().map(|s| s.count).sum();

        let planned = self.planned();
        let executed = self.executed.len() as u64;
        let waypoints = WaypointAccounting {
            planned,
            executed,
            pending: pending.len() as u64,
            stranded: stranded_total,
            executed_twice: self.executed_twice,
            audit_violations: self.audit_violations,
            first_violation: self.first_violation.clone(),
            no_loss: self.audit_violations == 0
                && self.executed_twice == 0
                && executed + pending.len() as u64 == planned,
        };

        let mut uavs = Vec::new();
        let mut consumed = 0i64;
        let mut balanced = true;
        for (a, b) in self.agents.iter().zip(&self.bodies) {
            let mut energy = b.energy;
            energy.final_micro = b.battery;
            balanced &= energy.balanced();
            consumed += energy.consumed_micro;
            uavs.push(UavReport {
                uav_id: a.uav_id,
                final_mode: a.mode,
                distance_m: b.distance,
                turns: b.turns,
                swaps: b.swaps,
                transfers_out: b.transfers_out,
                transfers_in: b.transfers_in,
                waypoints_executed: b.executed,
                captures: b.captures,
                final_battery_pct: from_micro(b.battery),
                drain_const_estimate: a.battery.drain_const,
                energy,
            });
        }

        let grid = GridSpec::covering(&self.field.roi, self.scenario.heatmap_cell_m)
            .map_err(|e| SimError::Field(e.to_string()))?;
        let records = self.store.records();
        let heat = build_heatmap(self.field.origin, records, grid, self.classifier.as_ref())
            .map_err(|e| SimError::Field(e.to_string()))?;
        let mut correct = 0u64;
        for r in records {
            let (label, _) = self
                .classifier
                .classify(r)
                .map_err(|e| SimError::Field(e.to_string()))?;
            if label == r.payload.true_class {
                correct += 1;
            }
        }
        let (mut captured_cells, mut matching_cells) = (0u64, 0u64);
        for row in 0..grid.height {
            for col in 0..grid.width {
                let cell = heat.cell(col, row);
                let Some(label) = cell.label else { continue };
                captured_cells += 1;
                let (lo, hi) = grid.cell_bounds(col, row);
                let centre = LocalPoint::new((lo.x + hi.x) / 2.0, (lo.y + hi.y) / 2.0);
                if self.truth.class_at(centre) == label {
                    matching_cells += 1;
                }
            }
        }
        let mut heatmap_json = serde_json::to_string_pretty(&heat.to_doc()).expect("heatmap serializes");
        heatmap_json.push('\n');

        let mut link = LinkSummary {
            failed_sends: self.failed_sends,
            ..Default::default()
        };
        for s in std::iter::once(self.gs.endpoint.stats()).chain(self.endpoints.iter().map(|e| e.stats())) {
            link.reliable_first_sends += s.first_sends;
            link.retransmissions += s.retransmissions;
            link.acks_sent += s.acks_sent;
            link.duplicates_dropped += s.duplicates_dropped;
            link.published += s.published;
        }

        let report = SimReport {
            scenario: self.scenario.name.clone(),
            seed: self.scenario.seed,
            status: self.status,
            tick_limit_exceeded: self.status == RunStatus::TickLimitExceeded,
            ticks: self.tick,
            coverage_pct: cov.pct(),
            coverage_samples: cov.samples,
            coverage_covered: cov.covered,
            plan: PlanSummary {
                waypoints: self.plan.waypoints.len(),
                line_count: self.plan.line_count(),
                turn_count: self.plan.metrics.turn_count,
                length_m: self.plan.metrics.length,
                spacing_m: self.plan.spacing,
                angle_deg: self.plan.angle_deg(),
            },
            energy_consumed_pct: from_micro(consumed),
            energy_balanced: balanced,
            uavs,
            waypoints,
            stranded,
            transfers: self.transfers,
            redispatches: self.redispatches,
            offload: self.offload_summary,
            radio: self.channel.stats().clone(),
            link,
            heatmap: HeatmapSummary {
                file: "heatmap.json".into(),
                sha256: sha256_hex(heatmap_json.as_bytes()),
                width: grid.width,
                height: grid.height,
                cell_size_m: grid.cell_size_m,
                records_binned: heat.records_binned,
                classifier: self.classifier.name(),
                record_accuracy: if records.is_empty() {
                    0.0
                } else {
                    correct as f64 / records.len() as f64
                },
                captured_cells,
                matching_cells,
            },
            timeline: self.timeline.clone(),
        };
        Ok((report, heatmap_json))
    }
}
