#![allow(dead_code)]

use agriswarm_core::agent::{Station, StationKind};
use agriswarm_core::field::ClassLabel;
use agriswarm_core::geo::geojson::{field_collection, polygon_feature, props};
use agriswarm_core::geo::{GeoPoint, LocalPoint, Polygon};
use agriswarm_core::sim::{FaultEvent, FaultKind, FleetMember, Scenario};
use agriswarm_core::UavId;
use std::collections::BTreeSet;

use agriswarm_core::sim::{parse_trace, EventKind, RunOutput};
use serde_json::{json, Value};

pub fn origin() -> GeoPoint {
    GeoPoint::new(47.3977, 8.5456).unwrap()
}

pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon {
    Polygon::rectangle(LocalPoint::new(x0, y0), LocalPoint::new(x1, y1)).unwrap()
}

/// Field document with a `w` by `h` meter ROI at the origin plus optional
/// ground-truth rectangles.
pub fn field(w: f64, h: f64, truth: &[(Polygon, ClassLabel)]) -> serde_json::Value {
    let o = origin();
    let mut features = vec![polygon_feature(o, &rect(0.0, 0.0, w, h), props(json!({"role": "roi"})))];
    for (poly, class) in truth {
        features.push(polygon_feature(
            o,
            poly,
            props(json!({"role": "truth", "class": class})),
        ));
    }
    serde_json::to_value(field_collection(o, features)).unwrap()
}

pub fn member(id: u8, start: (f64, f64), c: f64) -> FleetMember {
    FleetMember {
        uav_id: UavId(id),
        start: LocalPoint::new(start.0, start.1),
        battery_pct: 100.0,
        drain_const: c,
        true_drain_const: None,
        threshold_pct: 10.0,
    }
}

pub fn station(kind: StationKind, x: f64, y: f64) -> Station {
    Station {
        kind,
        position: LocalPoint::new(x, y),
    }
}

/// Scenario over a `w` by `h` field with one combined swap-and-offload
/// station at the south-west corner.
pub fn scenario(w: f64, h: f64, spacing: f64, fleet: Vec<FleetMember>) -> Scenario {
    let mut s: Scenario = serde_json::from_value(json!({
        "name": "test",
        "field": field(w, h, &[]),
        "stations": [],
        "fleet": [],
    }))
    .unwrap();
    s.stations = vec![station(StationKind::Combined, 0.0, 0.0)];
    s.fleet = fleet;
    s.sweep.spacing = spacing;
    s.service_ticks = 5;
    s
}

pub fn fault(at_tick: u64, id: u8, kind: FaultKind) -> FaultEvent {
    FaultEvent {
        at_tick,
        uav_id: UavId(id),
        kind,
    }
}

use agriswarm_core::allocator::{reachable_distance, segment_mission, AllocError, AllocatorConfig, BatteryModel};
use agriswarm_core::coverage::{plan_field, FieldSpec, SweepConfig};
use agriswarm_core::geo::dist;
use agriswarm_core::link::{Channel, ChannelConfig, EventCode, LinkMessage, MsgType, ReliableEndpoint, RetryPolicy};
use rand::Rng;

/// Random star-shaped field around (500, 500) with 3 to 10 vertices.
pub fn random_polygon<R: Rng>(rng: &mut R) -> Polygon {
    let n = rng.gen_range(3..=10);
    let mut angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    loop {
        let pts: Vec<LocalPoint> = angles
            .iter()
            .map(|a| {
                let r = rng.gen_range(30.0..300.0);
                LocalPoint::new(500.0 + r * a.cos(), 500.0 + r * a.sin())
            })
            .collect();
        if let Ok(p) = Polygon::new(pts) {
            if agriswarm_core::geo::area(&p) > 100.0 {
                return p;
            }
        }
        angles = (0..n)
            .map(|i| i as f64 * std::f64::consts::TAU / n as f64 + rng.gen_range(0.0..0.3))
            .collect();
    }
}

pub fn random_fleet<R: Rng>(rng: &mut R) -> Vec<(UavId, BatteryModel)> {
    (1..=rng.gen_range(1..=6u8))
        .map(|i| {
            let threshold = rng.gen_range(10.0..30.0);
            let level = rng.gen_range(0.0..=100.0);
            (
                UavId(i),
                BatteryModel::new(level, threshold, rng.gen_range(0.005..0.2)).unwrap(),
            )
        })
        .collect()
}

/// Checks one random (polygon, fleet) instance. Returns the violations found.
pub fn segmentation_violations<R: Rng>(rng: &mut R) -> Vec<String> {
    let poly = random_polygon(rng);
    let field = FieldSpec::new(origin(), poly);
    let cfg = SweepConfig::with_spacing(rng.gen_range(2.0..25.0)).at_angle(rng.gen_range(0.0..180.0));
    let plan = match plan_field(&field, &cfg) {
        Ok(p) => p.waypoints,
        Err(e) => return vec![format!("planning failed: {e}")],
    };
    let fleet = random_fleet(rng);
    let (segs, residual) = match segment_mission(&plan, &fleet, &AllocatorConfig::default()) {
        Ok(s) => (s.segments, None),
        Err(AllocError::InsufficientFleet {
            partial,
            residual_start,
        }) => (partial.segments, Some(residual_start)),
        Err(e) => return vec![format!("segmentation failed: {e}")],
    };
    let mut bad = Vec::new();
    for s in &segs {
        let bm = fleet.iter().find(|(id, _)| *id == s.uav_id).unwrap().1;
        let d = (bm.level_pct - bm.threshold_pct) / bm.drain_const;
        let length: f64 = (s.start..s.end).map(|i| dist(plan[i], plan[i + 1])).sum();
        if s.end > s.start && !(length < d) {
            bad.push(format!("{} flies {length} m with d = {d}", s.uav_id));
        }
        if (d - reachable_distance(&bm)).abs() > 1e-9 * d.abs().max(1.0) && d > 0.0 {
            bad.push(format!("reachable_distance disagrees for {}", s.uav_id));
        }
        if s.waypoints != plan[s.start..=s.end] {
            bad.push(format!("segment of {} is not a slice of the plan", s.uav_id));
        }
    }
    // Concatenate, dropping each shared boundary point once.
    let mut joined: Vec<LocalPoint> = Vec::new();
    for s in &segs {
        let skip = usize::from(!joined.is_empty());
        joined.extend_from_slice(&s.waypoints[skip..]);
    }
    if let Some(r) = residual {
        let skip = usize::from(!joined.is_empty());
        if !joined.is_empty() && plan[r] != *joined.last().unwrap() {
            bad.push("residual does not start at the last boundary".into());
        }
        joined.extend_from_slice(&plan[r + skip..]);
    }
    if joined != plan {
        bad.push(format!(
            "concatenation has {} points, plan has {}",
            joined.len(),
            plan.len()
        ));
    }
    bad
}

#[derive(Debug, Default)]
pub struct Soak {
    pub sent: u32,
    pub delivered: u32,
    pub duplicates: u32,
    pub missing: u32,
    pub failed: u32,
    pub published: u64,
    pub telemetry_frames: u64,
    pub frames: u64,
    pub expected_frames: u64,
    pub retransmissions: u64,
}

/// Sends `n` reliable messages from node 1 to node 2 over a lossy channel
/// while node 1 also publishes telemetry every tick.
pub fn reliable_soak(loss: f64, n: u32, seed: u64) -> Soak {
    let cfg = ChannelConfig {
        loss_prob: loss,
        seed,
        max_retries: u32::MAX,
        ack_timeout_ticks: 3,
        ..Default::default()
    };
    let mut ch = Channel::new(cfg).unwrap();
    ch.register(1);
    ch.register(2);
    ch.subscribe(2, MsgType::Telemetry);
    let policy = RetryPolicy::from(ch.config());
    let mut a = ReliableEndpoint::new(1, 0, policy);
    let mut b = ReliableEndpoint::new(2, 0, policy);
    for i in 0..n {
        a.send(
            0,
            2,
            0,
            &LinkMessage::NotifyGs {
                event: EventCode::LowBattery,
                detail: i.to_string(),
            },
        )
        .unwrap();
    }
    let mut seen = vec![0u32; n as usize];
    let mut soak = Soak {
        sent: n,
        ..Default::default()
    };
    let mut t = 0u64;
    while !a.is_idle() && t < 1_000_000 {
        for d in ch.deliver(t) {
            let ep = if d.to == 1 { &mut a } else { &mut b };
            if let Some(r) = ep.on_bytes(t, &d.bytes).unwrap() {
                if let LinkMessage::NotifyGs { detail, .. } = r.msg {
                    seen[detail.parse::<usize>().unwrap()] += 1;
                }
            }
        }
        a.poll(t).unwrap();
        b.poll(t).unwrap();
        let tel = LinkMessage::Telemetry {
            position: origin(),
            battery_pct: 50.0,
            mode: agriswarm_core::Mode::Flying,
            timestamp: t as u32,
        };
        let frame = a.publish(&tel).unwrap();
        ch.transmit(t, &frame).unwrap();
        for f in a.take_outbox().into_iter().chain(b.take_outbox()) {
            ch.transmit(t, &f).unwrap();
        }
        t += 1;
    }
    for (h, o) in a.take_outcomes() {
        let _ = h;
        if matches!(o, agriswarm_core::link::Outcome::Failed { .. }) {
            soak.failed += 1;
        }
    }
    soak.delivered = seen.iter().filter(|&&c| c >= 1).count() as u32;
    soak.duplicates = seen.iter().map(|&c| c.saturating_sub(1)).sum();
    soak.missing = seen.iter().filter(|&&c| c == 0).count() as u32;
    let (sa, sb) = (a.stats(), b.stats());
    soak.published = sa.published + sb.published;
    soak.retransmissions = sa.retransmissions + sb.retransmissions;
    soak.telemetry_frames = ch
        .stats()
        .by_type
        .get(&MsgType::Telemetry)
        .map_or(0, |s| s.transmissions);
    soak.frames = ch.stats().transmissions;
    soak.expected_frames = sa.first_sends + sa.retransmissions + sa.acks_sent + sb.acks_sent + soak.published;
    soak
}

/// Agent action events as (tick, uav_id, action).
pub fn actions(out: &RunOutput) -> Vec<(u64, u64, Value)> {
    parse_trace(&out.trace)
        .unwrap()
        .events
        .into_iter()
        .filter(|e| e.kind == EventKind::AgentAction)
        .map(|e| {
            (
                e.tick,
                e.payload["uav_id"].as_u64().unwrap(),
                e.payload["action"].clone(),
            )
        })
        .collect()
}

pub fn ids(list: &Value) -> BTreeSet<u64> {
    list.as_array()
        .unwrap()
        .iter()
        .map(|w| w["id"].as_u64().unwrap())
        .collect()
}

pub fn captured_by(out: &RunOutput, uav: u64) -> Vec<(u64, u64)> {
    actions(out)
        .into_iter()
        .filter(|(_, u, a)| *u == uav && a["type"] == "capture")
        .map(|(t, _, a)| (t, a["waypoint"]["id"].as_u64().unwrap()))
        .collect()
}

/// Two UAVs; UAV 1 loses 60% of its battery at tick 100.
pub fn battery_fault(w: f64, seed: u64) -> Scenario {
    let mut s = scenario(
        w,
        60.0,
        4.0,
        vec![member(1, (0.0, 0.0), 0.05), member(2, (0.0, 0.0), 0.05)],
    );
    s.faults.push(fault(100, 1, FaultKind::BatteryDrop { pct: 60.0 }));
    s.radio.loss_prob = 0.1;
    s.seed = seed;
    s
}

/// Checks the low-battery hand-off in a [`battery_fault`] run: UAV 1 notifies
/// the ground station, offers its work to UAV 2, and either UAV 2 accepts and
/// flies all of it, or rejects and UAV 1 flies all of it after a swap.
pub fn hand_off_flow(out: &RunOutput, expect_accept: bool) -> Result<(), String> {
    let acts = actions(out);
    let notify = acts
        .iter()
        .position(|(_, u, a)| *u == 1 && a["type"] == "notify_gs" && a["event"] == "low_battery")
        .ok_or("uav 1 never notified the ground station")?;
    let (tick, _, req) = acts
        .get(notify + 1)
        .cloned()
        .ok_or("no action after the notification")?;
    if req["type"] != "send_transfer_request" || req["peer"] != 2 || tick != acts[notify].0 {
        return Err(format!(
            "notification not followed by a transfer request to uav 2: {req}"
        ));
    }
    let offered = ids(&req["waypoints"]);
    let transfer_id = req["transfer_id"].as_u64().unwrap();
    let reply = acts
        .iter()
        .find(|(t, u, a)| {
            *u == 2
                && *t > tick
                && a["transfer_id"] == transfer_id
                && (a["type"] == "accept_transfer" || a["type"] == "reject_transfer")
        })
        .ok_or("uav 2 never answered")?;
    let accepted = reply.2["type"] == "accept_transfer";
    if accepted != expect_accept {
        return Err(format!("expected accept = {expect_accept}, got {}", reply.2["type"]));
    }
    let flown_by = |uav: u64, after: u64| -> BTreeSet<u64> {
        captured_by(out, uav)
            .into_iter()
            .filter(|(t, _)| *t > after)
            .map(|(_, id)| id)
            .collect()
    };
    if accepted {
        if !offered.is_subset(&flown_by(2, tick)) {
            return Err("peer did not fly every transferred waypoint".into());
        }
        if !offered.is_disjoint(&flown_by(1, 0)) {
            return Err("transferred waypoints were also flown by the sender".into());
        }
    } else {
        let swap = acts
            .iter()
            .find(|(t, u, a)| *u == 1 && *t > tick && a["type"] == "swap_battery")
            .ok_or("uav 1 never swapped after the rejection")?
            .0;
        if !offered.is_subset(&flown_by(1, swap)) {
            return Err("cached waypoints were not resumed after the swap".into());
        }
    }
    Ok(())
}
