//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p agriswarm-core --test acceptance`. The process
//! exits non-zero when any criterion fails.

mod common;

use std::time::Instant;

use agriswarm_core::allocator::{reachable_distance, update_drain_const, BatteryModel, FlightLogEntry};
use agriswarm_core::coverage::{plan_field, raster_coverage, FieldSpec, SweepConfig};
use agriswarm_core::field::{ClassLabel, ClassifierSpec, HeatmapDoc};
use agriswarm_core::sim::{replay, run, FaultKind, RunOutput, RunStatus};
use agriswarm_core::UavId;
use common::{battery_fault, fault, hand_off_flow, member, rect, scenario};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn clean(out: &RunOutput) -> Result<(), String> {
    let r = &out.report;
    ensure(r.status == RunStatus::Done, format!("status {:?}", r.status))?;
    ensure(r.waypoints.no_loss, format!("waypoint accounting {:?}", r.waypoints))?;
    ensure(r.coverage_pct == 100.0, format!("coverage {}%", r.coverage_pct))
}

fn coverage_plan() -> Check {
    let field = FieldSpec::new(common::origin(), rect(0.0, 0.0, 200.0, 200.0));
    let t = Instant::now();
    let plan = plan_field(&field, &SweepConfig::with_spacing(2.0)).map_err(|e| e.to_string())?;
    let swaths: Vec<_> = plan.waypoints.windows(2).map(|w| (w[0], w[1])).collect();
    let cov = raster_coverage(&field, &swaths, 1.0, 0.5);
    let elapsed = t.elapsed().as_secs_f64();
    let lines = plan.line_count();
    let turns = plan.metrics.turn_count;
    let summary = format!(
        "{lines} lines, {turns} turns, {} misses of {} samples, {elapsed:.3} s",
        cov.misses(),
        cov.samples
    );
    ensure(
        lines == 100 && turns == 198 && cov.misses() == 0 && elapsed < 2.0,
        summary.clone(),
    )?;
    Ok(summary)
}

fn battery_formulas() -> Check {
    let bm = BatteryModel::new(60.0, 10.0, 0.5).map_err(|e| e.to_string())?;
    let d = reachable_distance(&bm);
    let log = [FlightLogEntry {
        initial_pct: 100.0,
        final_pct: 50.0,
        distance_m: 1000.0,
        mission_id: 1,
    }];
    let c = update_drain_const(&log).map_err(|e| e.to_string())?;
    let summary = format!("reachable_distance = {d}, update_drain_const = {c}");
    ensure(d == 100.0 && c == 0.05, summary.clone())?;
    Ok(summary)
}

fn segmentation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..1000 {
        let bad = common::segmentation_violations(&mut rng);
        ensure(bad.is_empty(), format!("instance {i}: {}", bad.join("; ")))?;
    }
    Ok("1000 instances: every segment under budget, concatenation equals plan".into())
}

fn hand_off() -> Check {
    for (w, accept) in [(100.0, true), (200.0, false)] {
        for seed in 1..=10 {
            let out = run(battery_fault(w, seed)).map_err(|e| e.to_string())?;
            let tag = if accept { "accept" } else { "reject" };
            clean(&out).map_err(|e| format!("{tag} seed {seed}: {e}"))?;
            hand_off_flow(&out, accept).map_err(|e| format!("{tag} seed {seed}: {e}"))?;
            let again = run(battery_fault(w, seed)).map_err(|e| e.to_string())?;
            ensure(
                again.trace_sha256() == out.trace_sha256(),
                format!("{tag} seed {seed}: rerun differs"),
            )?;
        }
    }
    Ok("accept and reject paths hold for seeds 1..=10 with no loss, full coverage, identical reruns".into())
}

fn reliable_link() -> Check {
    let s = common::reliable_soak(0.3, 10_000, 42);
    let summary = format!(
        "{} of {} delivered, {} duplicates, {} gaps, {} retransmissions, {} telemetry frames for {} publishes",
        s.delivered, s.sent, s.duplicates, s.missing, s.retransmissions, s.telemetry_frames, s.published
    );
    ensure(
        s.delivered == 10_000 && s.duplicates == 0 && s.missing == 0 && s.telemetry_frames == s.published,
        summary.clone(),
    )?;
    Ok(summary)
}

fn determinism() -> Check {
    let s = battery_fault(200.0, 7);
    let a = run(s.clone()).map_err(|e| e.to_string())?;
    let b = run(s).map_err(|e| e.to_string())?;
    ensure(a.report_sha256() == b.report_sha256(), "report.json hashes differ")?;
    ensure(a.trace_sha256() == b.trace_sha256(), "trace.jsonl hashes differ")?;
    let r = replay(&a.trace).map_err(|e| e.to_string())?;
    ensure(r.report_json == a.report_json, "replayed report differs")?;
    Ok(format!(
        "report {} trace {}",
        &a.report_sha256()[..12],
        &a.trace_sha256()[..12]
    ))
}

fn heatmaps() -> Check {
    let mut s = scenario(100.0, 60.0, 4.0, vec![member(1, (0.0, 0.0), 0.02)]);
    s.field = common::field(
        100.0,
        60.0,
        &[(rect(30.0, 20.0, 60.0, 40.0), ClassLabel::BroadleafWeed)],
    );
    s.capture_interval_m = Some(3.0);
    let out = run(s).map_err(|e| e.to_string())?;
    let doc: HeatmapDoc = serde_json::from_str(&out.heatmap_json).map_err(|e| e.to_string())?;
    let mut captured = 0;
    let mut matching = 0;
    for (row, cells) in doc.rows.iter().enumerate() {
        for (col, (label, _)) in cells.iter().enumerate() {
            let Some(label) = label else { continue };
            captured += 1;
            let in_block = (3..6).contains(&col) && (2..4).contains(&row);
            let expected = if in_block {
                ClassLabel::BroadleafWeed
            } else {
                ClassLabel::Soil
            };
            if *label == expected {
                matching += 1;
            }
        }
    }
    ensure(
        captured > 0 && matching == captured,
        format!("oracle: {matching} of {captured} cells match"),
    )?;

    let mut s = scenario(200.0, 200.0, 2.0, vec![member(1, (0.0, 0.0), 0.004)]);
    s.capture_interval_m = Some(2.0);
    s.classifier = ClassifierSpec::NoisyOracle {
        epsilon: 0.034,
        seed: 11,
    };
    let out = run(s).map_err(|e| e.to_string())?;
    let n = out.records.len();
    let acc = out.report.heatmap.record_accuracy;
    let summary = format!(
        "oracle {matching}/{captured} cells; noisy oracle {:.2}% over {n} records",
        100.0 * acc
    );
    ensure(n >= 10_000 && (acc - 0.966).abs() <= 0.01, summary.clone())?;
    Ok(summary)
}

fn controller_fail() -> Check {
    let build = |redispatch: bool| {
        let mut s = scenario(
            200.0,
            60.0,
            4.0,
            vec![member(1, (0.0, 0.0), 0.05), member(2, (0.0, 0.0), 0.05)],
        );
        s.faults.push(fault(60, 1, FaultKind::ControllerFail));
        s.gs_redispatch = redispatch;
        s
    };
    let on = run(build(true)).map_err(|e| e.to_string())?;
    clean(&on).map_err(|e| format!("redispatch on: {e}"))?;
    ensure(on.report.waypoints.stranded == 0, "redispatch on left stranded work")?;
    let survivor = on.report.uav(UavId(2)).ok_or("no report for uav 2")?;
    ensure(survivor.waypoints_executed > 0, "survivor flew nothing")?;

    let off = run(build(false)).map_err(|e| e.to_string())?;
    let w = &off.report.waypoints;
    let reported: u64 = off.report.stranded.iter().map(|s| s.count).sum();
    ensure(
        off.report.status == RunStatus::Done,
        format!("redispatch off: status {:?}", off.report.status),
    )?;
    ensure(w.stranded > 0, "redispatch off stranded nothing")?;
    ensure(
        reported == w.stranded && w.executed + w.stranded == w.planned && w.no_loss,
        format!("stranded work not fully reported: {w:?}"),
    )?;
    Ok(format!(
        "on: 100% coverage, 0 stranded; off: {} stranded, all reported",
        w.stranded
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("coverage plan", coverage_plan),
        ("battery formulas", battery_formulas),
        ("segmentation", segmentation),
        ("low-battery hand-off", hand_off),
        ("reliable link", reliable_link),
        ("determinism and replay", determinism),
        ("heatmaps", heatmaps),
        ("controller failure", controller_fail),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
