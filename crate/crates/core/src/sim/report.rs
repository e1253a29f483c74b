use std::fmt::Write as _;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::link::ChannelStats;
use crate::{Mode, UavId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Done,
    Aborted,
    TickLimitExceeded,
}

/// Battery bookkeeping for one UAV in micro-percent (1e-6 %). The identity
/// `initial + swap_credit - consumed - fault_loss == final` holds exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
pub struct EnergyLedger {
    pub initial_micro: i64,
    pub final_micro: i64,
    pub consumed_micro: i64,
    pub swap_credit_micro: i64,
    pub fault_loss_micro: i64,
}

impl EnergyLedger {
    pub fn balanced(&self) -> bool {
        self.initial_micro + self.swap_credit_micro - self.consumed_micro - self.fault_loss_micro == self.final_micro
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct UavReport {
    pub uav_id: UavId,
    pub final_mode: Mode,
    pub distance_m: f64,
    pub turns: u32,
    pub swaps: u32,
    pub transfers_out: u32,
    pub transfers_in: u32,
    pub waypoints_executed: u64,
    pub captures: u64,
    pub final_battery_pct: f64,
    pub drain_const_estimate: f64,
    pub energy: EnergyLedger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct PlanSummary {
    pub waypoints: usize,
    pub line_count: usize,
    pub turn_count: u32,
    pub length_m: f64,
    pub spacing_m: f64,
    pub angle_deg: f64,
}

/// Waypoint work accounting. Every minted work item is executed exactly
/// once, still pending somewhere, or stranded.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
pub struct WaypointAccounting {
    pub planned: u64,
    pub executed: u64,
    pub pending: u64,
    pub stranded: u64,
    pub executed_twice: u64,
    pub audit_violations: u64,
    pub first_violation: Option<String>,
    pub no_loss: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct StrandedWork {
    /// Holder of the work; `None` for the ground station queue.
    pub uav_id: Option<UavId>,
    pub count: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
pub struct TransferSummary {
    pub requested: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub unanswered: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
pub struct LinkSummary {
    pub reliable_first_sends: u64,
    pub retransmissions: u64,
    pub acks_sent: u64,
    pub duplicates_dropped: u64,
    pub published: u64,
    pub failed_sends: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
pub struct OffloadSummary {
    pub records_captured: u64,
    pub records_stored: u64,
    pub manifests: u64,
    pub manifest_attempts: u64,
    pub chunk_resends: u64,
    pub failures: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct HeatmapSummary {
    pub file: String,
    pub sha256: String,
    pub width: usize,
    pub height: usize,
    pub cell_size_m: f64,
    pub records_binned: u64,
    pub classifier: String,
    /// Share of stored records whose predicted class equals the truth.
    pub record_accuracy: f64,
    /// Cells holding records.
    pub captured_cells: u64,
    /// Captured cells whose majority label equals the truth at the cell centre.
    pub matching_cells: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct TimelineEntry {
    pub tick: u64,
    pub kind: String,
    pub uav_id: Option<UavId>,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SimReport {
    pub scenario: String,
    pub seed: u64,
    pub status: RunStatus,
    pub tick_limit_exceeded: bool,
    pub ticks: u64,
    pub coverage_pct: f64,
    pub coverage_samples: u64,
    pub coverage_covered: u64,
    pub plan: PlanSummary,
    pub energy_consumed_pct: f64,
    pub energy_balanced: bool,
    pub uavs: Vec<UavReport>,
    pub waypoints: WaypointAccounting,
    pub stranded: Vec<StrandedWork>,
    pub transfers: TransferSummary,
    pub redispatches: u64,
    pub offload: OffloadSummary,
    pub radio: ChannelStats,
    pub link: LinkSummary,
    pub heatmap: HeatmapSummary,
    pub timeline: Vec<TimelineEntry>,
}

impl SimReport {
    /// The canonical `report.json` bytes.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn uav(&self, id: UavId) -> Option<&UavReport> {
        self.uavs.iter().find(|u| u.uav_id == id)
    }

    pub fn total_swaps(&self) -> u32 {
        self.uavs.iter().map(|u| u.swaps).sum()
    }

    pub fn to_markdown(&self) -> String {
        let mut md = String::new();
        let title = if self.scenario.is_empty() {
            "simulation run"
        } else {
            &self.scenario
        };
        let _ = writeln!(md, "# Run report: {title}\n");
        let _ = writeln!(
            md,
            "- Status: {:?} after {} ticks (seed {})",
            self.status, self.ticks, self.seed
        );
        let _ = writeln!(
            md,
            "- Coverage: {:.2}% ({} of {} raster samples)",
            self.coverage_pct, self.coverage_covered, self.coverage_samples
        );
        let _ = writeln!(
            md,
            "- Plan: {} waypoints, {} lines, {} turns, {:.1} m",
            self.plan.waypoints, self.plan.line_count, self.plan.turn_count, self.plan.length_m
        );
        let _ = writeln!(
            md,
            "- Energy consumed: {:.3}% (ledger balanced: {})",
            self.energy_consumed_pct, self.energy_balanced
        );
        let w = &self.waypoints;
        let _ = writeln!(
            md,
            "- Waypoints: {} planned, {} executed, {} pending, {} stranded, no-loss {}",
            w.planned, w.executed, w.pending, w.stranded, w.no_loss
        );
        let t = &self.transfers;
        let _ = writeln!(
            md,
            "- Transfers: {} requested, {} accepted, {} rejected, {} unanswered; {} re-dispatches",
            t.requested, t.accepted, t.rejected, t.unanswered, self.redispatches
        );
        let _ = writeln!(
            md,
            "- Records: {} captured, {} stored; heatmap {}x{} cells, record accuracy {:.2}%\n",
            self.offload.records_captured,
            self.offload.records_stored,
            self.heatmap.width,
            self.heatmap.height,
            100.0 * self.heatmap.record_accuracy
        );
        let _ = writeln!(
            md,
            "| UAV | Final mode | Distance (m) | Turns | Swaps | Transfers out | Transfers in | Waypoints | Captures | Battery (%) |"
        );
        let _ = writeln!(md, "|---|---|---:|---:|---:|---:|---:|---:|---:|---:|");
        for u in &self.uavs {
            let _ = writeln!(
                md,
                "| {} | {:?} | {:.1} | {} | {} | {} | {} | {} | {} | {:.2} |",
                u.uav_id,
                u.final_mode,
                u.distance_m,
                u.turns,
                u.swaps,
                u.transfers_out,
                u.transfers_in,
                u.waypoints_executed,
                u.captures,
                u.final_battery_pct
            );
        }
        if !self.stranded.is_empty() {
            let _ = writeln!(md, "\n## Stranded work\n");
            for s in &self.stranded {
                let who = s.uav_id.map_or("ground station queue".to_string(), |u| u.to_string());
                let _ = writeln!(md, "- {who}: {} waypoints ({})", s.count, s.reason);
            }
        }
        md
    }
}
