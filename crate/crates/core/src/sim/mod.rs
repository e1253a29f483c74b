//! Deterministic tick simulator for a UAV fleet.
//!
//! A run is fully determined by its [`Scenario`] (including the seed) and any
//! faults injected while it runs. Every run writes a JSONL trace whose header
//! carries the scenario, so [`replay`] can rebuild the run from the trace
//! alone and check it line by line.

pub mod engine;
pub mod ground;
pub mod physics;
pub mod report;
pub mod scenario;
pub mod trace;

use thiserror::Error;

pub use engine::{sha256_hex, Engine, RunOutput, COVERAGE_PITCH_M};
pub use report::{RunStatus, SimReport};
pub use scenario::{FaultEvent, FaultKind, FleetMember, Scenario};
pub use trace::{parse_trace, EventKind, ParsedTrace, TraceEvent, TRACE_FORMAT};

use crate::agent::AgentError;
use crate::allocator::AllocError;
use crate::coverage::PlanError;
use crate::link::LinkError;
use crate::UavId;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("schema violation at {pointer}: {message}")]
    Schema { pointer: String, message: String },
    #[error("field error: {0}")]
    Field(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error("{uav}: {source}")]
    Agent { uav: UavId, source: AgentError },
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error("trace truncated: {0}")]
    Truncated(String),
    #[error("malformed trace line {line}: {reason}")]
    MalformedTrace { line: usize, reason: String },
    #[error("replay diverged from trace at line {line}")]
    Diverged { line: usize },
    #[error("run is not in progress")]
    NotRunning,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SimError {
    /// JSON pointer of the offending input, when known.
    pub fn pointer(&self) -> Option<&str> {
        match self {
            SimError::Schema { pointer, .. } => Some(pointer),
            _ => None,
        }
    }
}

/// Runs a scenario to completion.
pub fn run(scenario: Scenario) -> Result<RunOutput, SimError> {
    let mut engine = Engine::new(scenario)?;
    engine.run_to_end()?;
    engine.finish()
}

/// Re-runs the scenario stored in a trace, re-injecting any faults that were
/// injected live, and checks that every line comes out the same.
pub fn replay(trace_text: &str) -> Result<RunOutput, SimError> {
    let parsed = parse_trace(trace_text)?;
    let scenario = parsed.header.scenario.clone();

    let mut scheduled: Vec<FaultEvent> = scenario.faults.clone();
    scheduled.sort_by_key(|f| f.at_tick);
    let mut injected = Vec::new();
    let mut next = 0;
    for e in parsed.events.iter().filter(|e| e.kind == EventKind::Fault) {
        let f: FaultEvent = serde_json::from_value(e.payload.clone()).map_err(|err| SimError::MalformedTrace {
            line: 0,
            reason: format!("fault payload: {err}"),
        })?;
        if next < scheduled.len() && scheduled[next] == f {
            next += 1;
        } else {
            injected.push(f);
        }
    }

    let mut engine = Engine::new(scenario)?;
    for f in injected {
        engine.schedule_raw(f);
    }
    while engine.is_running() {
        if parsed.footer.status == RunStatus::Aborted && engine.tick() >= parsed.footer.ticks {
            engine.abort()?;
            break;
        }
        engine.step()?;
    }
    let out = engine.finish()?;
    let ours: Vec<&str> = out.trace.lines().collect();
    for (i, line) in parsed.lines.iter().enumerate() {
        if ours.get(i) != Some(&line.as_str()) {
            return Err(SimError::Diverged { line: i + 1 });
        }
    }
    if ours.len() != parsed.lines.len() {
        return Err(SimError::Diverged {
            line: parsed.lines.len().min(ours.len()) + 1,
        });
    }
    Ok(out)
}
