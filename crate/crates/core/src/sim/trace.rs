//! JSONL run trace.
//!
//! The first line is a header holding the scenario, the last a footer with
//! the final status and the SHA-256 of `report.json`. Every line in between
//! is one event `{tick, kind, payload}`; ticks never decrease.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::report::RunStatus;
use super::scenario::Scenario;
use super::SimError;

pub const TRACE_FORMAT: &str = "agriswarm-trace/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Telemetry,
    AgentAction,
    Fault,
    Swap,
    Transfer,
    Offload,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct TraceEvent {
    pub tick: u64,
    pub kind: EventKind,
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceFooter {
    pub status: RunStatus,
    pub ticks: u64,
    pub report_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "line", rename_all = "snake_case")]
enum Framing {
    Header(Box<TraceHeader>),
    Footer(TraceFooter),
}

pub fn header_line(scenario: &Scenario) -> String {
    serde_json::to_string(&Framing::Header(Box::new(TraceHeader {
        format: TRACE_FORMAT.into(),
        scenario: scenario.clone(),
    })))
    .expect("header serializes")
}

pub fn footer_line(footer: &TraceFooter) -> String {
    serde_json::to_string(&Framing::Footer(footer.clone())).expect("footer serializes")
}

pub fn event_line(event: &TraceEvent) -> String {
    serde_json::to_string(event).expect("event serializes")
}

/// A trace split into its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTrace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
    pub footer: TraceFooter,
    pub lines: Vec<String>,
}

pub fn parse_trace(text: &str) -> Result<ParsedTrace, SimError> {
    let lines: Vec<String> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_owned)
        .collect();
    let Some(first) = lines.first() else {
        return Err(SimError::Truncated("trace is empty".into()));
    };
    let header = match serde_json::from_str::<Framing>(first) {
        Ok(Framing::Header(h)) => *h,
        _ => {
            return Err(SimError::MalformedTrace {
                line: 1,
                reason: "first line is not a trace header".into(),
            })
        }
    };
    if header.format != TRACE_FORMAT {
        return Err(SimError::MalformedTrace {
            line: 1,
            reason: format!("unsupported format {}", header.format),
        });
    }
    let footer = match lines.last().map(|l| serde_json::from_str::<Framing>(l)) {
        Some(Ok(Framing::Footer(f))) if lines.len() >= 2 => f,
        _ => return Err(SimError::Truncated("trace has no footer line".into())),
    };
    let mut events = Vec::with_capacity(lines.len().saturating_sub(2));
    for (i, line) in lines[1..lines.len() - 1].iter().enumerate() {
        let e: TraceEvent = serde_json::from_str(line).map_err(|err| SimError::MalformedTrace {
            line: i + 2,
            reason: err.to_string(),
        })?;
        events.push(e);
    }
    Ok(ParsedTrace {
        header,
        events,
        footer,
        lines,
    })
}
