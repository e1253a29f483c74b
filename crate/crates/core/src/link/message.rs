//! Typed payloads carried inside frames.
//!
//! All integers are little endian. Floats are IEEE-754 `f64` little endian.
//! A waypoint item is 28 bytes: id `u64`, plan index `u32`, x `f64`, y `f64`.

use serde::{Deserialize, Serialize};

use super::frame::{FrameError, MsgType};
use crate::geo::{GeoPoint, LocalPoint};
use crate::{Mode, Waypoint, WaypointId};

pub const WAYPOINT_ITEM_LEN: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum RejectReason {
    Busy = 1,
    Battery = 2,
}

/// Event codes carried by `NotifyGs`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum EventCode {
    LowBattery = 1,
    MissionComplete = 2,
    TransferFailed = 3,
    WorkUnreachable = 4,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LinkMessage {
    Telemetry {
        position: GeoPoint,
        battery_pct: f64,
        mode: Mode,
        timestamp: u32,
    },
    MissionUpload {
        mission_id: u32,
        items: Vec<Waypoint>,
    },
    MissionAck {
        seq: u8,
    },
    TransferRequest {
        transfer_id: u32,
        requester: u8,
        waypoints: Vec<Waypoint>,
    },
    TransferAccept {
        transfer_id: u32,
    },
    TransferReject {
        transfer_id: u32,
        reason: RejectReason,
    },
    NotifyGs {
        event: EventCode,
        detail: String,
    },
    OffloadManifest {
        manifest_id: u64,
        record_count: u32,
        total_bytes: u64,
        checksum: u32,
    },
}

impl LinkMessage {
    pub fn msg_type(&self) -> MsgType {
        match self {
            LinkMessage::Telemetry { .. } => MsgType::Telemetry,
            LinkMessage::MissionUpload { .. } => MsgType::MissionUpload,
            LinkMessage::MissionAck { .. } => MsgType::MissionAck,
            LinkMessage::TransferRequest { .. } => MsgType::TransferRequest,
            LinkMessage::TransferAccept { .. } => MsgType::TransferAccept,
            LinkMessage::TransferReject { .. } => MsgType::TransferReject,
            LinkMessage::NotifyGs { .. } => MsgType::NotifyGs,
            LinkMessage::OffloadManifest { .. } => MsgType::OffloadManifest,
        }
    }

    pub fn encode_payload(&self) -> Vec<u8> {
        let mut w = Vec::new();
        match self {
            LinkMessage::Telemetry {
                position,
                battery_pct,
                mode,
                timestamp,
            } => {
                put_f64(&mut w, position.lat);
                put_f64(&mut w, position.lon);
                put_f64(&mut w, *battery_pct);
                w.push(mode.code());
                w.extend_from_slice(&timestamp.to_le_bytes());
            }
            LinkMessage::MissionUpload { mission_id, items } => {
                w.extend_from_slice(&mission_id.to_le_bytes());
                w.extend_from_slice(&(items.len() as u16).to_le_bytes());
                put_waypoints(&mut w, items);
            }
            LinkMessage::MissionAck { seq } => w.push(*seq),
            LinkMessage::TransferRequest {
                transfer_id,
                requester,
                waypoints,
            } => {
                w.extend_from_slice(&transfer_id.to_le_bytes());
                w.push(*requester);
                w.extend_from_slice(&(waypoints.len() as u16).to_le_bytes());
                put_waypoints(&mut w, waypoints);
            }
            LinkMessage::TransferAccept { transfer_id } => w.extend_from_slice(&transfer_id.to_le_bytes()),
            LinkMessage::TransferReject { transfer_id, reason } => {
                w.extend_from_slice(&transfer_id.to_le_bytes());
                w.push(*reason as u8);
            }
            LinkMessage::NotifyGs { event, detail } => {
                w.push(*event as u8);
                let bytes = detail.as_bytes();
                let n = bytes.len().min(u16::MAX as usize);
                w.extend_from_slice(&(n as u16).to_le_bytes());
                w.extend_from_slice(&bytes[..n]);
            }
            LinkMessage::OffloadManifest {
                manifest_id,
                record_count,
                total_bytes,
                checksum,
            } => {
                w.extend_from_slice(&manifest_id.to_le_bytes());
                w.extend_from_slice(&record_count.to_le_bytes());
                w.extend_from_slice(&total_bytes.to_le_bytes());
                w.extend_from_slice(&checksum.to_le_bytes());
            }
        }
        w
    }

    pub fn decode_payload(msg: MsgType, bytes: &[u8]) -> Result<LinkMessage, FrameError> {
        let mut r = Reader { msg, bytes, pos: 0 };
        let out = match msg {
            MsgType::Telemetry => {
                let lat = r.f64()?;
                let lon = r.f64()?;
                let position = GeoPoint::new(lat, lon).map_err(|e| r.malformed(&e.to_string()))?;
                let battery_pct = r.f64()?;
                let code = r.u8()?;
                let mode = Mode::from_code(code).ok_or_else(|| r.malformed(&format!("mode code {code}")))?;
                let timestamp = r.u32()?;
                LinkMessage::Telemetry {
                    position,
                    battery_pct,
                    mode,
                    timestamp,
                }
            }
            MsgType::MissionUpload => {
                let mission_id = r.u32()?;
                let count = r.u16()? as usize;
                let items = r.waypoints(count)?;
                LinkMessage::MissionUpload { mission_id, items }
            }
            MsgType::MissionAck => LinkMessage::MissionAck { seq: r.u8()? },
            MsgType::TransferRequest => {
                let transfer_id = r.u32()?;
                let requester = r.u8()?;
                let count = r.u16()? as usize;
                if count == 0 {
                    return Err(r.malformed("transfer request without waypoints"));
                }
                let waypoints = r.waypoints(count)?;
                LinkMessage::TransferRequest {
                    transfer_id,
                    requester,
                    waypoints,
                }
            }
            MsgType::TransferAccept => LinkMessage::TransferAccept { transfer_id: r.u32()? },
            MsgType::TransferReject => {
                let transfer_id = r.u32()?;
                let reason = match r.u8()? {
                    1 => RejectReason::Busy,
                    2 => RejectReason::Battery,
                    other => return Err(r.malformed(&format!("reject reason {other}"))),
                };
                LinkMessage::TransferReject { transfer_id, reason }
            }
            MsgType::NotifyGs => {
                let event = match r.u8()? {
                    1 => EventCode::LowBattery,
                    2 => EventCode::MissionComplete,
                    3 => EventCode::TransferFailed,
                    4 => EventCode::WorkUnreachable,
                    other => return Err(r.malformed(&format!("event code {other}"))),
                };
                let n = r.u16()? as usize;
                let raw = r.take(n)?;
                let detail = String::from_utf8(raw.to_vec()).map_err(|_| r.malformed("detail is not UTF-8"))?;
                LinkMessage::NotifyGs { event, detail }
            }
            MsgType::OffloadManifest => LinkMessage::OffloadManifest {
                manifest_id: r.u64()?,
                record_count: r.u32()?,
                total_bytes: r.u64()?,
                checksum: r.u32()?,
            },
        };
        if r.pos != bytes.len() {
            return Err(r.malformed(&format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(out)
    }
}

fn put_f64(w: &mut Vec<u8>, v: f64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_waypoints(w: &mut Vec<u8>, items: &[Waypoint]) {
    for wp in items {
        w.extend_from_slice(&wp.id.0.to_le_bytes());
        w.extend_from_slice(&wp.plan_index.to_le_bytes());
        put_f64(w, wp.pos.x);
        put_f64(w, wp.pos.y);
    }
}

struct Reader<'a> {
    msg: MsgType,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn malformed(&self, reason: &str) -> FrameError {
        FrameError::Malformed {
            msg: self.msg,
            reason: reason.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FrameError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.malformed("payload too short"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, FrameError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FrameError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, FrameError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FrameError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, FrameError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn waypoints(&mut self, count: usize) -> Result<Vec<Waypoint>, FrameError> {
        let remaining = self.bytes.len() - self.pos;
        if remaining != count * WAYPOINT_ITEM_LEN {
            return Err(self.malformed(&format!("declared {count} items but {remaining} bytes follow")));
        }
        (0..count)
            .map(|_| {
                let id = WaypointId(self.u64()?);
                let plan_index = self.u32()?;
                let pos = LocalPoint::new(self.f64()?, self.f64()?);
                Ok(Waypoint { id, plan_index, pos })
            })
            .collect()
    }
}
