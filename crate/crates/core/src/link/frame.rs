//! Binary frame codec.
//!
//! ```text
//! offset  size  field
//! 0       1     magic 0xA5
//! 1       2     payload length (u16, little endian)
//! 3       1     seq
//! 4       1     sys_id (source system, 1-255)
//! 5       1     comp_id
//! 6       1     target_sys (0 = broadcast)
//! 7       1     target_comp
//! 8       1     msg_type
//! 9       1     version (1)
//! 10      n     payload
//! 10+n    2     CRC-16/X-25 over bytes 1..10+n (little endian)
//! ```

use crc::{Crc, CRC_16_IBM_SDLC};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: u8 = 0xA5;
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;
pub const CRC_LEN: usize = 2;
pub const MAX_PAYLOAD: usize = u16::MAX as usize;

/// CRC-16/X-25 (reflected 0x1021, init and xorout 0xFFFF).
pub const X25: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_SDLC);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame truncated: {0} bytes")]
    TruncatedFrame(usize),
    #[error("bad magic byte {0:#04x}")]
    BadMagic(u8),
    #[error("unsupported frame version {0}")]
    BadVersion(u8),
    #[error("crc mismatch: expected {expected:#06x}, computed {computed:#06x}")]
    CrcMismatch { expected: u16, computed: u16 },
    #[error("unknown message type {0}")]
    UnknownMsgType(u8),
    #[error("payload too large: {0} bytes")]
    PayloadTooLarge(usize),
    #[error("source system id 0 is reserved for broadcast")]
    InvalidSource,
    #[error("malformed {msg:?} payload: {reason}")]
    Malformed { msg: MsgType, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum MsgType {
    Telemetry = 1,
    MissionUpload = 2,
    MissionAck = 3,
    TransferRequest = 4,
    TransferAccept = 5,
    TransferReject = 6,
    NotifyGs = 7,
    OffloadManifest = 8,
}

impl MsgType {
    pub const ALL: [MsgType; 8] = [
        MsgType::Telemetry,
        MsgType::MissionUpload,
        MsgType::MissionAck,
        MsgType::TransferRequest,
        MsgType::TransferAccept,
        MsgType::TransferReject,
        MsgType::NotifyGs,
        MsgType::OffloadManifest,
    ];

    pub fn from_u8(v: u8) -> Option<MsgType> {
        MsgType::ALL.into_iter().find(|m| *m as u8 == v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub sys_id: u8,
    pub comp_id: u8,
    pub target_sys: u8,
    pub target_comp: u8,
    pub seq: u8,
    pub msg_type: MsgType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn is_broadcast(&self) -> bool {
        self.target_sys == 0
    }

    pub fn encode(&self) -> Result<Vec<u8>, FrameError> {
        encode(self)
    }
}

pub fn encode(frame: &Frame) -> Result<Vec<u8>, FrameError> {
    if frame.sys_id == 0 {
        return Err(FrameError::InvalidSource);
    }
    let n = frame.payload.len();
    if n > MAX_PAYLOAD {
        return Err(FrameError::PayloadTooLarge(n));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + n + CRC_LEN);
    out.push(MAGIC);
    out.extend_from_slice(&(n as u16).to_le_bytes());
    out.extend_from_slice(&[
        frame.seq,
        frame.sys_id,
        frame.comp_id,
        frame.target_sys,
        frame.target_comp,
        frame.msg_type as u8,
        VERSION,
    ]);
    out.extend_from_slice(&frame.payload);
    let crc = X25.checksum(&out[1..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Frame, FrameError> {
    if bytes.len() < HEADER_LEN + CRC_LEN {
        return Err(FrameError::TruncatedFrame(bytes.len()));
    }
    if bytes[0] != MAGIC {
        return Err(FrameError::BadMagic(bytes[0]));
    }
    let n = u16::from_le_bytes([bytes[1], bytes[2]]) as usize;
    let total = HEADER_LEN + n + CRC_LEN;
    if bytes.len() < total {
        return Err(FrameError::TruncatedFrame(bytes.len()));
    }
    let body = &bytes[..HEADER_LEN + n];
    let expected = u16::from_le_bytes([bytes[HEADER_LEN + n], bytes[HEADER_LEN + n + 1]]);
    let computed = X25.checksum(&body[1..]);
    if expected != computed {
        return Err(FrameError::CrcMismatch { expected, computed });
    }
    if bytes[9] != VERSION {
        return Err(FrameError::BadVersion(bytes[9]));
    }
    let msg_type = MsgType::from_u8(bytes[8]).ok_or(FrameError::UnknownMsgType(bytes[8]))?;
    Ok(Frame {
        seq: bytes[3],
        sys_id: bytes[4],
        comp_id: bytes[5],
        target_sys: bytes[6],
        target_comp: bytes[7],
        msg_type,
        payload: body[HEADER_LEN..].to_vec(),
    })
}
