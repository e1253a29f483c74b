//! Radio and WiFi message layer.
//!
//! Telemetry is published as broadcast frames with no acknowledgement.
//! Mission, transfer and notification messages travel point to point through
//! [`ReliableEndpoint`], which retransmits until acknowledged. Bulk data goes
//! over a separate WiFi hop in CRC-checked chunks.

pub mod channel;
pub mod frame;
pub mod message;
pub mod offload;
pub mod reliable;

use thiserror::Error;

pub use channel::{Channel, ChannelConfig, ChannelStats, Delivery};
pub use frame::{decode, encode, Frame, FrameError, MsgType};
pub use message::{EventCode, LinkMessage, RejectReason};
pub use offload::{offload, OffloadConfig, OffloadError, OffloadItem, OffloadServer, ServerReceipt, WifiLink};
pub use reliable::{Outcome, Received, ReliableEndpoint, RetryPolicy, SendHandle};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinkError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("invalid channel config: {0}")]
    InvalidConfig(String),
    #[error("reliable delivery needs a unicast target")]
    BroadcastNotReliable,
}
