//! Point-to-point delivery with acknowledgement and retransmission.
//!
//! Each endpoint keeps one sequence counter per destination. A new message
//! goes out only while its sequence number is less than [`SEND_WINDOW`] ahead
//! of the oldest unacknowledged one; the rest wait in a backlog. A message is
//! retransmitted every `ack_timeout_ticks` until a `MissionAck` with its
//! sequence number arrives or `max_retries` attempts have been made.
//!
//! Receivers acknowledge every copy they get and pass a message up only the
//! first time, tracked by a sliding window of [`DEDUP_WINDOW`] sequence
//! numbers per source. Because a sender's outstanding sequence numbers never
//! span more than `SEND_WINDOW`, anything older than the window is a duplicate.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::frame::{decode, encode, Frame, MsgType, MAX_PAYLOAD};
use super::message::LinkMessage;
use super::{ChannelConfig, LinkError};

pub const DEDUP_WINDOW: u32 = 32;
pub const SEND_WINDOW: usize = 16;

pub type SendHandle = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum Outcome {
    Delivered { attempts: u32 },
    Failed { attempts: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub ack_timeout_ticks: u64,
}

impl From<&ChannelConfig> for RetryPolicy {
    fn from(cfg: &ChannelConfig) -> Self {
        RetryPolicy {
            max_retries: cfg.max_retries,
            ack_timeout_ticks: cfg.ack_timeout_ticks,
        }
    }
}

/// A message handed up to the application.
#[derive(Debug, Clone, PartialEq)]
pub struct Received {
    pub from: u8,
    pub seq: u8,
    pub broadcast: bool,
    pub msg: LinkMessage,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReliableStats {
    pub first_sends: u64,
    pub retransmissions: u64,
    pub acks_sent: u64,
    pub duplicates_dropped: u64,
    pub delivered_up: u64,
    pub published: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct DedupWindow {
    highest: u8,
    mask: u32,
}

impl DedupWindow {
    fn first(seq: u8) -> Self {
        DedupWindow { highest: seq, mask: 1 }
    }

    /// True when `seq` has not been seen before.
    fn accept(&mut self, seq: u8) -> bool {
        let ahead = seq.wrapping_sub(self.highest);
        if ahead != 0 && ahead < 128 {
            let shift = ahead as u32;
            self.mask = if shift >= 32 { 0 } else { self.mask << shift };
            self.mask |= 1;
            self.highest = seq;
            return true;
        }
        let behind = self.highest.wrapping_sub(seq) as u32;
        if behind >= DEDUP_WINDOW {
            return false;
        }
        let bit = 1u32 << behind;
        if self.mask & bit != 0 {
            false
        } else {
            self.mask |= bit;
            true
        }
    }
}

#[derive(Debug, Clone)]
struct InFlight {
    handle: SendHandle,
    seq: u8,
    bytes: Vec<u8>,
    attempts: u32,
    next_retry: u64,
}

#[derive(Debug, Clone)]
struct Queued {
    handle: SendHandle,
    target_comp: u8,
    payload: Vec<u8>,
    msg_type: MsgType,
}

#[derive(Debug, Clone)]
pub struct ReliableEndpoint {
    sys_id: u8,
    comp_id: u8,
    policy: RetryPolicy,
    next_seq: BTreeMap<u8, u8>,
    publish_seq: u8,
    inflight: BTreeMap<u8, Vec<InFlight>>,
    backlog: BTreeMap<u8, VecDeque<Queued>>,
    dedup: BTreeMap<u8, DedupWindow>,
    outbox: Vec<Vec<u8>>,
    outcomes: Vec<(SendHandle, Outcome)>,
    next_handle: SendHandle,
    stats: ReliableStats,
}

impl ReliableEndpoint {
    pub fn new(sys_id: u8, comp_id: u8, policy: RetryPolicy) -> Self {
        ReliableEndpoint {
            sys_id,
            comp_id,
            policy,
            next_seq: BTreeMap::new(),
            publish_seq: 0,
            inflight: BTreeMap::new(),
            backlog: BTreeMap::new(),
            dedup: BTreeMap::new(),
            outbox: Vec::new(),
            outcomes: Vec::new(),
            next_handle: 1,
            stats: ReliableStats::default(),
        }
    }

    pub fn sys_id(&self) -> u8 {
        self.sys_id
    }

    pub fn stats(&self) -> &ReliableStats {
        &self.stats
    }

    /// Queues `msg` for reliable delivery to `target_sys`.
    pub fn send(
        &mut self,
        now: u64,
        target_sys: u8,
        target_comp: u8,
        msg: &LinkMessage,
    ) -> Result<SendHandle, LinkError> {
        if target_sys == 0 {
            return Err(LinkError::BroadcastNotReliable);
        }
        let payload = msg.encode_payload();
        if payload.len() > MAX_PAYLOAD {
            return Err(LinkError::Frame(super::FrameError::PayloadTooLarge(payload.len())));
        }
        let handle = self.next_handle;
        self.next_handle += 1;
        self.backlog.entry(target_sys).or_default().push_back(Queued {
            handle,
            target_comp,
            payload,
            msg_type: msg.msg_type(),
        });
        self.fill_window(now, target_sys)?;
        Ok(handle)
    }

    /// Encodes a fire-and-forget broadcast. No ack is expected and the frame
    /// is never retransmitted.
    pub fn publish(&mut self, msg: &LinkMessage) -> Result<Vec<u8>, LinkError> {
        let frame = Frame {
            sys_id: self.sys_id,
            comp_id: self.comp_id,
            target_sys: 0,
            target_comp: 0,
            seq: self.publish_seq,
            msg_type: msg.msg_type(),
            payload: msg.encode_payload(),
        };
        self.publish_seq = self.publish_seq.wrapping_add(1);
        self.stats.published += 1;
        Ok(encode(&frame)?)
    }

    fn fill_window(&mut self, now: u64, target: u8) -> Result<(), LinkError> {
        loop {
            let next = self.next_seq.get(&target).copied().unwrap_or(0);
            let open = match self.inflight.get(&target).and_then(|l| l.first()) {
                Some(oldest) => (next.wrapping_sub(oldest.seq) as usize) < SEND_WINDOW,
                None => true,
            };
            let Some(q) = (if open {
                self.backlog.get_mut(&target).and_then(VecDeque::pop_front)
            } else {
                None
            }) else {
                return Ok(());
            };
            let seq_slot = self.next_seq.entry(target).or_insert(0);
            let seq = *seq_slot;
            *seq_slot = seq.wrapping_add(1);
            let bytes = encode(&Frame {
                sys_id: self.sys_id,
                comp_id: self.comp_id,
                target_sys: target,
                target_comp: q.target_comp,
                seq,
                msg_type: q.msg_type,
                payload: q.payload,
            })?;
            self.outbox.push(bytes.clone());
            self.stats.first_sends += 1;
            self.inflight.entry(target).or_default().push(InFlight {
                handle: q.handle,
                seq,
                bytes,
                attempts: 1,
                next_retry: now + self.policy.ack_timeout_ticks,
            });
        }
    }

    /// Retransmits overdue messages and gives up on exhausted ones.
    pub fn poll(&mut self, now: u64) -> Result<(), LinkError> {
        let targets: Vec<u8> = self.inflight.keys().copied().collect();
        for target in targets {
            let list = self.inflight.get_mut(&target).expect("key present");
            let mut kept = Vec::with_capacity(list.len());
            for mut f in list.drain(..) {
                if now < f.next_retry {
                    kept.push(f);
                } else if f.attempts >= self.policy.max_retries {
                    self.outcomes.push((f.handle, Outcome::Failed { attempts: f.attempts }));
                } else {
                    f.attempts += 1;
                    f.next_retry = now + self.policy.ack_timeout_ticks;
                    self.outbox.push(f.bytes.clone());
                    self.stats.retransmissions += 1;
                    kept.push(f);
                }
            }
            *list = kept;
            self.fill_window(now, target)?;
        }
        Ok(())
    }

    /// Processes one incoming frame. Returns the message when it should be
    /// handed to the application.
    pub fn on_bytes(&mut self, now: u64, bytes: &[u8]) -> Result<Option<Received>, LinkError> {
        let frame = decode(bytes)?;
        self.on_frame(now, &frame)
    }

    pub fn on_frame(&mut self, now: u64, frame: &Frame) -> Result<Option<Received>, LinkError> {
        if frame.target_sys != 0 && frame.target_sys != self.sys_id {
            return Ok(None);
        }
        let msg = LinkMessage::decode_payload(frame.msg_type, &frame.payload)?;
        if let LinkMessage::MissionAck { seq } = msg {
            if let Some(list) = self.inflight.get_mut(&frame.sys_id) {
                if let Some(i) = list.iter().position(|f| f.seq == seq) {
                    let f = list.remove(i);
                    self.outcomes
                        .push((f.handle, Outcome::Delivered { attempts: f.attempts }));
                    self.fill_window(now, frame.sys_id)?;
                }
            }
            return Ok(None);
        }
        if frame.target_sys == 0 {
            return Ok(Some(Received {
                from: frame.sys_id,
                seq: frame.seq,
                broadcast: true,
                msg,
            }));
        }

        let ack = Frame {
            sys_id: self.sys_id,
            comp_id: self.comp_id,
            target_sys: frame.sys_id,
            target_comp: frame.comp_id,
            seq: frame.seq,
            msg_type: MsgType::MissionAck,
            payload: LinkMessage::MissionAck { seq: frame.seq }.encode_payload(),
        };
        self.outbox.push(encode(&ack)?);
        self.stats.acks_sent += 1;

        let fresh = match self.dedup.get_mut(&frame.sys_id) {
            Some(w) => w.accept(frame.seq),
            None => {
                self.dedup.insert(frame.sys_id, DedupWindow::first(frame.seq));
                true
            }
        };
        if !fresh {
            self.stats.duplicates_dropped += 1;
            return Ok(None);
        }
        self.stats.delivered_up += 1;
        Ok(Some(Received {
            from: frame.sys_id,
            seq: frame.seq,
            broadcast: false,
            msg,
        }))
    }

    /// Encoded frames waiting to be handed to the channel.
    pub fn take_outbox(&mut self) -> Vec<Vec<u8>> {
        std::mem::take(&mut self.outbox)
    }

    pub fn take_outcomes(&mut self) -> Vec<(SendHandle, Outcome)> {
        std::mem::take(&mut self.outcomes)
    }

    /// True when nothing is waiting for an acknowledgement.
    pub fn is_idle(&self) -> bool {
        self.inflight.values().all(Vec::is_empty) && self.backlog.values().all(VecDeque::is_empty)
    }

    pub fn outstanding(&self) -> usize {
        self.inflight.values().map(Vec::len).sum::<usize>() + self.backlog.values().map(VecDeque::len).sum::<usize>()
    }
}
