//! Simulated radio channel: seeded Bernoulli loss per transmission attempt,
//! fixed latency, blackouts and an optional range limit.
//!
//! Frames are delivered in `(due tick, insertion order)` order. Broadcast
//! frames (`target_sys == 0`) go to every subscriber of their message type
//! except the sender; loss is drawn independently per recipient, in ascending
//! recipient order.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::frame::{MsgType, HEADER_LEN};
use super::LinkError;
use crate::geo::{dist, LocalPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// Probability in `[0, 1]` that one transmission attempt is lost.
    pub loss_prob: f64,
    pub latency_ticks: u64,
    pub seed: u64,
    pub max_retries: u32,
    pub ack_timeout_ticks: u64,
    /// Frames between nodes further apart than this are dropped. `None` is
    /// unlimited range.
    pub max_range_m: Option<f64>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            loss_prob: 0.0,
            latency_ticks: 1,
            seed: 0,
            max_retries: 8,
            ack_timeout_ticks: 4,
            max_range_m: None,
        }
    }
}

impl ChannelConfig {
    pub fn lossy(loss_prob: f64, seed: u64) -> Self {
        ChannelConfig {
            loss_prob,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        let bad = |m: String| Err(LinkError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return bad(format!("loss_prob {} outside [0, 1]", self.loss_prob));
        }
        if self.max_retries < 1 {
            return bad("max_retries must be at least 1".into());
        }
        if self.ack_timeout_ticks < 1 {
            return bad("ack_timeout_ticks must be at least 1".into());
        }
        if let Some(r) = self.max_range_m {
            if !(r > 0.0) {
                return bad(format!("max_range_m {r} must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct TypeStats {
    pub transmissions: u64,
    pub deliveries: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct ChannelStats {
    /// Frames handed to the channel, broadcast or unicast.
    pub transmissions: u64,
    pub broadcasts: u64,
    pub deliveries: u64,
    pub lost: u64,
    pub blacked_out: u64,
    pub out_of_range: u64,
    pub by_type: BTreeMap<MsgType, TypeStats>,
}

/// A frame that reached its recipient.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub to: u8,
    pub from: u8,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
struct InTransit {
    to: u8,
    from: u8,
    msg_type: MsgType,
    bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct Channel {
    cfg: ChannelConfig,
    rng: ChaCha8Rng,
    queue: BTreeMap<(u64, u64), InTransit>,
    inserted: u64,
    nodes: BTreeSet<u8>,
    subscribers: BTreeMap<MsgType, BTreeSet<u8>>,
    blackouts: BTreeMap<u8, Vec<(u64, u64)>>,
    positions: BTreeMap<u8, LocalPoint>,
    stats: ChannelStats,
}

impl Channel {
    pub fn new(cfg: ChannelConfig) -> Result<Self, LinkError> {
        cfg.validate()?;
        Ok(Channel {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            queue: BTreeMap::new(),
            inserted: 0,
            nodes: BTreeSet::new(),
            subscribers: BTreeMap::new(),
            blackouts: BTreeMap::new(),
            positions: BTreeMap::new(),
            stats: ChannelStats::default(),
        })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &ChannelStats {
        &self.stats
    }

    pub fn register(&mut self, sys_id: u8) {
        self.nodes.insert(sys_id);
    }

    pub fn subscribe(&mut self, sys_id: u8, topic: MsgType) {
        self.register(sys_id);
        self.subscribers.entry(topic).or_default().insert(sys_id);
    }

    /// Silences `sys_id` for ticks in `[from, until)`, both directions.
    pub fn add_blackout(&mut self, sys_id: u8, from: u64, until: u64) {
        self.blackouts.entry(sys_id).or_default().push((from, until));
    }

    pub fn blacked_out(&self, sys_id: u8, tick: u64) -> bool {
        self.blackouts
            .get(&sys_id)
            .is_some_and(|spans| spans.iter().any(|&(a, b)| a <= tick && tick < b))
    }

    pub fn set_position(&mut self, sys_id: u8, pos: LocalPoint) {
        self.positions.insert(sys_id, pos);
    }

    /// Number of frames queued and not yet delivered.
    pub fn in_transit(&self) -> usize {
        self.queue.len()
    }

    /// Hands one encoded frame to the channel at tick `now`. Returns how many
    /// copies were queued for delivery.
    pub fn transmit(&mut self, now: u64, bytes: &[u8]) -> Result<usize, LinkError> {
        if bytes.len() < HEADER_LEN {
            return Err(LinkError::Frame(super::FrameError::TruncatedFrame(bytes.len())));
        }
        let from = bytes[4];
        let target = bytes[6];
        let msg_type =
            MsgType::from_u8(bytes[8]).ok_or(LinkError::Frame(super::FrameError::UnknownMsgType(bytes[8])))?;

        self.stats.transmissions += 1;
        self.stats.by_type.entry(msg_type).or_default().transmissions += 1;
        let recipients: Vec<u8> = if target == 0 {
            self.stats.broadcasts += 1;
            self.subscribers
                .get(&msg_type)
                .map(|s| s.iter().copied().filter(|&n| n != from).collect())
                .unwrap_or_default()
        } else if self.nodes.contains(&target) {
            vec![target]
        } else {
            Vec::new()
        };

        let mut queued = 0;
        for to in recipients {
            let draw: f64 = self.rng.gen();
            if draw < self.cfg.loss_prob {
                self.stats.lost += 1;
                continue;
            }
            if self.blacked_out(from, now) || self.blacked_out(to, now) {
                self.stats.blacked_out += 1;
                continue;
            }
            if let (Some(limit), Some(a), Some(b)) =
                (self.cfg.max_range_m, self.positions.get(&from), self.positions.get(&to))
            {
                if dist(*a, *b) > limit {
                    self.stats.out_of_range += 1;
                    continue;
                }
            }
            let key = (now + self.cfg.latency_ticks, self.inserted);
            self.inserted += 1;
            self.queue.insert(
                key,
                InTransit {
                    to,
                    from,
                    msg_type,
                    bytes: bytes.to_vec(),
                },
            );
            queued += 1;
        }
        Ok(queued)
    }

    /// Removes and returns every frame due at or before `now`. A recipient
    /// that is blacked out at delivery time loses the frame.
    pub fn deliver(&mut self, now: u64) -> Vec<Delivery> {
        let later = self.queue.split_off(&(now + 1, 0));
        let due = std::mem::replace(&mut self.queue, later);
        let mut out = Vec::with_capacity(due.len());
        for (_, f) in due {
            if self.blacked_out(f.to, now) {
                self.stats.blacked_out += 1;
                continue;
            }
            self.stats.deliveries += 1;
            self.stats.by_type.entry(f.msg_type).or_default().deliveries += 1;
            out.push(Delivery {
                to: f.to,
                from: f.from,
                bytes: f.bytes,
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::frame::{encode, Frame};

    fn telemetry_frame(from: u8) -> Vec<u8> {
        encode(&Frame {
            sys_id: from,
            comp_id: 1,
            target_sys: 0,
            target_comp: 0,
            seq: 0,
            msg_type: MsgType::Telemetry,
            payload: vec![1, 2, 3],
        })
        .unwrap()
    }

    fn channel(loss: f64, seed: u64) -> Channel {
        let mut ch = Channel::new(ChannelConfig::lossy(loss, seed)).unwrap();
        for n in [1, 2, 3, 4] {
            ch.subscribe(n, MsgType::Telemetry);
        }
        ch
    }

    #[test]
    fn lossless_broadcast_reaches_every_other_subscriber() {
        let mut ch = channel(0.0, 1);
        assert_eq!(ch.transmit(0, &telemetry_frame(1)).unwrap(), 3);
        assert!(ch.deliver(0).is_empty());
        let got: Vec<u8> = ch.deliver(1).iter().map(|d| d.to).collect();
        assert_eq!(got, vec![2, 3, 4]);
    }

    #[test]
    fn total_loss_delivers_nothing() {
        let mut ch = channel(1.0, 1);
        for t in 0..50 {
            ch.transmit(t, &telemetry_frame(1)).unwrap();
        }
        assert!(ch.deliver(100).is_empty());
        assert_eq!(ch.stats().lost, 150);
    }

    #[test]
    fn half_loss_is_binomial() {
        let mut ch = Channel::new(ChannelConfig::lossy(0.5, 42)).unwrap();
        ch.subscribe(1, MsgType::Telemetry);
        ch.subscribe(2, MsgType::Telemetry);
        for t in 0..1000 {
            ch.transmit(t, &telemetry_frame(1)).unwrap();
        }
        let n = ch.deliver(2000).len() as f64;
        let sigma = (1000.0f64 * 0.25).sqrt();
        assert!((n - 500.0).abs() <= 3.0 * sigma, "{n} deliveries");
    }

    #[test]
    fn blackout_blocks_both_directions_and_delivery() {
        let mut ch = channel(0.0, 1);
        ch.add_blackout(2, 5, 10);
        ch.transmit(5, &telemetry_frame(2)).unwrap();
        ch.transmit(4, &telemetry_frame(1)).unwrap();
        let got: Vec<(u8, u8)> = ch.deliver(5).iter().map(|d| (d.from, d.to)).collect();
        assert_eq!(got, vec![(1, 3), (1, 4)]);
    }

    #[test]
    fn range_limit_drops_far_nodes() {
        let cfg = ChannelConfig {
            max_range_m: Some(100.0),
            ..Default::default()
        };
        let mut ch = Channel::new(cfg).unwrap();
        ch.subscribe(1, MsgType::Telemetry);
        ch.subscribe(2, MsgType::Telemetry);
        ch.subscribe(3, MsgType::Telemetry);
        ch.set_position(1, LocalPoint::new(0.0, 0.0));
        ch.set_position(2, LocalPoint::new(50.0, 0.0));
        ch.set_position(3, LocalPoint::new(500.0, 0.0));
        assert_eq!(ch.transmit(0, &telemetry_frame(1)).unwrap(), 1);
    }

    #[test]
    fn config_validation() {
        assert!(Channel::new(ChannelConfig::lossy(1.5, 0)).is_err());
        assert!(Channel::new(ChannelConfig {
            max_retries: 0,
            ..Default::default()
        })
        .is_err());
    }
}
