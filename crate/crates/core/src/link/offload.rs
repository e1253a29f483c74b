//! Bulk record offload over the station WiFi link.
//!
//! The client cuts its records into chunks, each with its own CRC-32, and
//! announces them with a manifest carrying the CRC-32 of all chunk data in
//! order. The server stores chunks whose CRC checks out. When some are
//! missing it answers with the missing indices and only those are resent.
//! When every chunk arrived but the assembled data does not match the
//! manifest checksum, the whole manifest is retried from scratch.

use std::collections::{BTreeMap, BTreeSet};

use crc::{Crc, CRC_32_ISO_HDLC};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::frame::{decode, encode, Frame};
use super::message::LinkMessage;
use super::FrameError;

pub const CRC32: Crc<u32> = Crc::<u32>::new(&CRC_32_ISO_HDLC);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OffloadError {
    #[error("manifest {manifest_id} checksum mismatch")]
    ChecksumMismatch { manifest_id: u64 },
    #[error("partial receipt: {} chunk(s) missing", missing.len())]
    PartialReceipt { missing: Vec<u32> },
    #[error("unknown manifest {0}")]
    UnknownManifest(u64),
    #[error("offload abandoned after {attempts} manifest attempt(s)")]
    GaveUp { attempts: u32 },
    #[error("malformed chunk: {0}")]
    MalformedChunk(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// One opaque record to offload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OffloadItem {
    pub id: u64,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct OffloadConfig {
    pub records_per_chunk: usize,
    pub max_manifest_attempts: u32,
    pub max_resend_rounds: u32,
    /// Probability that one chunk transmission arrives corrupted.
    pub corrupt_prob: f64,
    pub seed: u64,
}

impl Default for OffloadConfig {
    fn default() -> Self {
        OffloadConfig {
            records_per_chunk: 16,
            max_manifest_attempts: 3,
            max_resend_rounds: 16,
            corrupt_prob: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub index: u32,
    pub data: Vec<u8>,
    pub crc: u32,
}

impl Chunk {
    fn build(index: u32, items: &[OffloadItem]) -> Chunk {
        let mut data = Vec::new();
        for it in items {
            data.extend_from_slice(&it.id.to_le_bytes());
            data.extend_from_slice(&(it.bytes.len() as u32).to_le_bytes());
            data.extend_from_slice(&it.bytes);
        }
        let crc = CRC32.checksum(&data);
        Chunk { index, data, crc }
    }

    fn items(&self) -> Result<Vec<OffloadItem>, OffloadError> {
        let mut out = Vec::new();
        let mut rest = &self.data[..];
        while !rest.is_empty() {
            if rest.len() < 12 {
                return Err(OffloadError::MalformedChunk(format!(
                    "chunk {} has a short item header",
                    self.index
                )));
            }
            let id = u64::from_le_bytes(rest[..8].try_into().unwrap());
            let n = u32::from_le_bytes(rest[8..12].try_into().unwrap()) as usize;
            if rest.len() < 12 + n {
                return Err(OffloadError::MalformedChunk(format!(
                    "chunk {} item {id} is truncated",
                    self.index
                )));
            }
            out.push(OffloadItem {
                id,
                bytes: rest[12..12 + n].to_vec(),
            });
            rest = &rest[12 + n..];
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_id: u64,
    pub record_count: u32,
    pub chunk_count: u32,
    pub total_bytes: u64,
    pub checksum: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerReceipt {
    pub manifest_id: u64,
    pub accepted: Vec<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffloadStats {
    pub manifest_attempts: u32,
    pub chunks_sent: u32,
    pub chunk_resends: u32,
}

#[derive(Debug, Clone)]
struct Assembly {
    manifest: Manifest,
    chunks: BTreeMap<u32, Chunk>,
}

/// Receiving side at the offload station.
#[derive(Debug, Clone, Default)]
pub struct OffloadServer {
    open: BTreeMap<u64, Assembly>,
    receipts: BTreeMap<u64, ServerReceipt>,
}

impl OffloadServer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accepts an encoded `OffloadManifest` frame.
    pub fn begin(&mut self, manifest_frame: &[u8], chunk_count: u32) -> Result<u64, OffloadError> {
        let frame = decode(manifest_frame)?;
        let LinkMessage::OffloadManifest {
            manifest_id,
            record_count,
            total_bytes,
            checksum,
        } = LinkMessage::decode_payload(frame.msg_type, &frame.payload)?
        else {
            return Err(OffloadError::MalformedChunk("expected an offload manifest".into()));
        };
        let manifest = Manifest {
            manifest_id,
            record_count,
            chunk_count,
            total_bytes,
            checksum,
        };
        self.open.insert(
            manifest_id,
            Assembly {
                manifest,
                chunks: BTreeMap::new(),
            },
        );
        Ok(manifest_id)
    }

    /// Stores a chunk if its CRC is intact. Returns whether it was kept.
    pub fn receive_chunk(&mut self, manifest_id: u64, chunk: Chunk) -> Result<bool, OffloadError> {
        let asm = self
            .open
            .get_mut(&manifest_id)
            .ok_or(OffloadError::UnknownManifest(manifest_id))?;
        if chunk.index >= asm.manifest.chunk_count || CRC32.checksum(&chunk.data) != chunk.crc {
            return Ok(false);
        }
        asm.chunks.insert(chunk.index, chunk);
        Ok(true)
    }

    /// Checks completeness and the manifest checksum. On success the records
    /// are handed over with the receipt and the manifest is closed.
    pub fn finalize(&mut self, manifest_id: u64) -> Result<(ServerReceipt, Vec<OffloadItem>), OffloadError> {
        let asm = self
            .open
            .get(&manifest_id)
            .ok_or(OffloadError::UnknownManifest(manifest_id))?;
        let missing: Vec<u32> = (0..asm.manifest.chunk_count)
            .filter(|i| !asm.chunks.contains_key(i))
            .collect();
        if !missing.is_empty() {
            return Err(OffloadError::PartialReceipt { missing });
        }
        let mut digest = CRC32.digest();
        let mut total = 0u64;
        for c in asm.chunks.values() {
            digest.update(&c.data);
            total += c.data.len() as u64;
        }
        let asm = self.open.remove(&manifest_id).expect("present");
        if digest.finalize() != asm.manifest.checksum || total != asm.manifest.total_bytes {
            return Err(OffloadError::ChecksumMismatch { manifest_id });
        }
        let mut items = Vec::new();
        for c in asm.chunks.values() {
            items.extend(c.items()?);
        }
        if items.len() as u32 != asm.manifest.record_count {
            return Err(OffloadError::ChecksumMismatch { manifest_id });
        }
        let receipt = ServerReceipt {
            manifest_id,
            accepted: items.iter().map(|i| i.id).collect(),
        };
        self.receipts.insert(manifest_id, receipt.clone());
        Ok((receipt, items))
    }

    pub fn receipt(&self, manifest_id: u64) -> Option<&ServerReceipt> {
        self.receipts.get(&manifest_id)
    }
}

/// The WiFi hop between a landed UAV and the server: seeded random chunk
/// corruption plus one-shot scripted faults for tests.
#[derive(Debug, Clone)]
pub struct WifiLink {
    corrupt_prob: f64,
    rng: ChaCha8Rng,
    corrupt_once: BTreeSet<u32>,
    stale_manifest_once: bool,
}

impl WifiLink {
    pub fn new(corrupt_prob: f64, seed: u64) -> Self {
        WifiLink {
            corrupt_prob,
            rng: ChaCha8Rng::seed_from_u64(seed),
            corrupt_once: BTreeSet::new(),
            stale_manifest_once: false,
        }
    }

    pub fn lossless() -> Self {
        Self::new(0.0, 0)
    }

    /// Corrupts the next transmission of chunk `index`.
    pub fn corrupt_chunk_once(&mut self, index: u32) {
        self.corrupt_once.insert(index);
    }

    /// Makes the next manifest carry a checksum that does not match its data.
    pub fn stale_manifest_once(&mut self) {
        self.stale_manifest_once = true;
    }

    fn carry(&mut self, mut chunk: Chunk) -> Chunk {
        let draw: f64 = self.rng.gen();
        let scripted = self.corrupt_once.remove(&chunk.index);
        if scripted || draw < self.corrupt_prob {
            match chunk.data.first_mut() {
                Some(b) => *b ^= 0x40,
                None => chunk.crc ^= 1,
            }
        }
        chunk
    }
}

/// Runs the offload exchange to completion.
pub fn offload(
    sys_id: u8,
    manifest_id: u64,
    items: &[OffloadItem],
    cfg: &OffloadConfig,
    link: &mut WifiLink,
    server: &mut OffloadServer,
) -> Result<(ServerReceipt, Vec<OffloadItem>, OffloadStats), OffloadError> {
    let per = cfg.records_per_chunk.max(1);
    let chunks: Vec<Chunk> = items
        .chunks(per)
        .enumerate()
        .map(|(i, c)| Chunk::build(i as u32, c))
        .collect();
    let mut digest = CRC32.digest();
    let mut total = 0u64;
    for c in &chunks {
        digest.update(&c.data);
        total += c.data.len() as u64;
    }
    let checksum = digest.finalize();
    let mut stats = OffloadStats::default();

    for _ in 0..cfg.max_manifest_attempts.max(1) {
        stats.manifest_attempts += 1;
        let announced = if std::mem::take(&mut link.stale_manifest_once) {
            checksum ^ 0xFFFF_FFFF
        } else {
            checksum
        };
        let frame = encode(&Frame {
            sys_id,
            comp_id: 0,
            target_sys: crate::GROUND_STATION_SYS,
            target_comp: 0,
            seq: stats.manifest_attempts as u8,
            msg_type: super::MsgType::OffloadManifest,
            payload: LinkMessage::OffloadManifest {
                manifest_id,
                record_count: items.len() as u32,
                total_bytes: total,
                checksum: announced,
            }
            .encode_payload(),
        })?;
        server.begin(&frame, chunks.len() as u32)?;
        let mut to_send: Vec<u32> = (0..chunks.len() as u32).collect();
        let mut rounds = 0;
        loop {
            for &i in &to_send {
                let c = link.carry(chunks[i as usize].clone());
                stats.chunks_sent += 1;
                if rounds > 0 {
                    stats.chunk_resends += 1;
                }
                server.receive_chunk(manifest_id, c)?;
            }
            match server.finalize(manifest_id) {
                Ok((receipt, got)) => return Ok((receipt, got, stats)),
                Err(OffloadError::PartialReceipt { missing }) => {
                    rounds += 1;
                    if rounds > cfg.max_resend_rounds {
                        break;
                    }
                    to_send = missing;
                }
                Err(OffloadError::ChecksumMismatch { .. }) => break,
                Err(e) => return Err(e),
            }
        }
    }
    Err(OffloadError::GaveUp {
        attempts: stats.manifest_attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(n: u64) -> Vec<OffloadItem> {
        (0..n)
            .map(|i| OffloadItem {
                id: 1000 + i,
                bytes: format!("record-{i}").into_bytes(),
            })
            .collect()
    }

    #[test]
    fn empty_offload_gives_empty_receipt() {
        let mut server = OffloadServer::new();
        let (receipt, got, stats) = offload(
            1,
            7,
            &[],
            &OffloadConfig::default(),
            &mut WifiLink::lossless(),
            &mut server,
        )
        .unwrap();
        assert!(receipt.accepted.is_empty());
        assert!(got.is_empty());
        assert_eq!(stats.chunks_sent, 0);
    }

    #[test]
    fn lossless_hundred_records() {
        let recs = records(100);
        let mut server = OffloadServer::new();
        let (receipt, got, stats) = offload(
            1,
            7,
            &recs,
            &OffloadConfig::default(),
            &mut WifiLink::lossless(),
            &mut server,
        )
        .unwrap();
        assert_eq!(receipt.accepted.len(), 100);
        assert_eq!(got, recs);
        assert_eq!(stats.chunk_resends, 0);
        assert_eq!(server.receipt(7), Some(&receipt));
    }

    #[test]
    fn one_corrupt_chunk_is_resent_once() {
        let recs = records(100);
        let mut link = WifiLink::lossless();
        link.corrupt_chunk_once(3);
        let mut server = OffloadServer::new();
        let (receipt, _, stats) = offload(1, 9, &recs, &OffloadConfig::default(), &mut link, &mut server).unwrap();
        assert_eq!(receipt.accepted.len(), 100);
        assert_eq!(stats.chunk_resends, 1);
        assert_eq!(stats.manifest_attempts, 1);
    }

    #[test]
    fn checksum_mismatch_retries_whole_manifest() {
        let recs = records(40);
        let mut link = WifiLink::lossless();
        link.stale_manifest_once();
        let mut server = OffloadServer::new();
        let (receipt, _, stats) = offload(1, 9, &recs, &OffloadConfig::default(), &mut link, &mut server).unwrap();
        assert_eq!(receipt.accepted.len(), 40);
        assert_eq!(stats.manifest_attempts, 2);
        assert_eq!(stats.chunks_sent, 6);
    }

    #[test]
    fn hopeless_link_gives_up() {
        let cfg = OffloadConfig {
            corrupt_prob: 1.0,
            max_resend_rounds: 2,
            max_manifest_attempts: 2,
            ..Default::default()
        };
        let mut server = OffloadServer::new();
        let err = offload(1, 1, &records(5), &cfg, &mut WifiLink::new(1.0, 3), &mut server).unwrap_err();
        assert_eq!(err, OffloadError::GaveUp { attempts: 2 });
    }
}
