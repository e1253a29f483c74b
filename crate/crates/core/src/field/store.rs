use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FieldError, ImageRecord};
use crate::link::ServerReceipt;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub stored: usize,
    pub already_present: usize,
    pub not_in_receipt: usize,
    pub duplicate_manifest: bool,
}

/// Append-only record store, optionally backed by a JSONL file.
#[derive(Debug, Default)]
pub struct RecordStore {
    path: Option<PathBuf>,
    records: Vec<ImageRecord>,
    ids: BTreeSet<u64>,
    manifests: BTreeSet<u64>,
}

impl RecordStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens `path`, loading any records already in it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, FieldError> {
        let path = path.as_ref().to_path_buf();
        let mut store = RecordStore {
            path: Some(path.clone()),
            ..Default::default()
        };
        if path.exists() {
            for (i, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: ImageRecord = serde_json::from_str(&line).map_err(|e| FieldError::Corrupt {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
                if store.ids.insert(rec.record_id) {
                    store.records.push(rec);
                }
            }
        }
        Ok(store)
    }

    /// Persists the records a receipt accepted. Records already stored and
    /// records the receipt does not list are skipped; a manifest seen before
    /// is ignored as a whole.
    pub fn ingest(&mut self, receipt: &ServerReceipt, records: &[ImageRecord]) -> Result<IngestReport, FieldError> {
        let mut report = IngestReport::default();
        if !self.manifests.insert(receipt.manifest_id) {
            log::info!("manifest {} already ingested, ignoring", receipt.manifest_id);
            report.duplicate_manifest = true;
            return Ok(report);
        }
        let accepted: BTreeSet<u64> = receipt.accepted.iter().copied().collect();
        let mut fresh = Vec::new();
        for rec in records {
            if !accepted.contains(&rec.record_id) {
                report.not_in_receipt += 1;
                continue;
            }
            rec.validate()?;
            if !self.ids.insert(rec.record_id) {
                report.already_present += 1;
                continue;
            }
            fresh.push(rec.clone());
        }
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            for rec in &fresh {
                let line = serde_json::to_string(rec).expect("records serialize");
                writeln!(f, "{line}")?;
            }
        }
        report.stored = fresh.len();
        self.records.extend(fresh);
        Ok(report)
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{ClassLabel, Spectrum};
    use crate::geo::{GeoPoint, LocalPoint};
    use crate::UavId;

    fn recs(ids: std::ops::Range<u64>) -> Vec<ImageRecord> {
        ids.map(|id| ImageRecord {
            record_id: id,
            uav_id: UavId(1),
            position: GeoPoint { lat: 1.0, lon: 2.0 },
            local: LocalPoint::new(id as f64, 0.0),
            timestamp: id,
            payload: Spectrum {
                red: 0.1,
                nir: 0.5,
                true_class: ClassLabel::Crop,
            },
        })
        .collect()
    }

    fn receipt(manifest_id: u64, r: &[ImageRecord]) -> ServerReceipt {
        ServerReceipt {
            manifest_id,
            accepted: r.iter().map(|x| x.record_id).collect(),
        }
    }

    #[test]
    fn ingest_is_idempotent_and_unions_overlaps() {
        let mut s = RecordStore::in_memory();
        let a = recs(0..100);
        assert_eq!(s.ingest(&receipt(1, &a), &a).unwrap().stored, 100);
        assert!(s.ingest(&receipt(1, &a), &a).unwrap().duplicate_manifest);
        assert_eq!(s.len(), 100);
        let b = recs(90..150);
        let rep = s.ingest(&receipt(2, &b), &b).unwrap();
        assert_eq!((rep.stored, rep.already_present), (50, 10));
        assert_eq!(s.len(), 150);
    }

    #[test]
    fn only_receipted_records_are_stored() {
        let mut s = RecordStore::in_memory();
        let a = recs(0..10);
        let rep = s.ingest(&receipt(1, &a[..4]), &a).unwrap();
        assert_eq!((rep.stored, rep.not_in_receipt), (4, 6));
    }

    #[test]
    fn file_store_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let a = recs(0..20);
        {
            let mut s = RecordStore::open(&path).unwrap();
            s.ingest(&receipt(1, &a), &a).unwrap();
        }
        let s = RecordStore::open(&path).unwrap();
        assert_eq!(s.records(), &a[..]);
    }
}
