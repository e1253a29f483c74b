//! On-disk state under the data directory.
//!
//! ```text
//! <data-dir>/fields/<field_id>.geojson
//! <data-dir>/missions/<mission_id>/{mission.json, plan.json, response.json}
//! <data-dir>/runs/<run_id>/{handle.json, scenario.json, report.json, trace.jsonl, heatmap.json, records.jsonl}
//! <data-dir>/requests/<key>.json
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use agriswarm_core::sim::sha256_hex;

use crate::error::GatewayError;

/// Environment variable that overrides the default data directory.
pub const DATA_DIR_ENV: &str = "AGRISWARM_DATA_DIR";

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

/// A response remembered under a client request id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredResponse {
    pub status: u16,
    pub body: serde_json::Value,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Store, GatewayError> {
        let root = root.into();
        for sub in ["fields", "missions", "runs", "requests"] {
            std::fs::create_dir_all(root.join(sub))?;
        }
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn field_path(&self, id: &str) -> PathBuf {
        self.root.join("fields").join(format!("{}.geojson", safe(id)))
    }

    pub fn mission_dir(&self, id: &str) -> PathBuf {
        self.root.join("missions").join(safe(id))
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn run_dir(&self, id: &str) -> PathBuf {
        self.runs_dir().join(safe(id))
    }

    /// Stores a field document and returns its content-derived id.
    pub fn put_field(&self, text: &str) -> Result<String, GatewayError> {
        let id = format!("f-{}", &sha256_hex(text.as_bytes())[..12]);
        let path = self.field_path(&id);
        if !path.exists() {
            write_atomic(&path, text.as_bytes())?;
        }
        Ok(id)
    }

    pub fn field(&self, id: &str) -> Result<String, GatewayError> {
        read_text(&self.field_path(id)).ok_or_else(|| GatewayError::NotFound(format!("field {id}")))
    }

    pub fn mission_file(&self, id: &str, name: &str) -> Result<String, GatewayError> {
        read_text(&self.mission_dir(id).join(name)).ok_or_else(|| GatewayError::NotFound(format!("mission {id}")))
    }

    pub fn remembered(&self, key: &str) -> Option<StoredResponse> {
        let text = read_text(&self.request_path(key))?;
        serde_json::from_str(&text).ok()
    }

    pub fn remember(&self, key: &str, response: &StoredResponse) -> Result<(), GatewayError> {
        let text = serde_json::to_vec(response).map_err(|e| GatewayError::Internal(e.to_string()))?;
        write_atomic(&self.request_path(key), &text)
    }

    fn request_path(&self, key: &str) -> PathBuf {
        self.root
            .join("requests")
            .join(format!("{}.json", &sha256_hex(key.as_bytes())[..32]))
    }

    /// Largest numeric suffix among stored `r-NNNNNN` run directories.
    pub fn last_run_number(&self) -> u64 {
        let Ok(entries) = std::fs::read_dir(self.runs_dir()) else {
            return 0;
        };
        entries
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str()?.strip_prefix("r-")?.parse::<u64>().ok())
            .max()
            .unwrap_or(0)
    }
}

/// Writes through a temporary file and a rename so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), GatewayError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), GatewayError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| GatewayError::Internal(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_text(path: &Path) -> Option<String> {
    std::fs::read_to_string(path).ok()
}

/// Keeps ids from naming paths outside their directory.
fn safe(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}
