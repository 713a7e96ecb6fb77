//! Append-only JSON-lines journal of experiments.
//!
//! Each line records the subcommand, its full configuration, a result
//! summary and the SHA-256 of the report bytes, so that the experiment can be
//! rerun from the line alone. `content_sha256` covers everything except the
//! wall time and the timestamp.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use doubling_lab_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

/// One journal line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentRecord {
    pub subcommand: String,
    pub config: Value,
    pub result: Value,
    pub report_sha256: String,
    pub tool_version: String,
    pub content_sha256: String,
    pub wall_time_seconds: f64,
    pub timestamp_unix: u64,
}

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ExperimentRecord {
    pub fn new(subcommand: &str, config: Value, result: Value, report: &[u8], wall_time_seconds: f64) -> Self {
        let mut record = ExperimentRecord {
            subcommand: subcommand.to_string(),
            config,
            result,
            report_sha256: sha256_hex(report),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            content_sha256: String::new(),
            wall_time_seconds,
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        record.content_sha256 = record.content_hash();
        record
    }

    /// Hash of the reproducible part of the record.
    pub fn content_hash(&self) -> String {
        let content = json!({
            "subcommand": self.subcommand,
            "config": self.config,
            "result": self.result,
            "report_sha256": self.report_sha256,
            "tool_version": self.tool_version,
        });
        sha256_hex(&serde_json::to_vec(&content).expect("json values always serialize"))
    }
}

/// Appends one record as a single line with a single write.
pub fn append(path: &Path, record: &ExperimentRecord) -> Result<()> {
    let mut line = serde_json::to_vec(record)?;
    line.push(b'\n');
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    file.write_all(&line).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Reads every record of a journal.
pub fn read(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_hash_ignores_timing() {
        let a = ExperimentRecord::new("bm", json!({"x": 1}), json!({"r": 2.0}), b"report", 1.0);
        let mut b = a.clone();
        b.wall_time_seconds = 9.0;
        b.timestamp_unix += 100;
        assert_eq!(a.content_hash(), b.content_hash());
        b.result = json!({"r": 2.5});
        assert_ne!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn append_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        let a = ExperimentRecord::new("bm", json!({"x": 0.1}), json!({"r": 1.7733781}), b"r", 0.5);
        append(&path, &a).unwrap();
        append(&path, &a).unwrap();
        let back = read(&path).unwrap();
        assert_eq!(back, vec![a.clone(), a]);
    }
}
