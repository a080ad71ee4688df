//! Append-only judgment store backed by a line-delimited JSON file.
//!
//! Every accepted record is written and fsynced before the call returns, so a
//! successful write survives a crash. Records are keyed by their
//! client-supplied id: replaying an identical record is a no-op, while a
//! different payload under a known id is rejected.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use p2c::assessor::{acceptance_rate, AcceptanceRates, JudgmentRecord};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("judgment {0} already stored with a different payload")]
    Conflict(String),
    #[error("invalid judgment: {0}")]
    Invalid(String),
    #[error("{path}:{line}: {message}")]
    Corrupt { path: String, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Outcome of [`JudgmentStore::append`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Appended {
    New,
    /// The identical record was already stored.
    Replayed,
}

#[derive(Debug)]
pub struct JudgmentStore {
    path: PathBuf,
    file: File,
    records: Vec<JudgmentRecord>,
    by_id: HashMap<String, usize>,
}

impl JudgmentStore {
    /// Opens or creates the store and replays its contents. A torn final
    /// line (no trailing newline) from an interrupted write is dropped and
    /// truncated away; any other malformed line is an error.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut records = Vec::new();
        let mut by_id = HashMap::new();
        let mut valid_len = 0u64;
        if path.exists() {
            let mut reader = BufReader::new(File::open(&path)?);
            let mut line = String::new();
            let mut number = 0;
            loop {
                line.clear();
                let n = reader.read_line(&mut line)?;
                if n == 0 {
                    break;
                }
                number += 1;
                if !line.ends_with('\n') {
                    log::warn!("{}: dropping torn final line {number}", path.display());
                    break;
                }
                valid_len += n as u64;
                if line.trim().is_empty() {
                    continue;
                }
                let record: JudgmentRecord = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                    path: path.display().to_string(),
                    line: number,
                    message: e.to_string(),
                })?;
                by_id.insert(record.id.clone(), records.len());
                records.push(record);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        if file.metadata()?.len() != valid_len {
            file.set_len(valid_len)?;
        }
        Ok(Self { path, file, records, by_id })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[JudgmentRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&JudgmentRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    /// Durably appends `record` unless an identical one is already stored.
    pub fn append(&mut self, record: JudgmentRecord) -> Result<Appended, StoreError> {
        if record.id.trim().is_empty() {
            return Err(StoreError::Invalid("empty id".into()));
        }
        if let Some(existing) = self.get(&record.id) {
            return if *existing == record { Ok(Appended::Replayed) } else { Err(StoreError::Conflict(record.id)) };
        }
        let mut line = serde_json::to_string(&record).expect("judgment serializes");
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()?;
        self.by_id.insert(record.id.clone(), self.records.len());
        self.records.push(record);
        Ok(Appended::New)
    }

    /// Acceptance rates over the records of `model_tag`, or over every
    /// record when `model_tag` is `None`. `None` if nothing matches.
    pub fn acceptance(&self, model_tag: Option<&str>) -> Option<AcceptanceRates> {
        let selected: Vec<JudgmentRecord> =
            self.records.iter().filter(|r| model_tag.is_none_or(|t| r.model_tag == t)).cloned().collect();
        acceptance_rate(&selected).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use p2c::assessor::Decision;
    use p2c::corpus::Facet;

    fn record(id: &str, decision: Decision) -> JudgmentRecord {
        JudgmentRecord {
            id: id.into(),
            policy_text: "close files".into(),
            snippet_id: "s1".into(),
            facet: Facet::Compliant,
            model_tag: "m".into(),
            decision,
            timestamp: 1,
            reviewer: "r".into(),
        }
    }

    #[test]
    fn idempotent_on_identical_payload() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = JudgmentStore::open(dir.path().join("j.jsonl")).unwrap();
        assert_eq!(s.append(record("a", Decision::Accept)).unwrap(), Appended::New);
        assert_eq!(s.append(record("a", Decision::Accept)).unwrap(), Appended::Replayed);
        assert!(matches!(s.append(record("a", Decision::Reject)), Err(StoreError::Conflict(_))));
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn reject_only_stream_is_zero_percent() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = JudgmentStore::open(dir.path().join("j.jsonl")).unwrap();
        for i in 0..4 {
            s.append(record(&format!("r{i}"), Decision::Reject)).unwrap();
        }
        let rates = s.acceptance(Some("m")).unwrap();
        assert_eq!(rates.overall, 0.0);
        assert!(s.acceptance(Some("other")).is_none());
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        {
            let mut s = JudgmentStore::open(&path).unwrap();
            s.append(record("a", Decision::Accept)).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"id\":\"b\",\"pol").unwrap();
        drop(f);
        let mut s = JudgmentStore::open(&path).unwrap();
        assert_eq!(s.len(), 1);
        s.append(record("c", Decision::Reject)).unwrap();
        assert_eq!(JudgmentStore::open(&path).unwrap().len(), 2);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        std::fs::write(&path, "not json\n").unwrap();
        assert!(matches!(JudgmentStore::open(&path), Err(StoreError::Corrupt { line: 1, .. })));
    }
}
