//! Append-only JSONL record store. Reads hit an immutable snapshot taken at
//! open time plus whatever this process appended; the last record for a key
//! wins.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::GatewayError;

/// A cache line that knows its own key and can check it.
pub trait CacheRecord: Serialize + DeserializeOwned + Clone + Send + Sync {
    fn key(&self) -> &str;
    /// Recomputes the key from the stored request.
    fn expected_key(&self) -> String;
}

pub struct RecordStore<R> {
    path: Option<PathBuf>,
    snapshot: HashMap<String, R>,
    fresh: Mutex<HashMap<String, R>>,
    writer: Mutex<Option<File>>,
}

impl<R: CacheRecord> RecordStore<R> {
    /// A store with no backing file; appends live only in memory.
    pub fn in_memory() -> Self {
        RecordStore {
            path: None,
            snapshot: HashMap::new(),
            fresh: Mutex::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    /// Loads `path` if it exists. A missing file is an empty cache.
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        let mut snapshot = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| GatewayError::Cache {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| GatewayError::Cache {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let corrupt = |message: String| GatewayError::Cache {
                    path: path.to_path_buf(),
                    message: format!("line {}: {message}", i + 1),
                };
                let record: R = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
                let expected = record.expected_key();
                if record.key() != expected {
                    return Err(corrupt(format!(
                        "key {} does not match request hash {expected}",
                        record.key()
                    )));
                }
                snapshot.insert(expected, record);
            }
        }
        Ok(RecordStore {
            path: Some(path.to_path_buf()),
            snapshot,
            fresh: Mutex::new(HashMap::new()),
            writer: Mutex::new(None),
        })
    }

    pub fn len(&self) -> usize {
        let fresh = self.fresh.lock().unwrap();
        self.snapshot.len() + fresh.keys().filter(|k| !self.snapshot.contains_key(*k)).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<R> {
        if let Some(r) = self.fresh.lock().unwrap().get(key) {
            return Some(r.clone());
        }
        self.snapshot.get(key).cloned()
    }

    /// Appends one record and makes it visible to later lookups.
    pub fn append(&self, record: R) -> Result<(), GatewayError> {
        let mut line = serde_json::to_string(&record).expect("cache records serialize");
        line.push('\n');
        let mut writer = self.writer.lock().unwrap();
        if let Some(path) = &self.path {
            if writer.is_none() {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir).map_err(|e| self.io_error(e))?;
                }
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| self.io_error(e))?;
                *writer = Some(file);
            }
            let file = writer.as_mut().expect("opened above");
            file.write_all(line.as_bytes()).map_err(|e| self.io_error(e))?;
            file.flush().map_err(|e| self.io_error(e))?;
        }
        self.fresh.lock().unwrap().insert(record.key().to_string(), record);
        Ok(())
    }

    fn io_error(&self, e: std::io::Error) -> GatewayError {
        GatewayError::Cache {
            path: self.path.clone().unwrap_or_default(),
            message: e.to_string(),
        }
    }
}
