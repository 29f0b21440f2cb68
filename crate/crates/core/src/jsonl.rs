//! Line-delimited JSON helpers shared by every artifact format.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed JSONL: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Reads one value per non-blank line. Errors carry the 1-based line number.
/// serde_json's message minus its "at line 1 column N" suffix, which is
/// relative to the single line being parsed.
fn without_position(e: &serde_json::Error) -> String {
    let full = e.to_string();
    let suffix = format!(" at line {} column {}", e.line(), e.column());
    match full.strip_suffix(&suffix) {
        Some(head) => format!("{head} (column {})", e.column()),
        None => full,
    }
}

pub fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let io = |source| JsonlError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| JsonlError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: without_position(&e),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn to_string<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("artifact types serialize"));
        out.push('\n');
    }
    out
}

/// Writes `items` to `path`, creating parent directories.
pub fn write<T: Serialize>(path: &Path, items: &[T]) -> Result<(), JsonlError> {
    let io = |source| JsonlError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(to_string(items).as_bytes()).map_err(io)?;
    w.flush().map_err(io)
}
