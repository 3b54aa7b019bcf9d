//! Record model exchanges to a cassette and replay them later.
//!
//! A cassette is JSONL: a header line followed by one [`CassetteEntry`] per
//! completion, in dispatch order. Replay checks each incoming request against
//! the recorded digest and fails loudly on the first divergence.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Backend, BackendError, BackendResponse, ChatRequest};

const CASSETTE_FORMAT: &str = "kbagent-cassette";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub index: usize,
    pub digest: String,
    pub role: String,
    pub response: BackendResponse,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Debug, Clone, Error)]
pub enum ReplayError {
    #[error("replay diverged at call {index}: expected {expected_role} ({expected_digest}), got {actual_role} ({actual_digest})")]
    Divergence {
        index: usize,
        expected_role: String,
        expected_digest: String,
        actual_role: String,
        actual_digest: String,
    },
    #[error("cassette exhausted after {recorded} call(s)")]
    Exhausted { recorded: usize },
    #[error("cannot read cassette {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },
}

/// SHA-256 over the canonical JSON form of the request.
pub fn request_digest(request: &ChatRequest) -> String {
    let bytes = serde_json::to_vec(request).expect("requests always serialize");
    hex::encode(Sha256::digest(&bytes))
}

pub fn write_cassette(path: &Path, entries: &[CassetteEntry]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    let header = Header {
        format: CASSETTE_FORMAT.into(),
        version: 1,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_cassette(path: &Path) -> Result<Vec<CassetteEntry>, ReplayError> {
    let unreadable = |reason: String| ReplayError::Unreadable {
        path: path.to_path_buf(),
        reason,
    };
    let file = fs::File::open(path).map_err(|e| unreadable(e.to_string()))?;
    let mut lines = BufReader::new(file).lines();
    let header: Header = match lines.next() {
        Some(line) => serde_json::from_str(&line.map_err(|e| unreadable(e.to_string()))?)
            .map_err(|e| unreadable(format!("bad header: {e}")))?,
        None => return Err(unreadable("empty file".into())),
    };
    if header.format != CASSETTE_FORMAT {
        return Err(unreadable(format!("unexpected format `{}`", header.format)));
    }
    let mut entries = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| unreadable(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CassetteEntry =
            serde_json::from_str(&line).map_err(|e| unreadable(format!("line {}: {e}", n + 2)))?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Passes calls through to `inner` and keeps a copy of each exchange.
pub struct RecordingBackend<B> {
    inner: B,
    entries: Mutex<Vec<CassetteEntry>>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            entries: Mutex::new(Vec::new()),
        }
    }

    pub fn entries(&self) -> Vec<CassetteEntry> {
        self.entries.lock().expect("cassette poisoned").clone()
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        write_cassette(path, &self.entries())
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, request: &ChatRequest) -> Result<BackendResponse, BackendError> {
        let response = self.inner.complete(request)?;
        let mut entries = self.entries.lock().expect("cassette poisoned");
        let index = entries.len();
        entries.push(CassetteEntry {
            index,
            digest: request_digest(request),
            role: request.role.clone(),
            response: response.clone(),
        });
        Ok(response)
    }
}

pub struct ReplayBackend {
    entries: Vec<CassetteEntry>,
    cursor: Mutex<usize>,
}

impl ReplayBackend {
    pub fn new(entries: Vec<CassetteEntry>) -> Self {
        Self {
            entries,
            cursor: Mutex::new(0),
        }
    }

    pub fn open(path: &Path) -> Result<Self, ReplayError> {
        Ok(Self::new(read_cassette(path)?))
    }

    /// Calls served so far.
    pub fn position(&self) -> usize {
        *self.cursor.lock().expect("cursor poisoned")
    }
}

impl Backend for ReplayBackend {
    fn name(&self) -> &str {
        "replay"
    }

    fn complete(&self, request: &ChatRequest) -> Result<BackendResponse, BackendError> {
        let mut cursor = self.cursor.lock().expect("cursor poisoned");
        let index = *cursor;
        let entry = self.entries.get(index).ok_or(ReplayError::Exhausted {
            recorded: self.entries.len(),
        })?;
        let digest = request_digest(request);
        if entry.digest != digest || entry.role != request.role {
            return Err(ReplayError::Divergence {
                index,
                expected_role: entry.role.clone(),
                expected_digest: entry.digest.clone(),
                actual_role: request.role.clone(),
                actual_digest: digest,
            }
            .into());
        }
        *cursor += 1;
        Ok(entry.response.clone())
    }
}
