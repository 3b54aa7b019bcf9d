//! Knowledge corpus ingestion and chunking.
//!
//! A corpus root holds three kinds of sources:
//!
//! ```text
//! <root>/writeups/**/*.md      one markdown writeup per file
//! <root>/code/records.csv      task,solution
//! <root>/payloads/records.csv  exploit,vulnerability
//! ```
//!
//! Documents are loaded in lexicographic order of their source path, so two
//! loads over the same tree always agree. Malformed records never abort a
//! load; they are collected in a [`SkipReport`].

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

/// Default chunk window, in characters.
pub const DEFAULT_CHUNK_SIZE: usize = 4096;
/// Default overlap between consecutive chunks, in characters.
pub const DEFAULT_CHUNK_OVERLAP: usize = 100;

pub const RECORDS_FILE: &str = "records.csv";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus root {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed record in {source_path} row {row}: {reason}")]
    MalformedRecord {
        source_path: String,
        row: usize,
        reason: String,
    },
    #[error("chunk size {chunk_size} must exceed overlap {overlap}")]
    InvalidChunkParams { chunk_size: usize, overlap: usize },
    #[error("unknown corpus kind `{0}` (expected writeup, code or payload)")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    Writeup,
    Code,
    Payload,
}

impl CorpusKind {
    pub const ALL: [CorpusKind; 3] = [CorpusKind::Writeup, CorpusKind::Code, CorpusKind::Payload];

    /// Sub-directory of the corpus root holding this kind.
    pub fn dir_name(self) -> &'static str {
        match self {
            CorpusKind::Writeup => "writeups",
            CorpusKind::Code => "code",
            CorpusKind::Payload => "payloads",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CorpusKind::Writeup => "writeup",
            CorpusKind::Code => "code",
            CorpusKind::Payload => "payload",
        }
    }

    /// Declared CSV header for two-column kinds.
    pub fn header(self) -> Option<[&'static str; 2]> {
        match self {
            CorpusKind::Writeup => None,
            CorpusKind::Code => Some(["task", "solution"]),
            CorpusKind::Payload => Some(["exploit", "vulnerability"]),
        }
    }
}

impl fmt::Display for CorpusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorpusKind {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "writeup" | "writeups" => Ok(CorpusKind::Writeup),
            "code" => Ok(CorpusKind::Code),
            "payload" | "payloads" => Ok(CorpusKind::Payload),
            other => Err(CorpusError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDocument {
    /// `<kind>/<relative path>` plus `#<row>` for tabular records.
    pub id: String,
    pub kind: CorpusKind,
    pub title: String,
    pub body: String,
    pub source_path: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

/// A raw two-column row as read from a records file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub fields: Vec<String>,
    /// Path relative to the corpus root.
    pub source_path: String,
    /// 0-based data row index (header excluded).
    pub row: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    pub skipped: Vec<SkippedRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRecord {
    pub source_path: String,
    pub row: Option<usize>,
    pub reason: String,
}

impl SkipReport {
    pub fn is_empty(&self) -> bool {
        self.skipped.is_empty()
    }

    pub fn len(&self) -> usize {
        self.skipped.len()
    }

    fn push(&mut self, source_path: impl Into<String>, row: Option<usize>, reason: impl Into<String>) {
        let entry = SkippedRecord {
            source_path: source_path.into(),
            row,
            reason: reason.into(),
        };
        tracing::warn!(path = %entry.source_path, row = ?entry.row, reason = %entry.reason, "skipping corpus record");
        self.skipped.push(entry);
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadedCorpus {
    pub documents: Vec<SourceDocument>,
    pub skipped: SkipReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub name: String,
    /// `None` when the manifest spans several kinds.
    pub kind: Option<CorpusKind>,
    pub document_count: usize,
    pub counts: BTreeMap<CorpusKind, usize>,
    pub root: PathBuf,
}

/// Address of a chunk: owning document and 0-based sequence number.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChunkRef {
    pub doc_id: String,
    pub seq: usize,
}

impl ChunkRef {
    pub fn new(doc_id: impl Into<String>, seq: usize) -> Self {
        Self {
            doc_id: doc_id.into(),
            seq,
        }
    }
}

impl fmt::Display for ChunkRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.doc_id, self.seq)
    }
}

impl FromStr for ChunkRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (doc, seq) = s
            .rsplit_once('@')
            .ok_or_else(|| format!("chunk ref `{s}` lacks `@seq`"))?;
        let seq = seq
            .parse()
            .map_err(|_| format!("chunk ref `{s}` has a non-numeric sequence"))?;
        if doc.is_empty() {
            return Err(format!("chunk ref `{s}` has an empty document id"));
        }
        Ok(ChunkRef::new(doc, seq))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub seq: usize,
    /// Character offset (inclusive) into the document body.
    pub start: usize,
    /// Character offset (exclusive) into the document body.
    pub end: usize,
    pub text: String,
}

impl Chunk {
    pub fn chunk_ref(&self) -> ChunkRef {
        ChunkRef::new(self.doc_id.clone(), self.seq)
    }
}

/// Loads every document of `kind` below `root`.
///
/// A missing kind sub-directory yields an empty corpus; an unreadable root is
/// an error.
pub fn load_corpus(root: &Path, kind: CorpusKind) -> Result<LoadedCorpus, CorpusError> {
    fs::read_dir(root).map_err(|source| CorpusError::Io {
        path: root.to_path_buf(),
        source,
    })?;
    let mut out = LoadedCorpus::default();
    match kind {
        CorpusKind::Writeup => load_writeups(root, &mut out)?,
        CorpusKind::Code | CorpusKind::Payload => load_records(root, kind, &mut out)?,
    }
    Ok(out)
}

/// Loads all three kinds, writeups first.
pub fn load_all(root: &Path) -> Result<LoadedCorpus, CorpusError> {
    let mut out = LoadedCorpus::default();
    for kind in CorpusKind::ALL {
        let part = load_corpus(root, kind)?;
        out.documents.extend(part.documents);
        out.skipped.skipped.extend(part.skipped.skipped);
    }
    Ok(out)
}

fn relative(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn load_writeups(root: &Path, out: &mut LoadedCorpus) -> Result<(), CorpusError> {
    let dir = root.join(CorpusKind::Writeup.dir_name());
    if !dir.is_dir() {
        return Ok(());
    }
    let mut files = Vec::new();
    for entry in WalkDir::new(&dir) {
        let entry = entry.map_err(|e| CorpusError::Io {
            path: dir.clone(),
            source: e.into(),
        })?;
        let path = entry.path();
        if entry.file_type().is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("md")) {
            files.push((relative(root, path), path.to_path_buf()));
        }
    }
    files.sort();

    for (rel, path) in files {
        let raw = match fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) => {
                out.skipped.push(rel, None, format!("unreadable: {e}"));
                continue;
            }
        };
        let text = match String::from_utf8(raw) {
            Ok(t) => t,
            Err(_) => {
                out.skipped.push(rel, None, "not valid UTF-8");
                continue;
            }
        };
        let body = normalize_text(&text);
        if body.is_empty() {
            out.skipped.push(rel, None, "empty body");
            continue;
        }
        let title = markdown_title(&body).unwrap_or_else(|| {
            Path::new(&rel)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| rel.clone())
        });
        let id = format!("{}/{}", CorpusKind::Writeup.as_str(), rel_within_kind(&rel));
        out.documents.push(SourceDocument {
            id,
            kind: CorpusKind::Writeup,
            title,
            body,
            source_path: rel,
            metadata: BTreeMap::new(),
        });
    }
    Ok(())
}

fn rel_within_kind(rel: &str) -> &str {
    rel.split_once('/').map(|(_, rest)| rest).unwrap_or(rel)
}

fn markdown_title(body: &str) -> Option<String> {
    body.lines()
        .map(str::trim)
        .find(|l| l.starts_with('#'))
        .map(|l| l.trim_start_matches('#').trim().to_string())
        .filter(|t| !t.is_empty())
}

/// CRLF/CR to LF, trailing whitespace trimmed from the document.
fn normalize_text(text: &str) -> String {
    let unified = text.replace("\r\n", "\n").replace('\r', "\n");
    let trimmed = unified.trim_start_matches('\u{feff}');
    trimmed.trim_end().to_string()
}

fn load_records(root: &Path, kind: CorpusKind, out: &mut LoadedCorpus) -> Result<(), CorpusError> {
    let path = root.join(kind.dir_name()).join(RECORDS_FILE);
    if !path.is_file() {
        return Ok(());
    }
    let rel = relative(root, &path);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(&path)
        .map_err(|e| CorpusError::Io {
            path: path.clone(),
            source: io::Error::other(e),
        })?;

    let expected = kind.header().expect("tabular kind");
    match reader.headers() {
        Ok(h) => {
            let got: Vec<&str> = h.iter().map(str::trim).collect();
            if got != expected {
                out.skipped.push(
                    rel.clone(),
                    None,
                    format!("header {:?} does not match declared {:?}", got, expected),
                );
                return Ok(());
            }
        }
        Err(e) => {
            out.skipped.push(rel.clone(), None, format!("unreadable header: {e}"));
            return Ok(());
        }
    }

    for (row, result) in reader.records().enumerate() {
        let record = match result {
            Ok(r) => r,
            Err(e) => {
                out.skipped.push(rel.clone(), Some(row), format!("csv error: {e}"));
                continue;
            }
        };
        let raw = RawRecord {
            fields: record.iter().map(str::to_string).collect(),
            source_path: rel.clone(),
            row,
        };
        match normalize_record(&raw, kind) {
            Ok(doc) => out.documents.push(doc),
            Err(CorpusError::MalformedRecord { reason, .. }) => out.skipped.push(rel.clone(), Some(row), reason),
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

/// Maps a two-column record onto a document.
///
/// `code` rows are `(task, solution)`; `payload` rows are
/// `(exploit, vulnerability)`. The title is the descriptive column, the body
/// the executable one.
pub fn normalize_record(raw: &RawRecord, kind: CorpusKind) -> Result<SourceDocument, CorpusError> {
    let malformed = |reason: &str| CorpusError::MalformedRecord {
        source_path: raw.source_path.clone(),
        row: raw.row,
        reason: reason.to_string(),
    };
    let [first, second] = match raw.fields.as_slice() {
        [a, b] => [a, b],
        fields => return Err(malformed(&format!("expected 2 fields, found {}", fields.len()))),
    };
    let (title, body) = match kind {
        CorpusKind::Code => (first, second),
        CorpusKind::Payload => (second, first),
        CorpusKind::Writeup => return Err(malformed("writeups are not tabular")),
    };
    let title = title.trim().to_string();
    let body = normalize_text(body);
    if title.is_empty() {
        return Err(malformed("missing title field"));
    }
    if body.is_empty() {
        return Err(malformed(match kind {
            CorpusKind::Code => "missing solution field",
            _ => "missing exploit field",
        }));
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("row".to_string(), raw.row.to_string());
    Ok(SourceDocument {
        id: format!("{}/{}#{}", kind.as_str(), rel_within_kind(&raw.source_path), raw.row),
        kind,
        title,
        body,
        source_path: raw.source_path.clone(),
        metadata,
    })
}

/// Splits a document body into overlapping character windows.
///
/// Consecutive chunks satisfy `next.start == prev.end - overlap`, and every
/// chunk but the last spans exactly `chunk_size` characters.
pub fn chunk_document(doc: &SourceDocument, chunk_size: usize, overlap: usize) -> Result<Vec<Chunk>, CorpusError> {
    if chunk_size <= overlap {
        return Err(CorpusError::InvalidChunkParams { chunk_size, overlap });
    }
    let body = doc.body.as_str();
    // byte offset of every char boundary, plus the end
    let mut bounds: Vec<usize> = body.char_indices().map(|(i, _)| i).collect();
    bounds.push(body.len());
    let len = bounds.len() - 1;

    let mut chunks = Vec::new();
    let mut start = 0usize;
    while start < len {
        let end = (start + chunk_size).min(len);
        chunks.push(Chunk {
            doc_id: doc.id.clone(),
            seq: chunks.len(),
            start,
            end,
            text: body[bounds[start]..bounds[end]].to_string(),
        });
        if end == len {
            break;
        }
        start = end - overlap;
    }
    Ok(chunks)
}

pub fn chunk_all(docs: &[SourceDocument], chunk_size: usize, overlap: usize) -> Result<Vec<Chunk>, CorpusError> {
    let mut out = Vec::new();
    for doc in docs {
        out.extend(chunk_document(doc, chunk_size, overlap)?);
    }
    Ok(out)
}

/// Counts documents by kind.
pub fn corpus_stats(name: &str, root: &Path, docs: &[SourceDocument]) -> CorpusManifest {
    let mut counts = BTreeMap::new();
    for doc in docs {
        *counts.entry(doc.kind).or_insert(0usize) += 1;
    }
    let kind = match counts.keys().collect::<Vec<_>>().as_slice() {
        [only] => Some(**only),
        _ => None,
    };
    CorpusManifest {
        name: name.to_string(),
        kind,
        document_count: docs.len(),
        counts,
        root: root.to_path_buf(),
    }
}
