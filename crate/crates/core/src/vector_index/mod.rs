//! Exact cosine-similarity index over chunk embeddings.
//!
//! Search is a flat scan. Hits are ordered by descending score, ties broken by
//! ascending `(doc_id, seq)`, which makes the ordering a strict total order.
//!
//! The on-disk form is line-delimited JSON: one header line carrying format
//! version, dimensionality, embedder tag and row count, then one line per row.

mod embedder;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embedder::{tokenize, EmbedError, Embedder, EmbeddingVector, HashEmbedder, DEFAULT_HASH_DIMS};

use crate::corpus::{Chunk, ChunkRef};

const FORMAT_NAME: &str = "kbagent-vector-index";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("invalid vector: {0}")]
    InvalidVector(String),
    #[error("dimension mismatch: index has {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedder mismatch: index built with `{expected}`, opened with `{found}`")]
    EmbedderMismatch { expected: String, found: String },
    #[error("embedding failed for {chunk}: {source}")]
    Embed {
        chunk: ChunkRef,
        #[source]
        source: Box<EmbedError>,
    },
    #[error("cannot access index file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt index file {path} at line {line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub chunk: ChunkRef,
    pub score: f64,
}

/// Strict total order used for every ranked list of hits.
pub fn hit_order(a: &SearchHit, b: &SearchHit) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.chunk.cmp(&b.chunk))
}

#[derive(Debug, Clone, PartialEq)]
struct Row {
    vector: Vec<f64>,
    text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dims: usize,
    embedder_tag: String,
    rows: BTreeMap<ChunkRef, Row>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dims: usize,
    embedder: String,
    rows: usize,
}

#[derive(Serialize, Deserialize)]
struct RowRecord {
    doc_id: String,
    seq: usize,
    text: String,
    vector: Vec<f64>,
}

impl VectorIndex {
    pub fn new(dims: usize, embedder_tag: impl Into<String>) -> Self {
        Self {
            dims,
            embedder_tag: embedder_tag.into(),
            rows: BTreeMap::new(),
        }
    }

    pub fn for_embedder(embedder: &dyn Embedder) -> Self {
        Self::new(embedder.dims(), embedder.tag())
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn embedder_tag(&self) -> &str {
        &self.embedder_tag
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn text(&self, chunk: &ChunkRef) -> Option<&str> {
        self.rows.get(chunk).map(|r| r.text.as_str())
    }

    pub fn contains(&self, chunk: &ChunkRef) -> bool {
        self.rows.contains_key(chunk)
    }

    pub fn chunk_refs(&self) -> impl Iterator<Item = &ChunkRef> {
        self.rows.keys()
    }

    pub fn vector(&self, chunk: &ChunkRef) -> Option<&[f64]> {
        self.rows.get(chunk).map(|r| r.vector.as_slice())
    }

    fn check_embedder(&self, embedder: &dyn Embedder) -> Result<(), IndexError> {
        if embedder.dims() != self.dims {
            return Err(IndexError::DimensionMismatch {
                expected: self.dims,
                found: embedder.dims(),
            });
        }
        if embedder.tag() != self.embedder_tag {
            return Err(IndexError::EmbedderMismatch {
                expected: self.embedder_tag.clone(),
                found: embedder.tag(),
            });
        }
        Ok(())
    }

    /// Embeds and stores each chunk; a chunk already present is replaced.
    pub fn upsert_chunks(&mut self, chunks: &[Chunk], embedder: &dyn Embedder) -> Result<usize, IndexError> {
        self.check_embedder(embedder)?;
        let mut staged = Vec::with_capacity(chunks.len());
        for chunk in chunks {
            let vector = embedder.embed(&chunk.text).map_err(|e| IndexError::Embed {
                chunk: chunk.chunk_ref(),
                source: Box::new(e),
            })?;
            staged.push((chunk.chunk_ref(), chunk.text.clone(), vector));
        }
        for (chunk, text, vector) in staged {
            self.upsert_vector(chunk, text, &vector)?;
        }
        Ok(chunks.len())
    }

    pub fn upsert_vector(&mut self, chunk: ChunkRef, text: String, vector: &EmbeddingVector) -> Result<(), IndexError> {
        if vector.dims() != self.dims {
            return Err(IndexError::DimensionMismatch {
                expected: self.dims,
                found: vector.dims(),
            });
        }
        self.rows.insert(
            chunk,
            Row {
                vector: vector.values().to_vec(),
                text,
            },
        );
        Ok(())
    }

    pub fn search_top_k(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 || self.rows.is_empty() {
            return Ok(Vec::new());
        }
        if query.dims() != self.dims {
            return Err(IndexError::DimensionMismatch {
                expected: self.dims,
                found: query.dims(),
            });
        }
        let mut hits: Vec<SearchHit> = self
            .rows
            .iter()
            .map(|(chunk, row)| SearchHit {
                chunk: chunk.clone(),
                score: embedder::dot(query.values(), &row.vector),
            })
            .collect();
        if k < hits.len() {
            hits.select_nth_unstable_by(k - 1, hit_order);
            hits.truncate(k);
        }
        hits.sort_by(hit_order);
        Ok(hits)
    }

    pub fn persist(&self, path: &Path) -> Result<(), IndexError> {
        let io_err = |source| IndexError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
        let header = Header {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            dims: self.dims,
            embedder: self.embedder_tag.clone(),
            rows: self.rows.len(),
        };
        let to_io = |e: serde_json::Error| io_err(io::Error::other(e));
        serde_json::to_writer(&mut out, &header).map_err(to_io)?;
        out.write_all(b"\n").map_err(io_err)?;
        for (chunk, row) in &self.rows {
            let record = RowRecord {
                doc_id: chunk.doc_id.clone(),
                seq: chunk.seq,
                text: row.text.clone(),
                vector: row.vector.clone(),
            };
            serde_json::to_writer(&mut out, &record).map_err(to_io)?;
            out.write_all(b"\n").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }

    pub fn open(path: &Path) -> Result<Self, IndexError> {
        let corrupt = |line: usize, reason: String| IndexError::Corrupt {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let file = File::open(path).map_err(|source| IndexError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut lines = BufReader::new(file).lines();
        let first = lines
            .next()
            .ok_or_else(|| corrupt(1, "missing header".into()))?
            .map_err(|e| corrupt(1, e.to_string()))?;
        let header: Header = serde_json::from_str(&first).map_err(|e| corrupt(1, format!("bad header: {e}")))?;
        if header.format != FORMAT_NAME {
            return Err(corrupt(1, format!("unexpected format `{}`", header.format)));
        }
        if header.version != FORMAT_VERSION {
            return Err(corrupt(1, format!("unsupported version {}", header.version)));
        }
        let mut index = VectorIndex::new(header.dims, header.embedder);
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line.map_err(|e| corrupt(lineno, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: RowRecord = serde_json::from_str(&line).map_err(|e| corrupt(lineno, e.to_string()))?;
            if row.vector.len() != index.dims {
                return Err(corrupt(
                    lineno,
                    format!("row has {} dims, header says {}", row.vector.len(), index.dims),
                ));
            }
            if row.vector.iter().any(|v| !v.is_finite()) {
                return Err(corrupt(lineno, "non-finite vector component".into()));
            }
            index.rows.insert(
                ChunkRef::new(row.doc_id, row.seq),
                Row {
                    vector: row.vector,
                    text: row.text,
                },
            );
        }
        if index.rows.len() != header.rows {
            return Err(corrupt(
                header.rows + 1,
                format!("expected {} rows, found {} (truncated?)", header.rows, index.rows.len()),
            ));
        }
        Ok(index)
    }

    /// Opens and verifies that `embedder` matches the one the index was built with.
    pub fn open_for(path: &Path, embedder: &dyn Embedder) -> Result<Self, IndexError> {
        let index = Self::open(path)?;
        index.check_embedder(embedder)?;
        Ok(index)
    }
}
