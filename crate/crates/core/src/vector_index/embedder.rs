use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::IndexError;

pub const DEFAULT_HASH_DIMS: usize = 256;

#[derive(Debug, Error)]
pub enum EmbedError {
    /// Transport-level failure; the caller may retry.
    #[error("embedding backend unavailable: {0}")]
    Retriable(String),
    #[error("embedding backend failed: {0}")]
    Fatal(String),
    #[error(transparent)]
    Invalid(#[from] IndexError),
}

/// A unit-norm embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Normalizes `values` to unit L2 norm. Rejects non-finite or zero vectors.
    pub fn normalized(values: Vec<f64>) -> Result<Self, IndexError> {
        if values.is_empty() {
            return Err(IndexError::InvalidVector("zero dimensions".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(IndexError::InvalidVector("non-finite component".into()));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(IndexError::InvalidVector("zero norm".into()));
        }
        Ok(Self {
            values: values.into_iter().map(|v| v / norm).collect(),
        })
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.values, &other.values)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub trait Embedder: Send + Sync {
    /// Identifies model and dimensionality; persisted with every index.
    fn tag(&self) -> String;
    fn dims(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

/// Deterministic hashed bag-of-words embedder for offline use.
///
/// Each lowercase alphanumeric token adds 1.0 to bucket `fnv1a(token) % dims`;
/// each adjacent token pair adds 0.5 to its own bucket so word order carries
/// some signal. Text without tokens maps to a fixed sentinel bucket.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dims: usize,
}

impl HashEmbedder {
    pub fn new(dims: usize) -> Self {
        assert!(dims > 0, "embedding dims must be positive");
        Self { dims }
    }

    fn bucket(&self, feature: &str) -> usize {
        (fnv1a(feature.as_bytes()) % self.dims as u64) as usize
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_HASH_DIMS)
    }
}

impl Embedder for HashEmbedder {
    fn tag(&self) -> String {
        format!("hash-bow-v1:{}", self.dims)
    }

    fn dims(&self) -> usize {
        self.dims
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let tokens = tokenize(text);
        let mut values = vec![0.0; self.dims];
        if tokens.is_empty() {
            values[self.bucket("\u{0}empty")] = 1.0;
        }
        for t in &tokens {
            values[self.bucket(t)] += 1.0;
        }
        for pair in tokens.windows(2) {
            values[self.bucket(&format!("{}\u{1}{}", pair[0], pair[1]))] += 0.5;
        }
        Ok(EmbeddingVector::normalized(values)?)
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_unit_norm() {
        let e = HashEmbedder::default();
        let a = e.embed("RC4 keystream reuse").unwrap();
        let b = e.embed("RC4 keystream reuse").unwrap();
        assert_eq!(a, b);
        let norm = a.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        let empty = e.embed("").unwrap();
        assert_eq!(empty.dims(), DEFAULT_HASH_DIMS);
    }

    #[test]
    fn distinct_texts_are_not_identical() {
        let e = HashEmbedder::default();
        let a = e.embed("heap overflow in malloc").unwrap();
        let b = e.embed("format string leak").unwrap();
        assert!(a.cosine(&b) < 1.0);
        // order-only difference still separates via bigrams
        let c = e.embed("alpha beta").unwrap();
        let d = e.embed("beta alpha").unwrap();
        assert!(c.cosine(&d) < 1.0);
    }

    #[test]
    fn rejects_bad_vectors() {
        assert!(EmbeddingVector::normalized(vec![0.0, 0.0]).is_err());
        assert!(EmbeddingVector::normalized(vec![f64::NAN, 1.0]).is_err());
        assert!(EmbeddingVector::normalized(vec![]).is_err());
    }
}
