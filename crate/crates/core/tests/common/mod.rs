#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use kbagent::clock::LogicalClock;
use kbagent::corpus::{chunk_all, load_all, Chunk, DEFAULT_CHUNK_OVERLAP, DEFAULT_CHUNK_SIZE};
use kbagent::llm_gateway::{Gateway, PriceTable, RetryPolicy, Script, ScriptedBackend};
use kbagent::retrieval::{RetrievalConfig, RetrievalEngine, Stores};
use kbagent::vector_index::{HashEmbedder, VectorIndex};

pub const MODEL: &str = "test-model";

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn golden(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Scripted gateway with free calls and no retry backoff.
pub fn gateway(script: Script) -> Gateway {
    priced_gateway(script, PriceTable::new().with(MODEL, 0.0, 0.0), 3.0)
}

pub fn priced_gateway(script: Script, prices: PriceTable, budget: f64) -> Gateway {
    Gateway::new(Arc::new(ScriptedBackend::new(script)), MODEL, prices, budget).with_retry(RetryPolicy::no_backoff())
}

pub fn sample_chunks() -> Vec<Chunk> {
    let loaded = load_all(&fixtures().join("sample_corpus")).expect("sample corpus loads");
    chunk_all(&loaded.documents, DEFAULT_CHUNK_SIZE, DEFAULT_CHUNK_OVERLAP).expect("sample corpus chunks")
}

/// Vector-only stores over the sample corpus with the default hash embedder.
pub fn sample_stores() -> Arc<Stores> {
    let embedder = Arc::new(HashEmbedder::default());
    let mut index = VectorIndex::for_embedder(embedder.as_ref());
    index.upsert_chunks(&sample_chunks(), embedder.as_ref()).expect("index builds");
    Arc::new(Stores::vector_only(index, embedder))
}

/// Stores holding nothing: retrieval returns no units.
pub fn empty_stores() -> Arc<Stores> {
    let embedder = Arc::new(HashEmbedder::default());
    let index = VectorIndex::for_embedder(embedder.as_ref());
    Arc::new(Stores::vector_only(index, embedder))
}

pub fn engine(cfg: RetrievalConfig, stores: Arc<Stores>) -> RetrievalEngine {
    RetrievalEngine::new(cfg, stores).with_clock(Arc::new(LogicalClock::new()))
}
