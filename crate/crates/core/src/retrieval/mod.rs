//! Self-grading retrieval loop.
//!
//! [`RetrievalEngine::run`] retrieves context for a query, grades it for
//! relevance, generates a hint, grades the hint for groundedness and for
//! whether it answers the query, and rewrites the query when a gate fails.
//! Every step is recorded in a [`RetrievalTrace`].

mod decompose;
mod engine;
mod grade;
mod strategies;
mod trace;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ChunkRef;
use crate::knowledge_graph::{hybrid_retrieve, HybridParams, KnowledgeGraph, Triplet, DEFAULT_HOP_DEPTH};
use crate::llm_gateway::{Gateway, GatewayError};
use crate::vector_index::{EmbedError, Embedder, IndexError, SearchHit, VectorIndex};

pub use decompose::{decompose_context, normalize_keywords, parse_decomposition, DecompositionResult, DECOMPOSER_ROLE};
pub use engine::{KnowledgeHint, RetrievalEngine, RetrievalOutcome};
pub use grade::{
    binary_parse, generate_hint, grade_hallucination, grade_relevance, grade_solved, rewrite_query, GradeDecision,
    GradeKind, Graded, GENERATOR_ROLE, HALLUCINATION_ROLE, RELEVANCE_ROLE, REWRITER_ROLE, SOLVED_ROLE,
};
pub use strategies::{
    decompose_question, multi_query_retrieve, rrf_fuse, rrf_scores, step_back_query, SubAnswer, MULTI_QUERY_ROLE,
    QUESTION_DECOMPOSER_ROLE, STEP_BACK_ROLE,
};
pub use trace::{
    payload_digest, read_traces_jsonl, validate_tokens, validate_trace, write_traces_jsonl, EventKind, RetrievalTrace,
    TraceEvent, TraceGrammarError,
};

pub const DEFAULT_K: usize = 4;
pub const DEFAULT_MAX_DEPTH: usize = 5;
pub const DEFAULT_MULTI_QUERY_N: usize = 5;
pub const DEFAULT_K_RRF: usize = 60;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitSource {
    Graph,
    Vector,
}

/// Identity of a retrieved unit, used for deduplication and tie-breaking.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UnitKey {
    pub source: UnitSource,
    pub chunk: ChunkRef,
}

impl fmt::Display for UnitKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let src = match self.source {
            UnitSource::Graph => "graph",
            UnitSource::Vector => "vector",
        };
        write!(f, "{src}:{}", self.chunk)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedUnit {
    pub key: UnitKey,
    pub text: String,
    /// Similarity (vector hits) or fused score; graph units carry none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<Triplet>,
}

impl RetrievedUnit {
    pub fn from_hit(hit: &SearchHit, index: &VectorIndex) -> Self {
        Self {
            key: UnitKey {
                source: UnitSource::Vector,
                chunk: hit.chunk.clone(),
            },
            text: index.text(&hit.chunk).unwrap_or_default().to_string(),
            score: Some(hit.score),
            edges: Vec::new(),
        }
    }
}

/// Units in order, each under a `[source:doc@seq]` label.
pub fn render_context(units: &[RetrievedUnit]) -> String {
    units
        .iter()
        .map(|u| format!("[{}]\n{}", u.key, u.text))
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    #[default]
    Classic,
    #[serde(alias = "graph")]
    GraphHybrid,
}

/// Where the loop goes after a generation fails the groundedness check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HallucinationRetry {
    /// Generate again from the same query and context.
    #[default]
    Regenerate,
    /// Start the next pass with a fresh retrieval.
    Reretrieve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub mode: RetrievalMode,
    pub k: usize,
    pub max_depth: usize,
    /// Total loop passes allowed; `None` means three times `max_depth`.
    pub iteration_cap: Option<usize>,
    pub hallucination_retry: HallucinationRetry,
    pub hop_depth: usize,
    pub multi_query: bool,
    pub multi_query_n: usize,
    pub rag_fusion: bool,
    pub k_rrf: usize,
    pub question_decomposition: bool,
    pub step_back: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            mode: RetrievalMode::Classic,
            k: DEFAULT_K,
            max_depth: DEFAULT_MAX_DEPTH,
            iteration_cap: None,
            hallucination_retry: HallucinationRetry::Regenerate,
            hop_depth: DEFAULT_HOP_DEPTH,
            multi_query: false,
            multi_query_n: DEFAULT_MULTI_QUERY_N,
            rag_fusion: false,
            k_rrf: DEFAULT_K_RRF,
            question_decomposition: false,
            step_back: false,
        }
    }
}

impl RetrievalConfig {
    pub fn iteration_cap(&self) -> usize {
        self.iteration_cap.unwrap_or(3 * self.max_depth)
    }
}

/// Read-only knowledge stores shared by all retrieval runs.
pub struct Stores {
    pub index: VectorIndex,
    pub embedder: Arc<dyn Embedder>,
    pub graph: KnowledgeGraph,
}

impl fmt::Debug for Stores {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stores")
            .field("chunks", &self.index.len())
            .field("embedder", &self.embedder.tag())
            .field("edges", &self.graph.edges().len())
            .finish()
    }
}

impl Stores {
    pub fn new(index: VectorIndex, embedder: Arc<dyn Embedder>, graph: KnowledgeGraph) -> Self {
        Self { index, embedder, graph }
    }

    pub fn vector_only(index: VectorIndex, embedder: Arc<dyn Embedder>) -> Self {
        Self::new(index, embedder, KnowledgeGraph::default())
    }
}

/// One retrieval for `q`: vector top-k in classic mode, graph units plus
/// vector hits in hybrid mode.
pub fn retrieve(q: &str, cfg: &RetrievalConfig, stores: &Stores, gateway: &Gateway) -> Result<Vec<RetrievedUnit>, RetrievalError> {
    match cfg.mode {
        RetrievalMode::Classic => {
            if cfg.k == 0 {
                return Ok(Vec::new());
            }
            let query = stores.embedder.embed(q)?;
            Ok(stores
                .index
                .search_top_k(&query, cfg.k)?
                .iter()
                .map(|h| RetrievedUnit::from_hit(h, &stores.index))
                .collect())
        }
        RetrievalMode::GraphHybrid => hybrid_retrieve(
            q,
            &stores.graph,
            &stores.index,
            stores.embedder.as_ref(),
            HybridParams {
                k: cfg.k,
                hop_depth: cfg.hop_depth,
            },
            gateway,
        ),
    }
}
