//! Wiring from a [`Settings`] value to stores, backends and episodes.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::{run_episode, AgentConfig, EpisodeContext, EpisodeResult, PassThroughPrompter};
use crate::clock::LogicalClock;
use crate::corpus::{self, Chunk, CorpusManifest, SkipReport, DEFAULT_CHUNK_OVERLAP, DEFAULT_CHUNK_SIZE};
use crate::environment::{provision, CommandAnalyzer, SandboxConfig};
use crate::knowledge_graph::{build_graph_from_chunks, KnowledgeGraph};
use crate::llm_gateway::{
    Backend, Gateway, HttpBackend, HttpEmbedder, PriceTable, RecordingBackend, ReplayBackend, Script, ScriptedBackend,
    DEFAULT_API_KEY_ENV,
};
use crate::retrieval::{RetrievalConfig, RetrievalEngine, RetrievalMode, Stores};
use crate::vector_index::{Embedder, HashEmbedder, VectorIndex, DEFAULT_HASH_DIMS};

use super::bench::{file_stem, ChallengeEntry};
use super::HarnessError;

pub const CHUNKS_FILE: &str = "chunks.jsonl";
pub const CORPUS_MANIFEST_FILE: &str = "corpus.json";
pub const INDEX_FILE: &str = "index.json";
pub const GRAPH_FILE: &str = "graph.tsv";
/// Per-challenge script file looked up next to the challenge definition.
pub const CHALLENGE_SCRIPT_FILE: &str = "script.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Live,
    Scripted,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    Hash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderSettings {
    pub kind: EmbedderKind,
    pub dims: usize,
    /// Model name for the HTTP embedder.
    pub model: String,
}

impl Default for EmbedderSettings {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Hash,
            dims: DEFAULT_HASH_DIMS,
            model: "text-embedding-3-small".into(),
        }
    }
}

/// Everything a run needs; loadable from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    pub model: String,
    /// Dollar budget per episode.
    pub budget: f64,
    pub backend: BackendKind,
    pub base_url: String,
    /// Script file, or a directory holding `<challenge>.json` scripts. When
    /// unset, each challenge's own `script.json` is used.
    pub script: Option<PathBuf>,
    /// Cassette file, or a directory holding `<challenge>.jsonl` cassettes.
    pub cassette: Option<PathBuf>,
    /// Directory receiving one cassette per episode.
    pub record: Option<PathBuf>,
    pub data_dir: PathBuf,
    pub chunk_size: usize,
    pub chunk_overlap: usize,
    pub embedder: EmbedderSettings,
    pub workers: usize,
    pub prices: PriceTable,
    pub agent: AgentConfig,
    pub retrieval: RetrievalConfig,
    pub sandbox: SandboxConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            model: "claude-3-5-sonnet-20241022".into(),
            budget: 3.0,
            backend: BackendKind::Live,
            base_url: "https://api.openai.com/v1".into(),
            script: None,
            cassette: None,
            record: None,
            data_dir: PathBuf::from("data"),
            chunk_size: DEFAULT_CHUNK_SIZE,
            chunk_overlap: DEFAULT_CHUNK_OVERLAP,
            embedder: EmbedderSettings::default(),
            workers: 1,
            prices: PriceTable::builtin(),
            agent: AgentConfig::default(),
            retrieval: RetrievalConfig::default(),
            sandbox: SandboxConfig::default(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn setup_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Setup(e.to_string())
}

impl Settings {
    pub fn embedder(&self) -> Arc<dyn Embedder> {
        match self.embedder.kind {
            EmbedderKind::Hash => Arc::new(HashEmbedder::new(self.embedder.dims)),
            EmbedderKind::Http => Arc::new(HttpEmbedder::new(
                self.base_url.clone(),
                std::env::var(DEFAULT_API_KEY_ENV).ok(),
                self.embedder.model.clone(),
                self.embedder.dims,
            )),
        }
    }

    /// A script or cassette location: a file as is, a directory resolved per challenge.
    fn per_challenge(path: &Path, id: &str, ext: &str) -> PathBuf {
        if path.is_dir() {
            path.join(format!("{}.{ext}", file_stem(id)))
        } else {
            path.to_path_buf()
        }
    }

    /// Backend for one episode. `None` selects a shared, non-challenge backend.
    pub fn backend(&self, entry: Option<&ChallengeEntry>) -> Result<Arc<dyn Backend>, HarnessError> {
        let id = entry.map(|e| e.id()).unwrap_or("session");
        Ok(match self.backend {
            BackendKind::Live => Arc::new(HttpBackend::from_env(self.base_url.clone())),
            BackendKind::Scripted => {
                let path = match (&self.script, entry) {
                    (Some(p), _) => Self::per_challenge(p, id, "json"),
                    (None, Some(e)) => e.dir().join(CHALLENGE_SCRIPT_FILE),
                    (None, None) => return Err(HarnessError::Setup("the scripted backend needs a script".into())),
                };
                Arc::new(ScriptedBackend::new(Script::load(&path).map_err(setup_err)?))
            }
            BackendKind::Replay => {
                let p = self
                    .cassette
                    .as_ref()
                    .ok_or_else(|| HarnessError::Setup("the replay backend needs a cassette".into()))?;
                Arc::new(ReplayBackend::open(&Self::per_challenge(p, id, "jsonl")).map_err(setup_err)?)
            }
        })
    }

    pub fn gateway(&self, backend: Arc<dyn Backend>) -> Gateway {
        Gateway::new(backend, self.model.clone(), self.prices.clone(), self.budget)
    }
}

/// Loads a corpus root, chunks it and writes chunks plus a manifest to the data dir.
pub fn ingest(root: &Path, settings: &Settings) -> Result<(CorpusManifest, usize, SkipReport), HarnessError> {
    let loaded = corpus::load_all(root).map_err(setup_err)?;
    let chunks = corpus::chunk_all(&loaded.documents, settings.chunk_size, settings.chunk_overlap).map_err(setup_err)?;
    let name = root.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let manifest = corpus::corpus_stats(&name, root, &loaded.documents);
    let dir = &settings.data_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_chunks(&dir.join(CHUNKS_FILE), &chunks)?;
    let mp = dir.join(CORPUS_MANIFEST_FILE);
    fs::write(&mp, serde_json::to_string_pretty(&manifest).expect("manifests serialize")).map_err(io_err(&mp))?;
    Ok((manifest, chunks.len(), loaded.skipped))
}

pub fn write_chunks(path: &Path, chunks: &[Chunk]) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for c in chunks {
        writeln!(w, "{}", serde_json::to_string(c).expect("chunks serialize")).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_chunks(path: &Path) -> Result<Vec<Chunk>, HarnessError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| HarnessError::Record {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Embeds the ingested chunks into a persisted vector index.
pub fn build_index(settings: &Settings) -> Result<usize, HarnessError> {
    let chunks = read_chunks(&settings.data_dir.join(CHUNKS_FILE))?;
    let embedder = settings.embedder();
    let mut index = VectorIndex::for_embedder(embedder.as_ref());
    index.upsert_chunks(&chunks, embedder.as_ref()).map_err(setup_err)?;
    index.persist(&settings.data_dir.join(INDEX_FILE)).map_err(setup_err)?;
    Ok(index.len())
}

/// Extracts triplets from the ingested chunks; returns (edges, skipped lines).
pub fn build_graph_store(settings: &Settings, gateway: &Gateway) -> Result<(usize, usize), HarnessError> {
    let chunks = read_chunks(&settings.data_dir.join(CHUNKS_FILE))?;
    let (graph, skipped) = build_graph_from_chunks(&chunks, gateway).map_err(setup_err)?;
    graph.export(&settings.data_dir.join(GRAPH_FILE)).map_err(setup_err)?;
    Ok((graph.edges().len(), skipped))
}

/// Opens the persisted stores, or `None` when no index has been built.
pub fn load_stores(settings: &Settings) -> Result<Option<Arc<Stores>>, HarnessError> {
    let ip = settings.data_dir.join(INDEX_FILE);
    if !ip.exists() {
        return Ok(None);
    }
    let embedder = settings.embedder();
    let index = VectorIndex::open_for(&ip, embedder.as_ref()).map_err(setup_err)?;
    let gp = settings.data_dir.join(GRAPH_FILE);
    let graph = if gp.exists() {
        KnowledgeGraph::import(&gp).map_err(setup_err)?
    } else {
        if settings.retrieval.mode == RetrievalMode::GraphHybrid {
            tracing::warn!(path = %gp.display(), "graph mode without a built graph; retrieval falls back to vector hits");
        }
        KnowledgeGraph::default()
    };
    Ok(Some(Arc::new(Stores::new(index, embedder, graph))))
}

/// Provisions, plays and tears down one challenge.
pub fn solve(entry: &ChallengeEntry, settings: &Settings, stores: Option<Arc<Stores>>) -> Result<EpisodeResult, String> {
    let backend = settings.backend(Some(entry)).map_err(|e| e.to_string())?;
    let recorder = settings.record.as_ref().map(|_| Arc::new(RecordingBackend::new(backend.clone())));
    let gateway = settings.gateway(match &recorder {
        Some(r) => r.clone(),
        None => backend,
    });
    let mut sandbox = provision(&entry.spec, &settings.sandbox).map_err(|e| e.to_string())?;
    let engine = stores.filter(|_| settings.agent.knowledge).map(|s| {
        let e = RetrievalEngine::new(settings.retrieval.clone(), s);
        // Offline backends use logical timestamps.
        match settings.backend {
            BackendKind::Live => e,
            _ => e.with_clock(Arc::new(LogicalClock::new())),
        }
    });
    let analyzer = CommandAnalyzer::default();
    let ctx = EpisodeContext {
        spec: &entry.spec,
        cfg: &settings.agent,
        gateway: &gateway,
        engine: engine.as_ref(),
        sandbox: &sandbox,
        analyzer: &analyzer,
        prompter: &PassThroughPrompter,
    };
    let result = run_episode(&ctx);
    sandbox.teardown();
    if let (Some(dir), Some(r)) = (&settings.record, &recorder) {
        let path = dir.join(format!("{}.jsonl", file_stem(entry.id())));
        r.save(&path).map_err(|e| format!("cannot write cassette {}: {e}", path.display()))?;
    }
    Ok(result)
}
