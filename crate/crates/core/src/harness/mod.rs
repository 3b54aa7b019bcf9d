//! Benchmark harness: runs episodes over a challenge set, persists one
//! record per episode and turns records into report tables.

mod bench;
mod metrics;
mod report;
mod setup;

use std::path::PathBuf;

use thiserror::Error;

use crate::challenge::ChallengeError;

pub use bench::{
    error_record, file_stem, load_manifest, load_traces, read_records, record_for, run_benchmark, BenchManifest,
    BenchOptions, ChallengeEntry, RECORDS_FILE, TRACE_DIR, TRANSCRIPT_DIR,
};
pub use metrics::{compute_metrics, transition_stats, BenchmarkReport, RunRecord, Tally, TransitionStats};
pub use report::{emit_report, fmt_dollars, fmt_pct, parse_structured, table_text, ReportFormat};
pub use setup::{
    build_graph_store, build_index, ingest, load_stores, read_chunks, solve, write_chunks, BackendKind, EmbedderKind,
    EmbedderSettings, Settings, CHALLENGE_SCRIPT_FILE, CHUNKS_FILE, CORPUS_MANIFEST_FILE, GRAPH_FILE, INDEX_FILE,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid benchmark manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error(transparent)]
    Challenge(#[from] ChallengeError),
    #[error("challenge `{0}` is listed twice")]
    DuplicateChallenge(String),
    #[error("{path}:{line}: {reason}")]
    Record { path: PathBuf, line: usize, reason: String },
    #[error("{0}")]
    Setup(String),
}
