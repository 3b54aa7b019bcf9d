use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::agents::{EpisodeResult, ExitStatus};
use crate::challenge::ChallengeSpec;
use crate::retrieval::{read_traces_jsonl, write_traces_jsonl, RetrievalTrace};

use super::metrics::RunRecord;
use super::HarnessError;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const TRANSCRIPT_DIR: &str = "transcripts";
pub const TRACE_DIR: &str = "traces";

/// Benchmark manifest: challenge definition paths, relative to the manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchManifest {
    pub challenges: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChallengeEntry {
    /// Path of the challenge definition file.
    pub path: PathBuf,
    pub spec: ChallengeSpec,
}

impl ChallengeEntry {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Ok(Self {
            path: path.to_path_buf(),
            spec: ChallengeSpec::load(path)?,
        })
    }

    pub fn id(&self) -> &str {
        self.spec.id()
    }

    pub fn dir(&self) -> &Path {
        self.path.parent().unwrap_or(Path::new("."))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads every challenge of a manifest, in manifest order.
pub fn load_manifest(path: &Path) -> Result<Vec<ChallengeEntry>, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let manifest: BenchManifest = serde_json::from_str(&text).map_err(|e| HarnessError::Manifest {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = BTreeSet::new();
    let mut entries = Vec::with_capacity(manifest.challenges.len());
    for p in manifest.challenges {
        let entry = ChallengeEntry::load(&base.join(p))?;
        if !seen.insert(entry.id().to_string()) {
            return Err(HarnessError::DuplicateChallenge(entry.id().to_string()));
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// File-name-safe form of a challenge id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

pub fn record_for(spec: &ChallengeSpec, r: &EpisodeResult) -> RunRecord {
    RunRecord {
        id: spec.id().to_string(),
        category: spec.category,
        exit: r.exit,
        solved: r.exit == ExitStatus::Solved,
        dollar_cost: r.cost,
        rounds: r.rounds,
        model_calls: r.model_calls,
        trace_ids: r.traces.iter().map(|t| t.id.clone()).collect(),
        error: r.error.clone(),
    }
}

pub fn error_record(spec: &ChallengeSpec, message: impl Into<String>) -> RunRecord {
    RunRecord {
        id: spec.id().to_string(),
        category: spec.category,
        exit: ExitStatus::Error,
        solved: false,
        dollar_cost: 0.0,
        rounds: 0,
        model_calls: 0,
        trace_ids: Vec::new(),
        error: Some(message.into()),
    }
}

/// Reads a records file. A malformed final line (an interrupted write) is
/// dropped; malformed lines elsewhere are errors.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    let f = File::open(path).map_err(io_err(path))?;
    let lines: Vec<String> = BufReader::new(f)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(io_err(path))?;
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if Some(i) == last => {
                tracing::warn!(path = %path.display(), line = i + 1, "dropping truncated final record");
            }
            Err(e) => {
                return Err(HarnessError::Record {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

/// Every trace persisted under `out_dir`, ordered by file name.
pub fn load_traces(out_dir: &Path) -> Result<Vec<RetrievalTrace>, HarnessError> {
    let dir = out_dir.join(TRACE_DIR);
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        let file = File::open(&f).map_err(io_err(&f))?;
        out.extend(read_traces_jsonl(BufReader::new(file)).map_err(io_err(&f))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub workers: usize,
    pub out_dir: PathBuf,
    /// Skip challenges that already have a record in `out_dir`.
    pub resume: bool,
}

impl BenchOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            workers: 1,
            out_dir: out_dir.into(),
            resume: false,
        }
    }
}

fn panic_message(p: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "episode panicked".to_string()
    }
}

fn persist_episode(out_dir: &Path, id: &str, r: &EpisodeResult) -> Result<(), HarnessError> {
    let stem = file_stem(id);
    let t = out_dir.join(TRANSCRIPT_DIR).join(format!("{stem}.jsonl"));
    r.transcript.write(&t).map_err(io_err(&t))?;
    let tr = out_dir.join(TRACE_DIR).join(format!("{stem}.jsonl"));
    if let Some(parent) = tr.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file = File::create(&tr).map_err(io_err(&tr))?;
    write_traces_jsonl(&r.traces, std::io::BufWriter::new(file)).map_err(io_err(&tr))
}

/// Runs `run_one` for every challenge not yet recorded, with at most
/// `workers` episodes in flight. Each record is appended to the records file
/// as soon as its episode ends; a failing or panicking episode becomes an
/// `Error` record. Returns the records in manifest order.
pub fn run_benchmark<F>(entries: &[ChallengeEntry], opts: &BenchOptions, run_one: F) -> Result<Vec<RunRecord>, HarnessError>
where
    F: Fn(&ChallengeEntry) -> Result<EpisodeResult, String> + Sync,
{
    fs::create_dir_all(&opts.out_dir).map_err(io_err(&opts.out_dir))?;
    let records_path = opts.out_dir.join(RECORDS_FILE);

    let mut done: BTreeMap<String, RunRecord> = BTreeMap::new();
    if opts.resume && records_path.exists() {
        for r in read_records(&records_path)? {
            done.insert(r.id.clone(), r);
        }
        // Rewrite the file without any dropped partial line.
        let mut f = File::create(&records_path).map_err(io_err(&records_path))?;
        for r in done.values() {
            writeln!(f, "{}", serde_json::to_string(r).expect("records serialize")).map_err(io_err(&records_path))?;
        }
    } else {
        File::create(&records_path).map_err(io_err(&records_path))?;
    }

    let pending: Vec<&ChallengeEntry> = entries.iter().filter(|e| !done.contains_key(e.id())).collect();
    tracing::info!(total = entries.len(), pending = pending.len(), "starting benchmark");

    let sink = Mutex::new(
        OpenOptions::new()
            .append(true)
            .open(&records_path)
            .map_err(io_err(&records_path))?,
    );
    let results: Mutex<Vec<RunRecord>> = Mutex::new(Vec::new());
    let failure: Mutex<Option<HarnessError>> = Mutex::new(None);
    let next = AtomicUsize::new(0);
    let workers = opts.workers.max(1).min(pending.len().max(1));

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(entry) = pending.get(i) else { break };
                if failure.lock().expect("failure poisoned").is_some() {
                    break;
                }
                let outcome = panic::catch_unwind(AssertUnwindSafe(|| run_one(entry)));
                let record = match outcome {
                    Ok(Ok(r)) => match persist_episode(&opts.out_dir, entry.id(), &r) {
                        Ok(()) => record_for(&entry.spec, &r),
                        Err(e) => {
                            *failure.lock().expect("failure poisoned") = Some(e);
                            break;
                        }
                    },
                    Ok(Err(e)) => error_record(&entry.spec, e),
                    Err(p) => error_record(&entry.spec, format!("panic: {}", panic_message(p.as_ref()))),
                };
                tracing::info!(challenge = entry.id(), exit = %record.exit, cost = record.dollar_cost, "episode finished");
                let line = serde_json::to_string(&record).expect("records serialize");
                {
                    let mut f = sink.lock().expect("sink poisoned");
                    if let Err(e) = writeln!(f, "{line}").and_then(|_| f.flush()) {
                        *failure.lock().expect("failure poisoned") = Some(io_err(&records_path)(e));
                        break;
                    }
                }
                results.lock().expect("results poisoned").push(record);
            });
        }
    });

    if let Some(e) = failure.into_inner().expect("failure poisoned") {
        return Err(e);
    }
    for r in results.into_inner().expect("results poisoned") {
        done.insert(r.id.clone(), r);
    }
    Ok(entries.iter().filter_map(|e| done.remove(e.id())).collect())
}
