//! `kbagent` command line: corpus ingestion, index and graph builds, one-shot
//! queries, single episodes, benchmarks and reports.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use kbagent::harness::{
    self, compute_metrics, emit_report, load_manifest, load_traces, read_records, run_benchmark, transition_stats,
    BackendKind, BenchOptions, ChallengeEntry, ReportFormat, Settings, RECORDS_FILE,
};
use kbagent::retrieval::{write_traces_jsonl, RetrievalEngine, RetrievalMode};

#[derive(Debug, Parser)]
#[command(name = "kbagent", version, about = "Knowledge-hinted CTF agent", arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Classic,
    Graph,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    Live,
    Scripted,
    Replay,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Table,
    Json,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML settings file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Retrieval mode.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, global = true)]
    multi_query: bool,
    #[arg(long, global = true)]
    rag_fusion: bool,
    #[arg(long, global = true)]
    step_back: bool,
    #[arg(long, global = true)]
    question_decomposition: bool,
    /// Maximum rewrite depth of the retrieval loop.
    #[arg(long, global = true)]
    max_depth: Option<usize>,
    /// Dollar budget per episode.
    #[arg(long, global = true)]
    budget: Option<f64>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long, global = true)]
    model: Option<String>,
    /// Script file or directory for the scripted backend.
    #[arg(long, global = true)]
    script: Option<PathBuf>,
    /// Cassette file or directory for the replay backend.
    #[arg(long, global = true)]
    cassette: Option<PathBuf>,
    /// Directory receiving recorded cassettes.
    #[arg(long, global = true)]
    record: Option<PathBuf>,
    /// Directory holding chunks, index and graph.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Run agents without knowledge hints.
    #[arg(long, global = true)]
    no_knowledge: bool,
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and chunk a corpus root into the data directory.
    Ingest { root: PathBuf },
    /// Embed ingested chunks into the vector index.
    Index,
    /// Knowledge graph operations.
    Graph {
        #[command(subcommand)]
        action: GraphAction,
    },
    /// Run the retrieval loop once and print the hint and its trace.
    Query { text: String },
    /// Play one challenge.
    Solve {
        challenge: PathBuf,
        /// Directory for the transcript and traces.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Play every challenge of a benchmark manifest.
    Bench {
        manifest: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        /// Keep records already present in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Summarize the records of a benchmark output directory.
    Report {
        #[arg(default_value = "runs")]
        dir: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: FormatArg,
    },
}

#[derive(Debug, Subcommand)]
enum GraphAction {
    /// Extract triplets from the ingested chunks.
    Build,
}

fn settings(g: &Global) -> Result<Settings> {
    let mut s = match &g.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => Settings::default(),
    };
    if let Some(m) = g.mode {
        s.retrieval.mode = match m {
            ModeArg::Classic => RetrievalMode::Classic,
            ModeArg::Graph => RetrievalMode::GraphHybrid,
        };
    }
    s.retrieval.multi_query |= g.multi_query;
    s.retrieval.rag_fusion |= g.rag_fusion;
    s.retrieval.step_back |= g.step_back;
    s.retrieval.question_decomposition |= g.question_decomposition;
    if let Some(d) = g.max_depth {
        s.retrieval.max_depth = d;
    }
    if let Some(b) = g.budget {
        s.budget = b;
    }
    if let Some(b) = g.backend {
        s.backend = match b {
            BackendArg::Live => BackendKind::Live,
            BackendArg::Scripted => BackendKind::Scripted,
            BackendArg::Replay => BackendKind::Replay,
        };
    }
    if let Some(m) = &g.model {
        s.model = m.clone();
    }
    if g.script.is_some() {
        s.script = g.script.clone();
    }
    if g.cassette.is_some() {
        s.cassette = g.cassette.clone();
    }
    if g.record.is_some() {
        s.record = g.record.clone();
    }
    if let Some(d) = &g.data_dir {
        s.data_dir = d.clone();
    }
    if g.no_knowledge {
        s.agent.knowledge = false;
    }
    Ok(s)
}

fn write_report(dir: &Path, report: &harness::BenchmarkReport) -> Result<()> {
    for (name, format) in [("report.txt", ReportFormat::TableText), ("report.json", ReportFormat::Structured)] {
        let p = dir.join(name);
        fs::write(&p, emit_report(report, format)).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let s = settings(&cli.global)?;
    let mut out = io::stdout().lock();
    match cli.command {
        Command::Ingest { root } => {
            let (manifest, chunks, skipped) = harness::ingest(&root, &s)?;
            writeln!(out, "ingested {} documents into {} chunks", manifest.document_count, chunks)?;
            for (kind, n) in &manifest.counts {
                writeln!(out, "  {}: {n}", kind.as_str())?;
            }
            if !skipped.is_empty() {
                writeln!(out, "skipped {} malformed records", skipped.len())?;
            }
        }
        Command::Index => {
            let n = harness::build_index(&s)?;
            writeln!(out, "indexed {n} chunks")?;
        }
        Command::Graph { action: GraphAction::Build } => {
            let gw = s.gateway(s.backend(None)?);
            let (edges, skipped) = harness::build_graph_store(&s, &gw)?;
            writeln!(out, "graph has {edges} edges ({skipped} malformed lines skipped), cost ${:.4}", gw.accrued())?;
        }
        Command::Query { text } => {
            let stores = harness::load_stores(&s)?.context("no index found; run `kbagent ingest` and `kbagent index` first")?;
            let gw = s.gateway(s.backend(None)?);
            let engine = RetrievalEngine::new(s.retrieval.clone(), stores);
            let (hint, traces) = engine.hint_for("q", &text, &gw);
            match hint {
                Some(h) => writeln!(out, "hint:\n{}\n", h.text)?,
                None => writeln!(out, "no hint\n")?,
            }
            writeln!(out, "trace:")?;
            write_traces_jsonl(&traces, &mut out)?;
        }
        Command::Solve { challenge, out: dir } => {
            let entry = ChallengeEntry::load(&challenge)?;
            let stores = harness::load_stores(&s)?;
            let r = harness::solve(&entry, &s, stores).map_err(anyhow::Error::msg)?;
            if let Some(dir) = dir {
                fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                let stem = harness::file_stem(entry.id());
                r.transcript.write(&dir.join(format!("{stem}.transcript.jsonl")))?;
                let f = fs::File::create(dir.join(format!("{stem}.traces.jsonl")))?;
                write_traces_jsonl(&r.traces, io::BufWriter::new(f))?;
            }
            writeln!(
                out,
                "{}: {} after {} rounds, cost ${:.4}, {} model calls",
                entry.id(),
                r.exit,
                r.rounds,
                r.cost,
                r.model_calls
            )?;
            if let Some(e) = &r.error {
                writeln!(out, "error: {e}")?;
            }
        }
        Command::Bench {
            manifest,
            out: dir,
            workers,
            resume,
        } => {
            let entries = load_manifest(&manifest)?;
            let stores = harness::load_stores(&s)?;
            let opts = BenchOptions {
                workers: workers.unwrap_or(s.workers),
                out_dir: dir.clone(),
                resume,
            };
            let records = run_benchmark(&entries, &opts, |e| harness::solve(e, &s, stores.clone()))?;
            let mut report = compute_metrics(&records);
            report.transitions = Some(transition_stats(&load_traces(&dir)?));
            write_report(&dir, &report)?;
            write!(out, "{}", emit_report(&report, ReportFormat::TableText))?;
        }
        Command::Report { dir, format } => {
            let path = dir.join(RECORDS_FILE);
            if !path.exists() {
                bail!("no records at {}", path.display());
            }
            let mut report = compute_metrics(&read_records(&path)?);
            report.transitions = Some(transition_stats(&load_traces(&dir)?));
            write_report(&dir, &report)?;
            let format = match format {
                FormatArg::Table => ReportFormat::TableText,
                FormatArg::Json => ReportFormat::Structured,
            };
            writeln!(out, "{}", emit_report(&report, format).trim_end())?;
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let default = if cli.global.verbose { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default)))
        .with_writer(io::stderr)
        .init();
    run(cli)
}
