//! Entity–relation graph built from model-extracted triplets.
//!
//! Edges carry the chunk they were extracted from, so graph hits can always be
//! traced back to corpus text. Matching is hop-bounded BFS from the entities
//! named in a query's triplet patterns.

mod extract;
mod hybrid;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ChunkRef;

pub use extract::{
    build_graph_from_chunks, extract_triplets, parse_pattern_lines, parse_triplet_lines, query_to_triplets, Extraction,
    PatternExtraction, QUERY_TRIPLET_ROLE, TRIPLET_ROLE,
};
pub use hybrid::{hybrid_retrieve, render_graph_unit, HybridParams};

pub const DEFAULT_HOP_DEPTH: usize = 1;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cannot access graph file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt graph file {path} at line {line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
}

/// Lowercases, trims and collapses inner whitespace runs to one space.
pub fn normalize_entity(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub provenance: ChunkRef,
}

impl Triplet {
    /// Normalizes all three parts; `None` if any is empty afterwards.
    pub fn new(subject: &str, relation: &str, object: &str, provenance: ChunkRef) -> Option<Self> {
        let (subject, relation, object) = (normalize_entity(subject), normalize_entity(relation), normalize_entity(object));
        if subject.is_empty() || relation.is_empty() || object.is_empty() {
            return None;
        }
        Some(Self {
            subject,
            relation,
            object,
            provenance,
        })
    }

    /// `subject —relation→ object`
    pub fn render(&self) -> String {
        format!("{} \u{2014}{}\u{2192} {}", self.subject, self.relation, self.object)
    }
}

/// A query-side triplet; `None` fields are wildcards.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TripletPattern {
    pub subject: Option<String>,
    pub relation: Option<String>,
    pub object: Option<String>,
}

impl TripletPattern {
    pub fn matches(&self, t: &Triplet) -> bool {
        let ok = |field: &Option<String>, value: &str| field.as_deref().is_none_or(|f| f == value);
        ok(&self.subject, &t.subject) && ok(&self.relation, &t.relation) && ok(&self.object, &t.object)
    }

    /// Entities named by the pattern (subject and object positions).
    pub fn entities(&self) -> impl Iterator<Item = &str> {
        self.subject.iter().chain(self.object.iter()).map(String::as_str)
    }
}

impl fmt::Display for TripletPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let part = |p: &Option<String>| p.clone().unwrap_or_else(|| "*".into());
        write!(f, "{} | {} | {}", part(&self.subject), part(&self.relation), part(&self.object))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    nodes: BTreeSet<String>,
    edges: BTreeSet<Triplet>,
}

pub fn build_graph(triplets: impl IntoIterator<Item = Triplet>) -> KnowledgeGraph {
    let mut g = KnowledgeGraph::default();
    for t in triplets {
        g.insert(t);
    }
    g
}

impl KnowledgeGraph {
    pub fn insert(&mut self, t: Triplet) -> bool {
        self.nodes.insert(t.subject.clone());
        self.nodes.insert(t.object.clone());
        self.edges.insert(t)
    }

    pub fn nodes(&self) -> &BTreeSet<String> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<Triplet> {
        &self.edges
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn contains_node(&self, entity: &str) -> bool {
        self.nodes.contains(entity)
    }

    /// Undirected node distances from `seeds`, for nodes within `limit` hops.
    fn distances(&self, seeds: &BTreeSet<String>, limit: usize) -> BTreeMap<&str, usize> {
        let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for e in &self.edges {
            adj.entry(&e.subject).or_default().push(&e.object);
            adj.entry(&e.object).or_default().push(&e.subject);
        }
        let mut dist: BTreeMap<&str, usize> = BTreeMap::new();
        let mut queue: VecDeque<&str> = VecDeque::new();
        for s in seeds {
            if let Some(node) = self.nodes.get(s.as_str()) {
                dist.insert(node.as_str(), 0);
                queue.push_back(node);
            }
        }
        while let Some(n) = queue.pop_front() {
            let d = dist[n];
            if d >= limit {
                continue;
            }
            for &m in adj.get(n).map(Vec::as_slice).unwrap_or(&[]) {
                if !dist.contains_key(m) {
                    dist.insert(m, d + 1);
                    queue.push_back(m);
                }
            }
        }
        dist
    }

    pub fn export(&self, path: &Path) -> Result<(), GraphError> {
        let io_err = |source| GraphError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err)?;
        }
        let mut out = BufWriter::new(fs::File::create(path).map_err(io_err)?);
        for e in &self.edges {
            writeln!(out, "{}\t{}\t{}\t{}", e.subject, e.relation, e.object, e.provenance).map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }

    pub fn import(path: &Path) -> Result<Self, GraphError> {
        let io_err = |source| GraphError::Io {
            path: path.to_path_buf(),
            source,
        };
        let reader = BufReader::new(fs::File::open(path).map_err(io_err)?);
        let mut g = KnowledgeGraph::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io_err)?;
            if line.is_empty() {
                continue;
            }
            let corrupt = |reason: String| GraphError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                reason,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [s, r, o, p] = fields[..] else {
                return Err(corrupt(format!("expected 4 tab-separated fields, found {}", fields.len())));
            };
            let provenance: ChunkRef = p.parse().map_err(corrupt)?;
            let t = Triplet::new(s, r, o, provenance).ok_or_else(|| corrupt("empty triplet field".into()))?;
            g.insert(t);
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subgraph {
    pub seed_entities: BTreeSet<String>,
    pub edges: BTreeSet<Triplet>,
    pub hop_depth: usize,
}

impl Subgraph {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Edges grouped by the chunk they came from.
    pub fn by_provenance(&self) -> BTreeMap<&ChunkRef, Vec<&Triplet>> {
        let mut out: BTreeMap<&ChunkRef, Vec<&Triplet>> = BTreeMap::new();
        for e in &self.edges {
            out.entry(&e.provenance).or_default().push(e);
        }
        out
    }
}

/// Seeds are the pattern entities present in the graph. The result holds every
/// edge satisfying some pattern's non-wildcard fields, plus every edge with an
/// endpoint fewer than `hop_depth` hops from a seed. With `hop_depth = 1` that
/// is all edges touching a seed.
pub fn match_subgraph(graph: &KnowledgeGraph, patterns: &[TripletPattern], hop_depth: usize) -> Subgraph {
    let seeds: BTreeSet<String> = patterns
        .iter()
        .flat_map(TripletPattern::entities)
        .filter(|e| graph.contains_node(e))
        .map(str::to_string)
        .collect();
    if seeds.is_empty() {
        return Subgraph {
            hop_depth,
            ..Subgraph::default()
        };
    }
    let anchored: Vec<&TripletPattern> = patterns.iter().filter(|p| p.entities().next().is_some()).collect();
    let dist = graph.distances(&seeds, hop_depth);
    let near = |n: &str| dist.get(n).is_some_and(|&d| d < hop_depth);
    let edges = graph
        .edges
        .iter()
        .filter(|e| anchored.iter().any(|p| p.matches(e)) || near(&e.subject) || near(&e.object))
        .cloned()
        .collect();
    Subgraph {
        seed_entities: seeds,
        edges,
        hop_depth,
    }
}
