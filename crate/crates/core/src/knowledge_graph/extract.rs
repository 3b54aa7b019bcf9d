use crate::corpus::{Chunk, ChunkRef};
use crate::llm_gateway::{Gateway, GatewayError};
use crate::prompts;

use super::{build_graph, normalize_entity, KnowledgeGraph, Triplet, TripletPattern};

pub const TRIPLET_ROLE: &str = "triplet_extractor";
pub const QUERY_TRIPLET_ROLE: &str = "query_triplets";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Extraction {
    pub triplets: Vec<Triplet>,
    /// Non-blank lines that did not parse as `subject | relation | object`.
    pub skipped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatternExtraction {
    pub patterns: Vec<TripletPattern>,
    pub skipped: usize,
}

fn split_line(line: &str) -> Option<[&str; 3]> {
    let line = line.trim();
    let line = line.strip_prefix("- ").unwrap_or(line);
    let parts: Vec<&str> = line.split('|').collect();
    match parts[..] {
        [s, r, o] => Some([s, r, o]),
        _ => None,
    }
}

pub fn parse_triplet_lines(output: &str, provenance: &ChunkRef) -> Extraction {
    let mut out = Extraction::default();
    for line in output.lines().filter(|l| !l.trim().is_empty()) {
        match split_line(line).and_then(|[s, r, o]| Triplet::new(s, r, o, provenance.clone())) {
            Some(t) => out.triplets.push(t),
            None => {
                tracing::warn!(line, "skipping unparseable triplet line");
                out.skipped += 1;
            }
        }
    }
    out
}

/// Like [`parse_triplet_lines`] but `*` (or an empty field) is a wildcard.
/// Patterns without any concrete field are skipped.
pub fn parse_pattern_lines(output: &str) -> PatternExtraction {
    let field = |raw: &str| {
        let n = normalize_entity(raw);
        (!n.is_empty() && n != "*").then_some(n)
    };
    let mut out = PatternExtraction::default();
    for line in output.lines().filter(|l| !l.trim().is_empty()) {
        let pattern = split_line(line).map(|[s, r, o]| TripletPattern {
            subject: field(s),
            relation: field(r),
            object: field(o),
        });
        match pattern {
            Some(p) if p.subject.is_some() || p.relation.is_some() || p.object.is_some() => out.patterns.push(p),
            _ => {
                tracing::warn!(line, "skipping unparseable triplet pattern");
                out.skipped += 1;
            }
        }
    }
    out
}

pub fn extract_triplets(chunk: &Chunk, gateway: &Gateway) -> Result<Extraction, GatewayError> {
    let output = gateway.prompt(TRIPLET_ROLE, prompts::triplet_extraction(&chunk.text))?;
    Ok(parse_triplet_lines(&output, &chunk.chunk_ref()))
}

pub fn query_to_triplets(query: &str, gateway: &Gateway) -> Result<PatternExtraction, GatewayError> {
    if query.trim().is_empty() {
        return Ok(PatternExtraction::default());
    }
    let output = gateway.prompt(QUERY_TRIPLET_ROLE, prompts::query_triplets(query))?;
    Ok(parse_pattern_lines(&output))
}

/// Extracts from every chunk in order. Returns the graph and the total number
/// of skipped lines.
pub fn build_graph_from_chunks(chunks: &[Chunk], gateway: &Gateway) -> Result<(KnowledgeGraph, usize), GatewayError> {
    let mut triplets = Vec::new();
    let mut skipped = 0;
    for chunk in chunks {
        let e = extract_triplets(chunk, gateway)?;
        skipped += e.skipped;
        triplets.extend(e.triplets);
    }
    Ok((build_graph(triplets), skipped))
}
