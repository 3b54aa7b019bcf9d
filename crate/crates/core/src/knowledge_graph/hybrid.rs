use std::collections::BTreeSet;

use crate::corpus::ChunkRef;
use crate::llm_gateway::Gateway;
use crate::retrieval::{RetrievalError, RetrievedUnit, UnitKey, UnitSource};
use crate::vector_index::{Embedder, VectorIndex};

use super::{match_subgraph, query_to_triplets, KnowledgeGraph, Triplet, DEFAULT_HOP_DEPTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HybridParams {
    pub k: usize,
    pub hop_depth: usize,
}

impl Default for HybridParams {
    fn default() -> Self {
        Self {
            k: 4,
            hop_depth: DEFAULT_HOP_DEPTH,
        }
    }
}

/// Edge lines sorted by (subject, relation, object), a blank line, then the
/// provenance text. When the provenance text is known the whole rendering is
/// cut to its length, so a graph unit never costs more than its source chunk.
pub fn render_graph_unit(edges: &[&Triplet], provenance_text: Option<&str>) -> String {
    let mut sorted: Vec<&Triplet> = edges.to_vec();
    sorted.sort_by(|a, b| (&a.subject, &a.relation, &a.object).cmp(&(&b.subject, &b.relation, &b.object)));
    let lines: Vec<String> = sorted.iter().map(|t| t.render()).collect();
    let mut text = lines.join("\n");
    match provenance_text {
        Some(p) => {
            text.push_str("\n\n");
            text.push_str(p);
            let cap = p.chars().count();
            text.chars().take(cap).collect()
        }
        None => text,
    }
}

/// Graph-derived units first, then vector hits whose chunk is not already a
/// provenance of a graph unit; at most `k` units in total.
pub fn hybrid_retrieve(
    query: &str,
    graph: &KnowledgeGraph,
    index: &VectorIndex,
    embedder: &dyn Embedder,
    params: HybridParams,
    gateway: &Gateway,
) -> Result<Vec<RetrievedUnit>, RetrievalError> {
    if params.k == 0 {
        return Ok(Vec::new());
    }
    let mut units = Vec::new();
    let mut covered: BTreeSet<ChunkRef> = BTreeSet::new();
    if !graph.is_empty() {
        let patterns = query_to_triplets(query, gateway)?.patterns;
        let sub = match_subgraph(graph, &patterns, params.hop_depth);
        let mut groups: Vec<(&ChunkRef, Vec<&Triplet>)> = sub.by_provenance().into_iter().collect();
        groups.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.0.cmp(b.0)));
        for (chunk, edges) in groups {
            covered.insert(chunk.clone());
            units.push(RetrievedUnit {
                key: UnitKey {
                    source: UnitSource::Graph,
                    chunk: chunk.clone(),
                },
                text: render_graph_unit(&edges, index.text(chunk)),
                score: None,
                edges: edges.into_iter().cloned().collect(),
            });
        }
    }
    let q = embedder.embed(query)?;
    for hit in index.search_top_k(&q, params.k)? {
        if covered.contains(&hit.chunk) {
            continue;
        }
        units.push(RetrievedUnit::from_hit(&hit, index));
    }
    units.truncate(params.k);
    Ok(units)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_never_exceeds_provenance() {
        let p = ChunkRef::new("d", 0);
        let t1 = Triplet::new("rc4", "is_a", "stream cipher", p.clone()).unwrap();
        let t2 = Triplet::new("aes", "is_a", "block cipher", p).unwrap();
        let text = "RC4 is a stream cipher and AES is a block cipher.";
        let r = render_graph_unit(&[&t1, &t2], Some(text));
        assert!(r.chars().count() <= text.chars().count());
        assert!(r.starts_with("aes \u{2014}is_a\u{2192} block cipher\nrc4"));
        let long = "x".repeat(500);
        let r = render_graph_unit(&[&t1], Some(&long));
        assert!(r.contains(&t1.render()) && r.ends_with('x'));
    }
}
