//! Optional retrieval strategies: multi-query, rank fusion, question
//! decomposition and step-back queries.

use std::collections::{BTreeMap, HashSet};

use crate::llm_gateway::Gateway;
use crate::prompts;

use super::engine::{KnowledgeHint, RetrievalEngine};
use super::trace::RetrievalTrace;
use super::{retrieve, RetrievalConfig, RetrievalError, RetrievedUnit, Stores, UnitKey};

pub const MULTI_QUERY_ROLE: &str = "multi_query";
pub const STEP_BACK_ROLE: &str = "step_back";
pub const QUESTION_DECOMPOSER_ROLE: &str = "question_decomposer";

/// Non-empty lines with list markers (`-`, `*`, `1.`, `2)`) removed.
fn list_lines(output: &str) -> Vec<String> {
    output
        .lines()
        .map(|l| {
            let l = l.trim();
            let l = l.trim_start_matches(['-', '*', '\u{2022}']).trim_start();
            let digits = l.chars().take_while(char::is_ascii_digit).count();
            let rest = &l[digits..];
            let l = if digits > 0 && (rest.starts_with('.') || rest.starts_with(')')) {
                rest[1..].trim_start()
            } else {
                l
            };
            l.trim().to_string()
        })
        .filter(|l| !l.is_empty())
        .collect()
}

/// Reciprocal rank fusion over arbitrary keys: `score = sum 1/(k_rrf + rank)`
/// with 1-based ranks, descending score, ties by key ascending. Repeats of a
/// key within one list count only at their first position.
///
/// Contributions are summed in ascending rank order, so permuting the input
/// lists gives bit-identical scores.
pub fn rrf_scores<K: Ord + Clone>(lists: &[Vec<K>], k_rrf: usize) -> Vec<(K, f64)> {
    assert!(k_rrf >= 1, "k_rrf must be at least 1");
    let mut ranks: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for list in lists {
        let mut seen: Vec<&K> = Vec::new();
        for (i, key) in list.iter().enumerate() {
            if seen.contains(&key) {
                continue;
            }
            seen.push(key);
            ranks.entry(key.clone()).or_default().push(i + 1);
        }
    }
    let mut scored: Vec<(K, f64)> = ranks
        .into_iter()
        .map(|(key, mut r)| {
            r.sort_unstable();
            let score = r.iter().map(|&rank| 1.0 / (k_rrf + rank) as f64).sum();
            (key, score)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored
}

/// Fuses ranked unit lists; each output unit carries its fused score.
pub fn rrf_fuse(lists: &[Vec<RetrievedUnit>], k_rrf: usize) -> Vec<RetrievedUnit> {
    let mut by_key: BTreeMap<UnitKey, RetrievedUnit> = BTreeMap::new();
    for u in lists.iter().flatten() {
        by_key.entry(u.key.clone()).or_insert_with(|| u.clone());
    }
    let keys: Vec<Vec<UnitKey>> = lists.iter().map(|l| l.iter().map(|u| u.key.clone()).collect()).collect();
    rrf_scores(&keys, k_rrf)
        .into_iter()
        .map(|(key, score)| {
            let mut u = by_key.remove(&key).expect("every fused key came from an input list");
            u.score = Some(score);
            u
        })
        .collect()
}

/// Retrieves for `n` model-written variations of `q` and merges the results:
/// first-seen order without duplicates, or RRF order cut to `k` when rank
/// fusion is enabled. `n <= 1`, or a failed variation step, is a plain retrieve.
pub fn multi_query_retrieve(
    q: &str,
    n: usize,
    cfg: &RetrievalConfig,
    stores: &Stores,
    gateway: &Gateway,
) -> Result<Vec<RetrievedUnit>, RetrievalError> {
    if n <= 1 {
        return retrieve(q, cfg, stores, gateway);
    }
    let variations = match gateway.prompt(MULTI_QUERY_ROLE, prompts::multi_query(q, n)) {
        Ok(out) => list_lines(&out).into_iter().take(n).collect::<Vec<_>>(),
        Err(e) => {
            tracing::warn!(error = %e, "query variation failed; using the original query");
            Vec::new()
        }
    };
    if variations.is_empty() {
        return retrieve(q, cfg, stores, gateway);
    }
    let mut lists = Vec::with_capacity(variations.len());
    for v in &variations {
        lists.push(retrieve(v, cfg, stores, gateway)?);
    }
    if cfg.rag_fusion {
        let mut fused = rrf_fuse(&lists, cfg.k_rrf);
        fused.truncate(cfg.k);
        return Ok(fused);
    }
    let mut seen = HashSet::new();
    Ok(lists.into_iter().flatten().filter(|u| seen.insert(u.key.clone())).collect())
}

/// Broader query for retrieval; `q` itself when the model fails or is silent.
pub fn step_back_query(q: &str, gateway: &Gateway) -> String {
    match gateway.prompt(STEP_BACK_ROLE, prompts::step_back(q)) {
        Ok(out) if !out.trim().is_empty() => out.trim().to_string(),
        Ok(_) => q.to_string(),
        Err(e) => {
            tracing::warn!(error = %e, "step-back failed; retrieving with the original query");
            q.to_string()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubAnswer {
    pub question: String,
    pub hint: Option<KnowledgeHint>,
    pub trace: RetrievalTrace,
}

/// Splits `q` into sub-questions and runs the retrieval loop for each, in
/// order. No sub-questions (or a failed split) means `q` alone.
pub fn decompose_question(trace_id: &str, q: &str, gateway: &Gateway, engine: &RetrievalEngine) -> Vec<SubAnswer> {
    let mut subs = match gateway.prompt(QUESTION_DECOMPOSER_ROLE, prompts::question_decomposition(q)) {
        Ok(out) => list_lines(&out),
        Err(e) => {
            tracing::warn!(error = %e, "question decomposition failed");
            Vec::new()
        }
    };
    if subs.is_empty() {
        subs.push(q.to_string());
    }
    subs.into_iter()
        .enumerate()
        .map(|(i, question)| {
            let out = engine.run(&format!("{trace_id}.{i}"), &question, gateway);
            SubAnswer {
                question,
                hint: out.hint,
                trace: out.trace,
            }
        })
        .collect()
}
