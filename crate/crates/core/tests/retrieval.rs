mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use kbagent::llm_gateway::{Script, ScriptedFailure, ScriptedReply};
use kbagent::retrieval::{
    decompose_context, multi_query_retrieve, parse_decomposition, read_traces_jsonl, retrieve, rrf_scores, step_back_query,
    validate_tokens, write_traces_jsonl, RetrievalConfig, DECOMPOSER_ROLE, GENERATOR_ROLE, HALLUCINATION_ROLE,
    MULTI_QUERY_ROLE, QUESTION_DECOMPOSER_ROLE, RELEVANCE_ROLE, REWRITER_ROLE, SOLVED_ROLE, STEP_BACK_ROLE,
};

fn passing() -> Script {
    Script::new()
        .repeating(RELEVANCE_ROLE, [ScriptedReply::text("yes")])
        .repeating(HALLUCINATION_ROLE, [ScriptedReply::text("Yes.")])
        .repeating(SOLVED_ROLE, [ScriptedReply::text("yes")])
        .repeating(GENERATOR_ROLE, [ScriptedReply::text("XOR every byte with each candidate key.")])
        .repeating(REWRITER_ROLE, [ScriptedReply::text("better question")])
}

#[test]
fn hint_carries_supporting_units() {
    let gw = common::gateway(passing());
    let e = common::engine(RetrievalConfig::default(), common::sample_stores());
    let out = e.run("t", "single byte xor", &gw);
    let hint = out.hint.unwrap();
    assert_eq!(hint.text, "XOR every byte with each candidate key.");
    assert_eq!(hint.supporting_refs.len(), 4);
    assert_eq!(hint.query_final, "single byte xor");
    assert_eq!(out.depth, 0);
    assert_eq!(out.iterations, 1);
    // Logical clock: timestamps count events.
    let stamps: Vec<u64> = out.trace.events.iter().map(|e| e.at_ms).collect();
    assert_eq!(stamps, (0..stamps.len() as u64).collect::<Vec<_>>());
}

#[test]
fn trace_costs_follow_usage() {
    let prices = kbagent::llm_gateway::PriceTable::new().with(common::MODEL, 1.0, 0.0);
    let script = Script::new()
        .repeating(RELEVANCE_ROLE, [ScriptedReply::text("yes").with_tokens(100, 1)])
        .repeating(HALLUCINATION_ROLE, [ScriptedReply::text("yes").with_tokens(200, 1)])
        .repeating(SOLVED_ROLE, [ScriptedReply::text("yes").with_tokens(300, 1)])
        .repeating(GENERATOR_ROLE, [ScriptedReply::text("answer").with_tokens(400, 1)]);
    let gw = common::priced_gateway(script, prices, 3.0);
    let out = common::engine(RetrievalConfig::default(), common::sample_stores()).run("t", "q", &gw);
    assert!((out.trace.total_cost() - 1.0).abs() < 1e-12);
    assert!((gw.accrued() - 1.0).abs() < 1e-12);
}

#[test]
fn traces_round_trip_through_jsonl() {
    let mut script = passing();
    script.roles.remove(RELEVANCE_ROLE);
    let gw = common::gateway(script.repeating(RELEVANCE_ROLE, [ScriptedReply::text("no"), ScriptedReply::text("yes")]));
    let e = common::engine(RetrievalConfig::default(), common::sample_stores());
    let traces = vec![e.run("a", "xor", &gw).trace, e.run("b", "rc4", &gw).trace];
    let mut buf = Vec::new();
    write_traces_jsonl(&traces, &mut buf).unwrap();
    assert_eq!(read_traces_jsonl(buf.as_slice()).unwrap(), traces);
}

#[test]
fn grammar_rejects_malformed_sequences() {
    for bad in [
        vec![],
        vec!["retrieve"],
        vec!["retrieve", "rel_yes", "return_answer"],
        vec!["retrieve", "rel_no", "retrieve"],
        vec!["retrieve", "rel_yes", "generate", "hal_yes", "solved_yes", "return_answer", "give_empty"],
        vec!["error"],
    ] {
        assert!(validate_tokens(&bad).is_err(), "{bad:?} accepted");
    }
    assert!(validate_tokens(&["give_empty"]).is_ok());
    assert!(validate_tokens(&["retrieve", "error", "give_empty"]).is_ok());
}

#[test]
fn multi_query_with_one_variant_is_plain_retrieval() {
    let stores = common::sample_stores();
    let cfg = RetrievalConfig {
        multi_query: true,
        ..RetrievalConfig::default()
    };
    let gw = common::gateway(Script::new());
    let plain = retrieve("pcap exfiltration", &cfg, &stores, &gw).unwrap();
    assert_eq!(multi_query_retrieve("pcap exfiltration", 1, &cfg, &stores, &gw).unwrap(), plain);
    assert_eq!(gw.call_count(), 0);
}

#[test]
fn multi_query_dedups_and_fusion_truncates() {
    let stores = common::sample_stores();
    let variants = "1. xor single byte key\n2. rc4 keystream reuse\n3. format string printf leak";
    let cfg = RetrievalConfig {
        multi_query: true,
        k: 3,
        ..RetrievalConfig::default()
    };
    let gw = common::gateway(Script::new().repeating(MULTI_QUERY_ROLE, [ScriptedReply::text(variants)]));
    let merged = multi_query_retrieve("crypto", 3, &cfg, &stores, &gw).unwrap();
    let mut keys: Vec<_> = merged.iter().map(|u| u.key.clone()).collect();
    let n = keys.len();
    keys.dedup();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), n);
    assert!(n > 3);

    let fused_cfg = RetrievalConfig { rag_fusion: true, ..cfg };
    let fused = multi_query_retrieve("crypto", 3, &fused_cfg, &stores, &gw).unwrap();
    assert_eq!(fused.len(), 3);
    assert!(fused.windows(2).all(|w| w[0].score >= w[1].score));
}

#[test]
fn step_back_falls_back_to_query() {
    let gw = common::gateway(Script::new().role(
        STEP_BACK_ROLE,
        [ScriptedReply::text("What is a stream cipher?"), ScriptedReply::text("  "), ScriptedReply::failure(ScriptedFailure::Fatal)],
    ));
    assert_eq!(step_back_query("rc4 reuse", &gw), "What is a stream cipher?");
    assert_eq!(step_back_query("rc4 reuse", &gw), "rc4 reuse");
    assert_eq!(step_back_query("rc4 reuse", &gw), "rc4 reuse");
}

#[test]
fn question_decomposition_runs_one_loop_per_sub_question() {
    let cfg = RetrievalConfig {
        question_decomposition: true,
        ..RetrievalConfig::default()
    };
    let script = passing().texts(QUESTION_DECOMPOSER_ROLE, ["- What is RC4?\n- How is keystream reuse exploited?"]);
    let gw = common::gateway(script);
    let (hint, traces) = common::engine(cfg, common::sample_stores()).hint_for("d", "break rc4", &gw);
    assert_eq!(traces.len(), 2);
    assert_eq!(traces[0].id, "d.0");
    let hint = hint.unwrap();
    assert!(hint.text.contains("Sub-question: What is RC4?"));
    assert_eq!(hint.query_final, "break rc4");
}

#[test]
fn decomposition_retries_then_falls_back() {
    let good = r#"Sure: {"task_description": "Find the key", "search_query": "rc4 key recovery", "keywords": ["rc4"]}"#;
    let gw = common::gateway(Script::new().texts(DECOMPOSER_ROLE, ["not json", good]));
    let r = decompose_context("ctx", &gw).unwrap();
    assert!(!r.fallback);
    assert_eq!(r.keywords, vec!["rc4", "key", "recovery"]);

    let gw = common::gateway(Script::new().texts(DECOMPOSER_ROLE, ["nope", "still nope"]));
    let long = "x".repeat(2000);
    let r = decompose_context(&long, &gw).unwrap();
    assert!(r.fallback);
    assert_eq!(r.task_description, kbagent::prompts::DEFAULT_TASK);
    assert!(r.search_query.len() < long.len());
    assert!(parse_decomposition("{\"task_description\": \"\"}").is_none());
}

proptest! {
    #[test]
    fn rrf_scores_are_sorted_and_complete(lists in prop::collection::vec(prop::collection::vec(0u8..30, 0..20), 0..6), k in 1usize..100) {
        let out = rrf_scores(&lists, k);
        let mut expected_keys: Vec<u8> = lists.iter().flatten().copied().collect();
        expected_keys.sort();
        expected_keys.dedup();
        let mut keys: Vec<u8> = out.iter().map(|(key, _)| *key).collect();
        keys.sort();
        prop_assert_eq!(keys, expected_keys);
        for w in out.windows(2) {
            prop_assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
        }
        let max = lists.len() as f64 / (k as f64 + 1.0);
        prop_assert!(out.iter().all(|(_, s)| *s > 0.0 && *s <= max + 1e-12));
    }

    #[test]
    fn rrf_single_list_keeps_order(list in prop::collection::btree_set(0u16..500, 0..40)) {
        let mut shuffled: Vec<u16> = list.into_iter().collect();
        shuffled.reverse();
        let out: Vec<u16> = rrf_scores(&[shuffled.clone()], 60).into_iter().map(|(k, _)| k).collect();
        prop_assert_eq!(out, shuffled);
    }

    #[test]
    fn loop_stops_within_cap(rel in prop::collection::vec(any::<bool>(), 1..8), hal in prop::collection::vec(any::<bool>(), 1..8), sol in prop::collection::vec(any::<bool>(), 1..8), depth in 1usize..5) {
        let yn = |v: &bool| ScriptedReply::text(if *v { "yes" } else { "no" });
        let script = Script::new()
            .repeating(RELEVANCE_ROLE, rel.iter().map(yn))
            .repeating(HALLUCINATION_ROLE, hal.iter().map(yn))
            .repeating(SOLVED_ROLE, sol.iter().map(yn))
            .repeating(GENERATOR_ROLE, [ScriptedReply::text("a")])
            .repeating(REWRITER_ROLE, [ScriptedReply::text("q2")]);
        let cfg = RetrievalConfig { max_depth: depth, ..RetrievalConfig::default() };
        let gw = common::gateway(script);
        let out = common::engine(cfg.clone(), common::sample_stores()).run("p", "q", &gw);
        prop_assert!(out.iterations <= cfg.iteration_cap());
        prop_assert!(out.depth <= depth);
        prop_assert!(validate_tokens(&out.trace.tokens()).is_ok());
        let rewrites = out.trace.count(|k| matches!(k, kbagent::retrieval::EventKind::Rewrite { .. }));
        let counts: BTreeMap<&str, usize> = out.trace.tokens().into_iter().fold(BTreeMap::new(), |mut m, t| { *m.entry(t).or_default() += 1; m });
        prop_assert_eq!(rewrites, counts.get("rel_no").copied().unwrap_or(0) + counts.get("solved_no").copied().unwrap_or(0));
    }
}
