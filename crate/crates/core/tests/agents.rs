mod common;

use proptest::prelude::*;
use serde_json::json;

use kbagent::agents::{
    check_flag, classify_exit, run_episode, AgentConfig, AgentRole, EpisodeContext, EpisodeResult, ExitConditions,
    ExitStatus, KnowledgeTarget, PassThroughPrompter, TranscriptEntry, EXECUTOR_ROLE, PLANNER_ROLE,
};
use kbagent::challenge::ChallengeSpec;
use kbagent::environment::{provision, SandboxConfig, StubAnalyzer};
use kbagent::llm_gateway::{ChatMessage, Script, ScriptedFailure, ScriptedReply};
use kbagent::prompts::HINT_HEADER;
use kbagent::retrieval::{
    RetrievalConfig, DECOMPOSER_ROLE, GENERATOR_ROLE, HALLUCINATION_ROLE, RELEVANCE_ROLE, SOLVED_ROLE,
};

const FLAG: &str = "csawctf{b4se64_all_the_way}";

fn spec() -> ChallengeSpec {
    ChallengeSpec::load(&common::fixtures().join("challenges/layered_b64/challenge.json")).unwrap()
}

fn play(script: Script, cfg: AgentConfig, knowledge: bool) -> EpisodeResult {
    let spec = spec();
    let gw = common::gateway(script);
    let sandbox = provision(&spec, &SandboxConfig::default()).unwrap();
    let engine = common::engine(RetrievalConfig::default(), common::sample_stores());
    let analyzer = StubAnalyzer {
        disassembly: "mov eax, 1".into(),
        decompilation: String::new(),
    };
    let ctx = EpisodeContext {
        spec: &spec,
        cfg: &cfg,
        gateway: &gw,
        engine: knowledge.then_some(&engine),
        sandbox: &sandbox,
        analyzer: &analyzer,
        prompter: &PassThroughPrompter,
    };
    run_episode(&ctx)
}

fn tool(name: &str, args: serde_json::Value) -> ScriptedReply {
    ScriptedReply::tool(name, args)
}

fn messages(r: &EpisodeResult, who: AgentRole) -> Vec<&ChatMessage> {
    r.transcript
        .entries
        .iter()
        .filter_map(|e| match e {
            TranscriptEntry::Message { agent, message, .. } if *agent == who => Some(message),
            _ => None,
        })
        .collect()
}

fn knowledge_script() -> Script {
    Script::new()
        .texts(
            DECOMPOSER_ROLE,
            [r#"{"task_description": "decode", "search_query": "base64 decoding", "keywords": ["base64"]}"#],
        )
        .repeating(RELEVANCE_ROLE, [ScriptedReply::text("yes")])
        .repeating(HALLUCINATION_ROLE, [ScriptedReply::text("yes")])
        .repeating(SOLVED_ROLE, [ScriptedReply::text("yes")])
        .repeating(GENERATOR_ROLE, [ScriptedReply::text("Pipe through base64 -d twice.")])
}

#[test]
fn wrong_then_right_submission() {
    let script = Script::new().role(
        PLANNER_ROLE,
        [tool("submit_flag", json!({ "flag": "flag{nope}" })), tool("submit_flag", json!({ "flag": FLAG }))],
    );
    let r = play(script, AgentConfig::default(), false);
    assert_eq!(r.exit, ExitStatus::Solved);
    assert_eq!(r.rounds, 2);
    let planner = messages(&r, AgentRole::Planner);
    assert!(planner.iter().any(|m| m.content.contains("does not match the flag format csawctf{...}")));
    assert!(matches!(r.transcript.entries.last(), Some(TranscriptEntry::Exit { status: ExitStatus::Solved, .. })));
}

#[test]
fn rounds_are_capped() {
    let script = Script::new().repeating(PLANNER_ROLE, [ScriptedReply::text("thinking...")]);
    let cfg = AgentConfig {
        max_rounds: 3,
        ..AgentConfig::default()
    };
    let r = play(script, cfg, false);
    assert_eq!(r.exit, ExitStatus::MaxRound);
    assert_eq!(r.rounds, 3);
    assert_eq!(r.model_calls, 3);
}

#[test]
fn fatal_backend_error_ends_episode() {
    let script = Script::new().role(PLANNER_ROLE, [ScriptedReply::failure(ScriptedFailure::Fatal)]);
    let r = play(script, AgentConfig::default(), false);
    assert_eq!(r.exit, ExitStatus::Error);
    assert!(r.error.unwrap().contains("scripted fatal failure"));
}

#[test]
fn hint_goes_to_executor_prompt() {
    let script = knowledge_script()
        .role(PLANNER_ROLE, [tool("delegate", json!({ "task": "decode encoded.txt" })), tool("give_up", json!({}))])
        .role(EXECUTOR_ROLE, [tool("finish_task", json!({ "summary": "decoded nothing" }))]);
    let r = play(script, AgentConfig::default(), true);
    assert_eq!(r.exit, ExitStatus::GiveUp);
    assert_eq!(r.delegations.len(), 1);
    let d = &r.delegations[0];
    assert_eq!(d.hint.as_deref(), Some("Pipe through base64 -d twice."));
    assert_eq!(d.search_query.as_deref(), Some("base64 decoding"));
    assert_eq!(d.trace_ids, vec!["d0"]);
    assert_eq!(r.traces.len(), 1);
    let executor = messages(&r, AgentRole::Executor);
    assert!(executor[1].content.ends_with(&format!("{HINT_HEADER}\nPipe through base64 -d twice.")));
    assert!(messages(&r, AgentRole::Planner).iter().all(|m| !m.content.contains(HINT_HEADER)));
}

#[test]
fn planner_target_variant() {
    let script = knowledge_script()
        .role(PLANNER_ROLE, [tool("delegate", json!({ "task": "decode encoded.txt" })), tool("give_up", json!({}))])
        .role(EXECUTOR_ROLE, [tool("finish_task", json!({ "summary": "done" }))]);
    let cfg = AgentConfig {
        knowledge_target: KnowledgeTarget::Planner,
        ..AgentConfig::default()
    };
    let r = play(script, cfg, true);
    let executor = messages(&r, AgentRole::Executor);
    assert!(!executor[1].content.contains(HINT_HEADER));
    assert!(messages(&r, AgentRole::Planner).iter().any(|m| m.content.starts_with(HINT_HEADER)));
}

#[test]
fn executor_tools_and_turn_limit() {
    let script = Script::new()
        .role(PLANNER_ROLE, [tool("delegate", json!({ "task": "look at the binary" })), tool("give_up", json!({}))])
        .role(
            EXECUTOR_ROLE,
            [
                tool("disassemble", json!({ "path": "/home/ctfplayer/ctf_files/encoded.txt", "function": "main" })),
                tool("run_command", json!({ "command": "cat /home/ctfplayer/ctf_files/encoded.txt | wc -c" })),
            ],
        );
    let cfg = AgentConfig {
        max_executor_turns: 2,
        ..AgentConfig::default()
    };
    let r = play(script, cfg, false);
    let d = &r.delegations[0];
    assert_eq!(d.executor_turns, 2);
    assert!(d.summary.contains("turn limit"));
    let executor = messages(&r, AgentRole::Executor);
    assert!(executor.iter().any(|m| m.content.contains("mov eax, 1")));
    assert!(executor.iter().any(|m| m.content.starts_with("[exit code 0]")));
}

#[test]
fn flag_in_command_output_solves() {
    let script = Script::new().role(
        PLANNER_ROLE,
        [tool("run_command", json!({ "command": "base64 -d /home/ctfplayer/ctf_files/encoded.txt | base64 -d" }))],
    );
    let r = play(script, AgentConfig::default(), false);
    assert_eq!(r.exit, ExitStatus::Solved);
    assert_eq!(r.rounds, 1);
}

#[test]
fn hints_do_not_count_as_flag_sightings() {
    let spec = spec();
    let hint = format!("previous writeup: the flag was {FLAG}");
    let msgs = vec![ChatMessage::user(format!("{HINT_HEADER}\n{hint}"))];
    assert!(!check_flag(&msgs, &spec, None, std::slice::from_ref(&hint)));
    assert!(check_flag(&msgs, &spec, None, &[]));
    assert!(check_flag(&[], &spec, Some(&format!("  {FLAG} ")), &[]));
}

proptest! {
    #[test]
    fn exit_priority(solved: bool, gave_up: bool, budget: bool, rounds: bool, error: bool) {
        let c = ExitConditions { solved, gave_up, budget_exhausted: budget, rounds_exhausted: rounds, error };
        let expected = [
            (solved, ExitStatus::Solved),
            (gave_up, ExitStatus::GiveUp),
            (budget, ExitStatus::MaxCost),
            (rounds, ExitStatus::MaxRound),
            (error, ExitStatus::Error),
        ]
        .into_iter()
        .find(|(on, _)| *on)
        .map(|(_, s)| s);
        prop_assert_eq!(classify_exit(c), expected);
    }
}
