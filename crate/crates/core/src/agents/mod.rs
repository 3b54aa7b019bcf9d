//! Planner/executor agents.
//!
//! The planner explores, delegates tasks and submits the flag; each delegated
//! task runs in a fresh executor conversation that may carry a knowledge hint
//! retrieved for the task description.

mod episode;
mod transcript;

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::challenge::ChallengeSpec;
use crate::llm_gateway::{ChatMessage, ToolSchema};

pub use episode::{
    run_episode, AutoPrompter, DelegationRecord, EpisodeContext, EpisodeResult, PassThroughPrompter, EXECUTOR_ROLE,
    PLANNER_ROLE,
};
pub use transcript::{AgentRole, Transcript, TranscriptEntry};

pub const DEFAULT_MAX_ROUNDS: usize = 30;
pub const DEFAULT_MAX_EXECUTOR_TURNS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExitStatus {
    Solved,
    GiveUp,
    MaxCost,
    MaxRound,
    Error,
}

impl ExitStatus {
    pub const ALL: [ExitStatus; 5] = [
        ExitStatus::Solved,
        ExitStatus::GiveUp,
        ExitStatus::MaxCost,
        ExitStatus::MaxRound,
        ExitStatus::Error,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ExitStatus::Solved => "Solved",
            ExitStatus::GiveUp => "Give up",
            ExitStatus::MaxCost => "Max Cost",
            ExitStatus::MaxRound => "Max Round",
            ExitStatus::Error => "Error",
        }
    }
}

impl fmt::Display for ExitStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Which conversation receives retrieved hints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeTarget {
    #[default]
    Executor,
    Planner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Planner turns per episode.
    pub max_rounds: usize,
    pub max_executor_turns: usize,
    /// Retrieve a hint for every delegated task.
    pub knowledge: bool,
    pub knowledge_target: KnowledgeTarget,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_rounds: DEFAULT_MAX_ROUNDS,
            max_executor_turns: DEFAULT_MAX_EXECUTOR_TURNS,
            knowledge: true,
            knowledge_target: KnowledgeTarget::Executor,
        }
    }
}

/// Conditions observed at a turn boundary.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExitConditions {
    pub solved: bool,
    pub gave_up: bool,
    pub budget_exhausted: bool,
    pub rounds_exhausted: bool,
    pub error: bool,
}

/// Highest-priority exit among the conditions that hold:
/// Solved > GiveUp > MaxCost > MaxRound > Error.
pub fn classify_exit(c: ExitConditions) -> Option<ExitStatus> {
    if c.solved {
        Some(ExitStatus::Solved)
    } else if c.gave_up {
        Some(ExitStatus::GiveUp)
    } else if c.budget_exhausted {
        Some(ExitStatus::MaxCost)
    } else if c.rounds_exhausted {
        Some(ExitStatus::MaxRound)
    } else if c.error {
        Some(ExitStatus::Error)
    } else {
        None
    }
}

/// Searchable text of a message: content plus tool-call arguments.
fn message_text(m: &ChatMessage) -> String {
    let mut s = m.content.clone();
    for c in m.tool_calls() {
        s.push('\n');
        s.push_str(&c.arguments);
    }
    s
}

/// True iff `submitted` is the flag, or the flag occurs in a message once
/// injected hint texts are removed.
pub fn check_flag(messages: &[ChatMessage], spec: &ChallengeSpec, submitted: Option<&str>, hints: &[String]) -> bool {
    if spec.flag.is_empty() {
        return false;
    }
    if submitted.is_some_and(|s| s.trim() == spec.flag) {
        return true;
    }
    messages.iter().any(|m| {
        let mut text = message_text(m);
        for h in hints.iter().filter(|h| !h.is_empty()) {
            text = text.replace(h.as_str(), "");
        }
        text.contains(&spec.flag)
    })
}

/// A hint containing the exact flag means the corpus holds this challenge's answer.
pub fn hint_leaks_flag(hint: &str, spec: &ChallengeSpec) -> bool {
    !spec.flag.is_empty() && hint.contains(&spec.flag)
}

fn schema(name: &str, description: &str, props: serde_json::Value, required: &[&str]) -> ToolSchema {
    ToolSchema {
        name: name.into(),
        description: description.into(),
        parameters: json!({ "type": "object", "properties": props, "required": required }),
    }
}

fn run_command_tool() -> ToolSchema {
    schema(
        "run_command",
        "Execute a shell command in the challenge environment and return its output.",
        json!({ "command": { "type": "string", "description": "Command to run with sh -c." } }),
        &["command"],
    )
}

pub fn planner_tools() -> Vec<ToolSchema> {
    vec![
        run_command_tool(),
        schema(
            "delegate",
            "Delegate one task to the Executor and receive its summary.",
            json!({ "task": { "type": "string", "description": "Detailed task description." } }),
            &["task"],
        ),
        schema(
            "submit_flag",
            "Submit the flag for the challenge.",
            json!({ "flag": { "type": "string" } }),
            &["flag"],
        ),
        schema(
            "give_up",
            "Give up on the challenge.",
            json!({ "reason": { "type": "string" } }),
            &[],
        ),
    ]
}

pub fn executor_tools() -> Vec<ToolSchema> {
    let target = json!({
        "path": { "type": "string", "description": "Path of the binary." },
        "function": { "type": "string", "description": "Function to analyze; defaults to the whole binary." }
    });
    vec![
        run_command_tool(),
        schema("disassemble", "Disassemble a binary or one of its functions.", target.clone(), &["path"]),
        schema("decompile", "Decompile a binary or one of its functions.", target, &["path"]),
        schema(
            "finish_task",
            "Finish the delegated task and return a summary to the Planner.",
            json!({ "summary": { "type": "string" } }),
            &["summary"],
        ),
    ]
}
