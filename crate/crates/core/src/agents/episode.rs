use serde::{Deserialize, Serialize};

use crate::challenge::ChallengeSpec;
use crate::environment::{validate_flag_format, Analyzer, Sandbox};
use crate::llm_gateway::{parse_tool_calls, ChatMessage, Completion, Gateway, GatewayError, ParsedToolCall};
use crate::prompts;
use crate::retrieval::{decompose_context, RetrievalEngine, RetrievalTrace};

use super::transcript::{AgentRole, Transcript, TranscriptEntry};
use super::{
    check_flag, classify_exit, executor_tools, hint_leaks_flag, planner_tools, AgentConfig, ExitConditions, ExitStatus,
    KnowledgeTarget,
};

pub const PLANNER_ROLE: &str = "planner";
pub const EXECUTOR_ROLE: &str = "executor";

const PLANNER_NUDGE: &str =
    "Continue solving the challenge: delegate the next task to the Executor, submit the flag, or give up.";
const EXECUTOR_NUDGE: &str = "Continue with the task. When it is complete, call finish_task with a summary.";

/// Hook for rewriting agent prompts before use. The default passes them through.
pub trait AutoPrompter: Send + Sync {
    fn planner_prompt(&self, _spec: &ChallengeSpec, prompt: String) -> String {
        prompt
    }

    fn executor_prompt(&self, _spec: &ChallengeSpec, prompt: String) -> String {
        prompt
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PassThroughPrompter;

impl AutoPrompter for PassThroughPrompter {}

pub struct EpisodeContext<'a> {
    pub spec: &'a ChallengeSpec,
    pub cfg: &'a AgentConfig,
    pub gateway: &'a Gateway,
    /// `None` disables knowledge hints.
    pub engine: Option<&'a RetrievalEngine>,
    pub sandbox: &'a Sandbox,
    pub analyzer: &'a dyn Analyzer,
    pub prompter: &'a dyn AutoPrompter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelegationRecord {
    pub id: usize,
    pub task: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_query: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hint: Option<String>,
    pub trace_ids: Vec<String>,
    pub summary: String,
    pub executor_turns: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub challenge: String,
    pub exit: ExitStatus,
    /// Planner turns taken.
    pub rounds: usize,
    pub flag_found: Option<String>,
    pub cost: f64,
    pub model_calls: usize,
    pub transcript: Transcript,
    pub traces: Vec<RetrievalTrace>,
    pub delegations: Vec<DelegationRecord>,
    pub error: Option<String>,
}

enum Stop {
    Budget,
    Fatal(String),
}

impl From<GatewayError> for Stop {
    fn from(e: GatewayError) -> Self {
        if e.is_budget_halt() {
            Stop::Budget
        } else {
            Stop::Fatal(e.to_string())
        }
    }
}

struct Run<'c, 'a> {
    ctx: &'c EpisodeContext<'a>,
    transcript: Transcript,
    planner: Vec<ChatMessage>,
    /// Every executor message of every delegation, for flag detection.
    executor_log: Vec<ChatMessage>,
    hints: Vec<String>,
    traces: Vec<RetrievalTrace>,
    delegations: Vec<DelegationRecord>,
    correct_submission: bool,
    gave_up: bool,
    error: Option<String>,
}

fn tool_reply(call: &ParsedToolCall, text: impl Into<String>) -> ChatMessage {
    ChatMessage::tool(call.id.clone(), text)
}

impl Run<'_, '_> {
    fn log(&mut self, agent: AgentRole, delegation: Option<usize>, message: ChatMessage, completion: Option<&Completion>) {
        self.transcript.push(TranscriptEntry::Message {
            agent,
            delegation,
            message,
            usage: completion.map(|c| c.usage.clone()),
        });
    }

    fn planner_push(&mut self, message: ChatMessage) {
        self.log(AgentRole::Planner, None, message.clone(), None);
        self.planner.push(message);
    }

    fn flag_seen(&self) -> bool {
        let all: Vec<ChatMessage> = self.planner.iter().chain(self.executor_log.iter()).cloned().collect();
        check_flag(&all, self.ctx.spec, None, &self.hints)
    }

    fn run_command(&self, call: &ParsedToolCall) -> String {
        match call.str_arg("command") {
            Some(cmd) => match self.ctx.sandbox.exec(cmd) {
                Ok(r) => r.render(),
                Err(e) => format!("error: {e}"),
            },
            None => "error: run_command requires a `command` string".to_string(),
        }
    }

    /// One planner completion and its tool calls. `rounds` counts completions.
    fn planner_turn(&mut self, rounds: &mut usize) -> Result<(), Stop> {
        let gw = self.ctx.gateway;
        let c = gw.complete(PLANNER_ROLE, self.planner.clone(), planner_tools())?;
        *rounds += 1;
        self.log(AgentRole::Planner, None, c.message.clone(), Some(&c));
        self.planner.push(c.message.clone());

        let calls = parse_tool_calls(c.message.tool_calls());
        let mut planner_hints = Vec::new();
        let mut outcome = Ok(());
        for (raw, parsed) in c.message.tool_calls().iter().zip(calls) {
            let call = match parsed {
                Ok(call) => call,
                Err(e) => {
                    self.planner_push(ChatMessage::tool(raw.id.clone(), format!("error: {e}")));
                    continue;
                }
            };
            let reply = match call.name.as_str() {
                "run_command" => self.run_command(&call),
                "delegate" => match call.str_arg("task") {
                    Some(task) if outcome.is_ok() => match self.delegate(task) {
                        Ok((summary, hint)) => {
                            planner_hints.extend(hint);
                            summary
                        }
                        Err(stop) => {
                            outcome = Err(stop);
                            "error: the delegation was aborted".to_string()
                        }
                    },
                    Some(_) => "error: the delegation was skipped".to_string(),
                    None => "error: delegate requires a `task` string".to_string(),
                },
                "submit_flag" => match call.str_arg("flag") {
                    Some(flag) if check_flag(&[], self.ctx.spec, Some(flag), &[]) => {
                        self.correct_submission = true;
                        "Correct flag.".to_string()
                    }
                    Some(flag) if !validate_flag_format(flag, &self.ctx.spec.flag_format) => format!(
                        "Incorrect flag. It does not match the flag format {}.",
                        self.ctx.spec.flag_format
                    ),
                    Some(_) => "Incorrect flag.".to_string(),
                    None => "error: submit_flag requires a `flag` string".to_string(),
                },
                "give_up" => {
                    self.gave_up = true;
                    "Giving up on the challenge.".to_string()
                }
                other => format!("error: unknown tool `{other}`"),
            };
            self.planner_push(tool_reply(&call, reply));
        }
        if c.message.tool_calls().is_empty() {
            self.planner_push(ChatMessage::user(PLANNER_NUDGE));
        }
        for h in planner_hints {
            self.planner_push(ChatMessage::user(prompts::hint_block(&h)));
        }
        outcome
    }

    /// Runs one delegated task. Returns the executor summary and, for the
    /// planner-target variant, the hint to show the planner.
    fn delegate(&mut self, task: &str) -> Result<(String, Option<String>), Stop> {
        let ctx = self.ctx;
        let id = self.delegations.len();
        let mut record = DelegationRecord {
            id,
            task: task.to_string(),
            search_query: None,
            hint: None,
            trace_ids: Vec::new(),
            summary: String::new(),
            executor_turns: 0,
        };

        if let (true, Some(engine)) = (ctx.cfg.knowledge, ctx.engine) {
            match decompose_context(task, ctx.gateway) {
                Ok(d) => {
                    let (hint, traces) = engine.hint_for(&format!("d{id}"), &d.search_query, ctx.gateway);
                    record.search_query = Some(d.search_query);
                    record.trace_ids = traces.iter().map(|t| t.id.clone()).collect();
                    record.hint = hint.map(|h| h.text);
                    self.traces.extend(traces);
                }
                Err(e) => self.transcript.note(format!("knowledge retrieval skipped for delegation {id}: {e}")),
            }
            if let Some(h) = &record.hint {
                if hint_leaks_flag(h, ctx.spec) {
                    tracing::warn!(delegation = id, "retrieved hint contains the challenge flag");
                    self.transcript
                        .note(format!("WARNING: the hint for delegation {id} contains the exact flag (corpus contamination)"));
                }
                self.hints.push(h.clone());
            }
            self.transcript.push(TranscriptEntry::Hint {
                delegation: id,
                traces: record.trace_ids.clone(),
                target: ctx.cfg.knowledge_target,
                text: record.hint.clone(),
            });
        }

        let executor_hint = match ctx.cfg.knowledge_target {
            KnowledgeTarget::Executor => record.hint.as_deref(),
            KnowledgeTarget::Planner => None,
        };
        let user = ctx
            .prompter
            .executor_prompt(ctx.spec, prompts::executor_user_with_hint(ctx.spec, task, executor_hint));
        let mut msgs = Vec::new();
        for m in [ChatMessage::system(prompts::EXECUTOR_SYSTEM), ChatMessage::user(user)] {
            self.log(AgentRole::Executor, Some(id), m.clone(), None);
            msgs.push(m);
        }

        let mut summary = None;
        let mut stop = None;
        while summary.is_none() && record.executor_turns < ctx.cfg.max_executor_turns {
            let c = match ctx.gateway.complete(EXECUTOR_ROLE, msgs.clone(), executor_tools()) {
                Ok(c) => c,
                Err(e) => {
                    let s = Stop::from(e);
                    if let Stop::Budget = s {
                        summary = Some("The Executor stopped because the budget is exhausted.".to_string());
                    }
                    stop = Some(s);
                    break;
                }
            };
            record.executor_turns += 1;
            self.log(AgentRole::Executor, Some(id), c.message.clone(), Some(&c));
            msgs.push(c.message.clone());
            for (raw, parsed) in c.message.tool_calls().iter().zip(parse_tool_calls(c.message.tool_calls())) {
                let reply = match parsed {
                    Err(e) => ChatMessage::tool(raw.id.clone(), format!("error: {e}")),
                    Ok(call) => {
                        let text = match call.name.as_str() {
                            "run_command" => self.run_command(&call),
                            "disassemble" | "decompile" => match call.str_arg("path") {
                                Some(path) => {
                                    let f = call.str_arg("function");
                                    let r = if call.name == "disassemble" {
                                        ctx.analyzer.disassemble(ctx.sandbox, path, f)
                                    } else {
                                        ctx.analyzer.decompile(ctx.sandbox, path, f)
                                    };
                                    r.unwrap_or_else(|e| format!("error: {e}"))
                                }
                                None => format!("error: {} requires a `path` string", call.name),
                            },
                            "finish_task" => {
                                let s = call.str_arg("summary").unwrap_or_default().to_string();
                                summary = Some(s);
                                "Task finished.".to_string()
                            }
                            other => format!("error: unknown tool `{other}`"),
                        };
                        tool_reply(&call, text)
                    }
                };
                self.log(AgentRole::Executor, Some(id), reply.clone(), None);
                msgs.push(reply);
            }
            if c.message.tool_calls().is_empty() {
                let nudge = ChatMessage::user(EXECUTOR_NUDGE);
                self.log(AgentRole::Executor, Some(id), nudge.clone(), None);
                msgs.push(nudge);
            }
        }
        self.executor_log.extend(msgs);

        record.summary = summary
            .unwrap_or_else(|| "The Executor reached its turn limit without finishing the task.".to_string());
        let planner_hint = match ctx.cfg.knowledge_target {
            KnowledgeTarget::Planner => record.hint.clone(),
            KnowledgeTarget::Executor => None,
        };
        let summary = record.summary.clone();
        self.delegations.push(record);
        match stop {
            Some(Stop::Fatal(e)) => Err(Stop::Fatal(e)),
            _ => Ok((summary, planner_hint)),
        }
    }
}

/// Plays one challenge to a single exit status. Never panics on model or
/// environment failures; those end the episode as `Error`.
pub fn run_episode(ctx: &EpisodeContext<'_>) -> EpisodeResult {
    let mut run = Run {
        ctx,
        transcript: Transcript::default(),
        planner: Vec::new(),
        executor_log: Vec::new(),
        hints: Vec::new(),
        traces: Vec::new(),
        delegations: Vec::new(),
        correct_submission: false,
        gave_up: false,
        error: None,
    };
    for w in ctx.sandbox.warnings() {
        run.transcript.note(w);
    }
    let user = ctx.prompter.planner_prompt(ctx.spec, prompts::planner_user(ctx.spec));
    run.planner_push(ChatMessage::system(prompts::PLANNER_SYSTEM));
    run.planner_push(ChatMessage::user(user));

    let mut rounds = 0;
    let exit = loop {
        let mut halted = false;
        match run.planner_turn(&mut rounds) {
            Ok(()) => {}
            Err(Stop::Budget) => halted = true,
            Err(Stop::Fatal(e)) => {
                tracing::warn!(challenge = %ctx.spec.name, error = %e, "episode failed");
                run.error = Some(e);
            }
        }
        let conditions = ExitConditions {
            solved: run.correct_submission || run.flag_seen(),
            gave_up: run.gave_up,
            budget_exhausted: halted || ctx.gateway.budget().is_exhausted(),
            rounds_exhausted: rounds >= ctx.cfg.max_rounds,
            error: run.error.is_some(),
        };
        if let Some(exit) = classify_exit(conditions) {
            break exit;
        }
    };

    let flag_found = (exit == ExitStatus::Solved).then(|| ctx.spec.flag.clone());
    let cost = ctx.gateway.accrued();
    run.transcript.push(TranscriptEntry::Exit {
        status: exit,
        rounds,
        cost,
        flag: flag_found.clone(),
        detail: run.error.clone(),
    });
    EpisodeResult {
        challenge: ctx.spec.name.clone(),
        exit,
        rounds,
        flag_found,
        cost,
        model_calls: ctx.gateway.call_count(),
        transcript: run.transcript,
        traces: run.traces,
        delegations: run.delegations,
        error: run.error,
    }
}
