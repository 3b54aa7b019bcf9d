//! Chat-completion gateway.
//!
//! Every model call in the system goes through [`Gateway::complete`], which
//! checks the episode budget before dispatch, retries transient backend
//! failures, prices the response and appends exactly one [`UsageRecord`] per
//! dispatched completion.
//!
//! Backends:
//! - [`ScriptedBackend`]: pre-authored replies keyed by `(role, turn)`.
//! - [`RecordingBackend`] / [`ReplayBackend`]: cassette capture and replay.
//! - [`HttpBackend`]: chat-completions over HTTP.

mod budget;
mod cassette;
mod http;
mod scripted;
mod tools;

use std::fmt;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use budget::{enforce_budget, Budget, BudgetDecision, ModelPrice, PriceTable};
pub use cassette::{
    read_cassette, request_digest, write_cassette, CassetteEntry, RecordingBackend, ReplayBackend, ReplayError,
};
pub use http::{parse_wire_response, to_wire_request, HttpBackend, HttpEmbedder, DEFAULT_API_KEY_ENV};
pub use scripted::{estimate_tokens, RoleScript, Script, ScriptedBackend, ScriptedFailure, ScriptedReply, ScriptedToolCall};
pub use tools::{parse_tool_calls, ParsedToolCall, ToolCallError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    /// Serialized JSON object, exactly as the model produced it.
    pub arguments: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_calls: Option<Vec<ToolCall>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    fn plain(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            tool_calls: None,
            tool_call_id: None,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, content)
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            role: Role::Tool,
            content: content.into(),
            tool_calls: None,
            tool_call_id: Some(call_id.into()),
        }
    }

    pub fn tool_calls(&self) -> &[ToolCall] {
        self.tool_calls.as_deref().unwrap_or(&[])
    }

    /// Tool messages must name the call they answer.
    pub fn is_well_formed(&self) -> bool {
        match self.role {
            Role::Tool => self.tool_call_id.is_some(),
            Role::Assistant => true,
            _ => self.tool_calls.is_none(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    /// JSON schema of the arguments object.
    pub parameters: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    /// Calling component, e.g. `planner` or `relevance_grader`.
    pub role: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default)]
    pub tools: Vec<ToolSchema>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub message: ChatMessage,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("script error: {0}")]
    Script(String),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

impl BackendError {
    /// Transport failures, 429 and 5xx are retried; everything else is final.
    pub fn is_retriable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { code, .. } => *code == 429 || (500..600).contains(code),
            _ => false,
        }
    }
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<BackendResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &ChatRequest) -> Result<BackendResponse, BackendError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub seq: usize,
    pub role: String,
    pub model: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub dollar_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub message: ChatMessage,
    pub usage: UsageRecord,
}

#[derive(Debug, Clone, Error)]
pub enum GatewayError {
    /// Budget exhausted before dispatch. Not a fault: the episode ends as MaxCost.
    #[error("budget exhausted: accrued ${accrued:.4} of ${limit:.4}")]
    BudgetHalt { accrued: f64, limit: f64 },
    #[error("backend failed after {attempts} attempt(s): {source}")]
    Backend {
        attempts: u32,
        #[source]
        source: BackendError,
    },
}

impl GatewayError {
    pub fn is_budget_halt(&self) -> bool {
        matches!(self, GatewayError::BudgetHalt { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub multiplier: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
            multiplier: 2,
        }
    }
}

impl RetryPolicy {
    pub fn no_backoff() -> Self {
        Self {
            initial_backoff: Duration::ZERO,
            ..Self::default()
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        self.initial_backoff * self.multiplier.saturating_pow(attempt.saturating_sub(1))
    }
}

#[derive(Debug, Default)]
struct Ledger {
    budget: Budget,
    records: Vec<UsageRecord>,
}

/// Per-episode entry point for model calls. Safe to share by reference.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    model: String,
    prices: PriceTable,
    retry: RetryPolicy,
    ledger: Mutex<Ledger>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.name())
            .field("model", &self.model)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, model: impl Into<String>, prices: PriceTable, budget_limit: f64) -> Self {
        Self {
            backend,
            model: model.into(),
            prices,
            retry: RetryPolicy::default(),
            ledger: Mutex::new(Ledger {
                budget: Budget::new(budget_limit),
                records: Vec::new(),
            }),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn budget(&self) -> Budget {
        self.ledger.lock().expect("ledger poisoned").budget
    }

    pub fn accrued(&self) -> f64 {
        self.budget().accrued
    }

    pub fn usage(&self) -> Vec<UsageRecord> {
        self.ledger.lock().expect("ledger poisoned").records.clone()
    }

    pub fn call_count(&self) -> usize {
        self.ledger.lock().expect("ledger poisoned").records.len()
    }

    pub fn complete(&self, role: &str, messages: Vec<ChatMessage>, tools: Vec<ToolSchema>) -> Result<Completion, GatewayError> {
        let request = ChatRequest {
            model: self.model.clone(),
            role: role.to_string(),
            messages,
            tools,
        };
        self.complete_request(&request)
    }

    /// Single-message convenience for prompt-style calls.
    pub fn prompt(&self, role: &str, prompt: impl Into<String>) -> Result<String, GatewayError> {
        Ok(self.complete(role, vec![ChatMessage::user(prompt)], Vec::new())?.message.content)
    }

    pub fn complete_request(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        {
            let ledger = self.ledger.lock().expect("ledger poisoned");
            if enforce_budget(&ledger.budget) == BudgetDecision::Halt {
                return Err(GatewayError::BudgetHalt {
                    accrued: ledger.budget.accrued,
                    limit: ledger.budget.limit,
                });
            }
        }

        let mut attempt = 0;
        let response = loop {
            attempt += 1;
            match self.backend.complete(request) {
                Ok(r) => break r,
                Err(e) if e.is_retriable() && attempt < self.retry.max_attempts => {
                    let wait = self.retry.backoff(attempt);
                    tracing::warn!(role = %request.role, attempt, error = %e, ?wait, "retrying model call");
                    if !wait.is_zero() {
                        thread::sleep(wait);
                    }
                }
                Err(source) => {
                    return Err(GatewayError::Backend {
                        attempts: attempt,
                        source,
                    })
                }
            }
        };

        let dollar_cost = self
            .prices
            .cost(&request.model, response.prompt_tokens, response.completion_tokens);
        let mut ledger = self.ledger.lock().expect("ledger poisoned");
        ledger.budget.accrue(dollar_cost);
        let usage = UsageRecord {
            seq: ledger.records.len(),
            role: request.role.clone(),
            model: request.model.clone(),
            prompt_tokens: response.prompt_tokens,
            completion_tokens: response.completion_tokens,
            dollar_cost,
        };
        ledger.records.push(usage.clone());
        Ok(Completion {
            message: response.message,
            usage,
        })
    }
}
