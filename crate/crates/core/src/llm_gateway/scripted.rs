//! Deterministic backend returning pre-authored replies.
//!
//! Replies are keyed by the request's `role` and the number of calls already
//! made by that role. A script is plain JSON:
//!
//! ```json
//! {
//!   "planner": { "replies": [ { "tool_calls": [ { "name": "give_up", "arguments": {} } ] } ] },
//!   "relevance_grader": { "replies": [ { "content": "yes" } ], "repeat_last": true }
//! }
//! ```

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendResponse, ChatMessage, ChatRequest, ToolCall};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedToolCall {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub name: String,
    /// An object is serialized; a string is passed through verbatim, which
    /// lets scripts exercise malformed arguments.
    #[serde(default)]
    pub arguments: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "code")]
pub enum ScriptedFailure {
    Transport,
    Status(u16),
    Fatal,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedReply {
    #[serde(default)]
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ScriptedToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<ScriptedFailure>,
}

impl ScriptedReply {
    pub fn text(content: impl Into<String>) -> Self {
        Self {
            content: content.into(),
            ..Self::default()
        }
    }

    pub fn tool(name: impl Into<String>, arguments: serde_json::Value) -> Self {
        Self {
            tool_calls: vec![ScriptedToolCall {
                id: None,
                name: name.into(),
                arguments,
            }],
            ..Self::default()
        }
    }

    pub fn failure(kind: ScriptedFailure) -> Self {
        Self {
            fail: Some(kind),
            ..Self::default()
        }
    }

    pub fn with_tokens(mut self, prompt: u64, completion: u64) -> Self {
        self.prompt_tokens = Some(prompt);
        self.completion_tokens = Some(completion);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoleScript {
    pub replies: Vec<ScriptedReply>,
    /// Keep returning the final reply once the list is exhausted.
    #[serde(default)]
    pub repeat_last: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Script {
    pub roles: BTreeMap<String, RoleScript>,
}

impl Script {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn role(mut self, role: &str, replies: impl IntoIterator<Item = ScriptedReply>) -> Self {
        self.roles.entry(role.to_string()).or_default().replies.extend(replies);
        self
    }

    pub fn repeating(mut self, role: &str, replies: impl IntoIterator<Item = ScriptedReply>) -> Self {
        let entry = self.roles.entry(role.to_string()).or_default();
        entry.replies.extend(replies);
        entry.repeat_last = true;
        self
    }

    /// Shorthand for roles whose replies are plain text.
    pub fn texts<S: Into<String>>(self, role: &str, texts: impl IntoIterator<Item = S>) -> Self {
        self.role(role, texts.into_iter().map(ScriptedReply::text))
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Script(format!("cannot read script {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| BackendError::Script(format!("invalid script {}: {e}", path.display())))
    }
}

/// Rough token estimate (4 characters per token, at least one).
pub fn estimate_tokens(text_len: usize) -> u64 {
    (text_len as u64).div_ceil(4).max(1)
}

#[derive(Debug)]
pub struct ScriptedBackend {
    script: Script,
    turns: Mutex<HashMap<String, usize>>,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        Self {
            script,
            turns: Mutex::new(HashMap::new()),
        }
    }

    /// Number of replies served so far for `role`.
    pub fn turns(&self, role: &str) -> usize {
        self.turns.lock().expect("turns poisoned").get(role).copied().unwrap_or(0)
    }
}

impl Backend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &ChatRequest) -> Result<BackendResponse, BackendError> {
        let turn = {
            let mut turns = self.turns.lock().expect("turns poisoned");
            let t = turns.entry(request.role.clone()).or_insert(0);
            *t += 1;
            *t - 1
        };
        let script = self
            .script
            .roles
            .get(&request.role)
            .ok_or_else(|| BackendError::Script(format!("no script for role `{}`", request.role)))?;
        let reply = match script.replies.get(turn) {
            Some(r) => r,
            None if script.repeat_last && !script.replies.is_empty() => script.replies.last().unwrap(),
            None => {
                return Err(BackendError::Script(format!(
                    "script for role `{}` exhausted at turn {turn}",
                    request.role
                )))
            }
        };

        match reply.fail {
            Some(ScriptedFailure::Transport) => return Err(BackendError::Transport("scripted transport failure".into())),
            Some(ScriptedFailure::Status(code)) => {
                return Err(BackendError::Status {
                    code,
                    body: "scripted failure".into(),
                })
            }
            Some(ScriptedFailure::Fatal) => return Err(BackendError::Script("scripted fatal failure".into())),
            None => {}
        }

        let tool_calls: Vec<ToolCall> = reply
            .tool_calls
            .iter()
            .enumerate()
            .map(|(i, c)| ToolCall {
                id: c.id.clone().unwrap_or_else(|| format!("call_{}_{}_{}", request.role, turn, i)),
                name: c.name.clone(),
                arguments: match &c.arguments {
                    serde_json::Value::String(raw) => raw.clone(),
                    serde_json::Value::Null => "{}".to_string(),
                    other => other.to_string(),
                },
            })
            .collect();

        let prompt_len: usize = request.messages.iter().map(|m| m.content.len()).sum();
        let completion_len = reply.content.len() + tool_calls.iter().map(|c| c.name.len() + c.arguments.len()).sum::<usize>();
        let mut message = ChatMessage::assistant(reply.content.clone());
        if !tool_calls.is_empty() {
            message.tool_calls = Some(tool_calls);
        }
        Ok(BackendResponse {
            message,
            prompt_tokens: reply.prompt_tokens.unwrap_or_else(|| estimate_tokens(prompt_len)),
            completion_tokens: reply.completion_tokens.unwrap_or_else(|| estimate_tokens(completion_len)),
        })
    }
}
