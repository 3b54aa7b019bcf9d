//! OpenAI-compatible chat-completions and embeddings over HTTP.

use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendError, BackendResponse, ChatMessage, ChatRequest, Role, ToolCall};
use crate::vector_index::{EmbedError, Embedder, EmbeddingVector};

/// Environment variable holding the bearer token.
pub const DEFAULT_API_KEY_ENV: &str = "KBAGENT_API_KEY";

/// Converts a request into the JSON body expected by `/chat/completions`.
pub fn to_wire_request(request: &ChatRequest) -> Value {
    let messages: Vec<Value> = request
        .messages
        .iter()
        .map(|m| {
            let mut v = json!({ "role": m.role.to_string(), "content": m.content });
            if let Some(calls) = &m.tool_calls {
                v["tool_calls"] = calls
                    .iter()
                    .map(|c| json!({ "id": c.id, "type": "function", "function": { "name": c.name, "arguments": c.arguments } }))
                    .collect();
            }
            if let Some(id) = &m.tool_call_id {
                v["tool_call_id"] = json!(id);
            }
            v
        })
        .collect();
    let mut body = json!({ "model": request.model, "messages": messages });
    if !request.tools.is_empty() {
        body["tools"] = request
            .tools
            .iter()
            .map(|t| json!({ "type": "function", "function": { "name": t.name, "description": t.description, "parameters": t.parameters } }))
            .collect();
    }
    body
}

pub fn parse_wire_response(body: &Value) -> Result<BackendResponse, BackendError> {
    let protocol = |what: &str| BackendError::Protocol(what.to_string());
    let message = body
        .pointer("/choices/0/message")
        .ok_or_else(|| protocol("missing choices[0].message"))?;
    let content = message.get("content").and_then(Value::as_str).unwrap_or_default().to_string();
    let mut calls = Vec::new();
    if let Some(list) = message.get("tool_calls").and_then(Value::as_array) {
        for c in list {
            let id = c.get("id").and_then(Value::as_str).ok_or_else(|| protocol("tool call without id"))?;
            let name = c
                .pointer("/function/name")
                .and_then(Value::as_str)
                .ok_or_else(|| protocol("tool call without function name"))?;
            let arguments = match c.pointer("/function/arguments") {
                Some(Value::String(s)) => s.clone(),
                Some(other) => other.to_string(),
                None => "{}".to_string(),
            };
            calls.push(ToolCall {
                id: id.to_string(),
                name: name.to_string(),
                arguments,
            });
        }
    }
    let tokens = |key: &str| body.pointer(&format!("/usage/{key}")).and_then(Value::as_u64).unwrap_or(0);
    let mut msg = ChatMessage::assistant(content);
    if !calls.is_empty() {
        msg.tool_calls = Some(calls);
    }
    debug_assert_eq!(msg.role, Role::Assistant);
    Ok(BackendResponse {
        message: msg,
        prompt_tokens: tokens("prompt_tokens"),
        completion_tokens: tokens("completion_tokens"),
    })
}

fn client(timeout: Duration) -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .expect("http client builds with static configuration")
}

fn post_json(
    client: &reqwest::blocking::Client,
    url: &str,
    api_key: Option<&str>,
    body: &Value,
) -> Result<Value, BackendError> {
    let mut req = client.post(url).json(body);
    if let Some(key) = api_key {
        req = req.bearer_auth(key);
    }
    let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
    let status = resp.status();
    let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
    if !status.is_success() {
        return Err(BackendError::Status {
            code: status.as_u16(),
            body: text,
        });
    }
    serde_json::from_str(&text).map_err(|e| BackendError::Protocol(format!("response is not JSON: {e}")))
}

pub struct HttpBackend {
    base_url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            client: client(Duration::from_secs(300)),
        }
    }

    /// Reads the key from [`DEFAULT_API_KEY_ENV`] if set.
    pub fn from_env(base_url: impl Into<String>) -> Self {
        Self::new(base_url, std::env::var(DEFAULT_API_KEY_ENV).ok())
    }
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, request: &ChatRequest) -> Result<BackendResponse, BackendError> {
        let url = format!("{}/chat/completions", self.base_url);
        let body = post_json(&self.client, &url, self.api_key.as_deref(), &to_wire_request(request))?;
        parse_wire_response(&body)
    }
}

pub struct HttpEmbedder {
    base_url: String,
    api_key: Option<String>,
    model: String,
    dims: usize,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, model: impl Into<String>, dims: usize) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            model: model.into(),
            dims,
            client: client(Duration::from_secs(60)),
        }
    }
}

impl Embedder for HttpEmbedder {
    fn tag(&self) -> String {
        format!("http:{}:{}", self.model, self.dims)
    }

    fn dims(&self) -> usize {
        self.dims
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let url = format!("{}/embeddings", self.base_url);
        let body = json!({ "model": self.model, "input": text });
        let resp = post_json(&self.client, &url, self.api_key.as_deref(), &body).map_err(|e| {
            if e.is_retriable() {
                EmbedError::Retriable(e.to_string())
            } else {
                EmbedError::Fatal(e.to_string())
            }
        })?;
        let values: Vec<f64> = resp
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbedError::Fatal("missing data[0].embedding".into()))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| EmbedError::Fatal("non-numeric embedding component".into())))
            .collect::<Result<_, _>>()?;
        if values.len() != self.dims {
            return Err(EmbedError::Fatal(format!(
                "expected {} dims, backend returned {}",
                self.dims,
                values.len()
            )));
        }
        Ok(EmbeddingVector::normalized(values)?)
    }
}
