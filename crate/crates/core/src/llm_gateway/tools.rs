//! Tool-call argument parsing.

use serde_json::{Map, Value};
use thiserror::Error;

use super::ToolCall;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolCallError {
    #[error("tool call `{name}` has malformed arguments: {reason}")]
    MalformedArguments { name: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedToolCall {
    pub id: String,
    pub name: String,
    pub arguments: Map<String, Value>,
}

impl ParsedToolCall {
    pub fn str_arg(&self, key: &str) -> Option<&str> {
        self.arguments.get(key).and_then(Value::as_str)
    }
}

/// Parses each call's arguments as a JSON object. Empty arguments count as `{}`.
/// Each call is parsed independently so one bad call does not hide the others.
pub fn parse_tool_calls(calls: &[ToolCall]) -> Vec<Result<ParsedToolCall, ToolCallError>> {
    calls.iter().map(parse_one).collect()
}

fn parse_one(call: &ToolCall) -> Result<ParsedToolCall, ToolCallError> {
    let malformed = |reason: String| ToolCallError::MalformedArguments {
        name: call.name.clone(),
        reason,
    };
    let raw = call.arguments.trim();
    let value: Value = if raw.is_empty() {
        Value::Object(Map::new())
    } else {
        serde_json::from_str(raw).map_err(|e| malformed(e.to_string()))?
    };
    match value {
        Value::Object(arguments) => Ok(ParsedToolCall {
            id: call.id.clone(),
            name: call.name.clone(),
            arguments,
        }),
        other => Err(malformed(format!("expected an object, got {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &str) -> ToolCall {
        ToolCall {
            id: "c".into(),
            name: "run_command".into(),
            arguments: args.into(),
        }
    }

    #[test]
    fn parses_objects_and_flags_garbage() {
        let out = parse_tool_calls(&[call(r#"{"command":"ls"}"#), call("{not json"), call("[1]"), call("")]);
        assert_eq!(out[0].as_ref().unwrap().str_arg("command"), Some("ls"));
        assert!(out[1].is_err());
        assert!(out[2].is_err());
        assert!(out[3].as_ref().unwrap().arguments.is_empty());
    }
}
