//! Turns long agent context into a task, a search query and keywords.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::llm_gateway::{Gateway, GatewayError};
use crate::prompts;
use crate::vector_index::tokenize;

pub const DECOMPOSER_ROLE: &str = "decomposer";

/// Characters of raw context kept as the fallback search query.
const FALLBACK_QUERY_CHARS: usize = 512;
const MIN_KEYWORDS: usize = 3;
const MAX_KEYWORDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompositionResult {
    pub task_description: String,
    pub search_query: String,
    pub keywords: Vec<String>,
    /// True when the model output could not be parsed.
    #[serde(default)]
    pub fallback: bool,
}

/// Keeps at most 5 keywords; pads up to 3 with search-query tokens not
/// already present.
pub fn normalize_keywords(mut keywords: Vec<String>, search_query: &str) -> Vec<String> {
    keywords = keywords
        .into_iter()
        .map(|k| k.trim().to_string())
        .filter(|k| !k.is_empty())
        .collect();
    keywords.truncate(MAX_KEYWORDS);
    for token in tokenize(search_query) {
        if keywords.len() >= MIN_KEYWORDS {
            break;
        }
        if !keywords.iter().any(|k| k.eq_ignore_ascii_case(&token)) {
            keywords.push(token);
        }
    }
    keywords
}

/// Parses the outermost `{...}` of `output` (tolerating code fences and
/// surrounding prose).
pub fn parse_decomposition(output: &str) -> Option<DecompositionResult> {
    let start = output.find('{')?;
    let end = output.rfind('}')?;
    if end < start {
        return None;
    }
    let v: Value = serde_json::from_str(&output[start..=end]).ok()?;
    let text = |key: &str| {
        v.get(key)
            .and_then(Value::as_str)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
    };
    let task_description = text("task_description")?;
    let search_query = text("search_query")?;
    let keywords = match v.get("keywords")? {
        Value::Array(items) => items.iter().filter_map(Value::as_str).map(str::to_string).collect(),
        Value::String(s) => s.split(',').map(str::to_string).collect(),
        _ => return None,
    };
    Some(DecompositionResult {
        keywords: normalize_keywords(keywords, &search_query),
        task_description,
        search_query,
        fallback: false,
    })
}

/// Asks the decomposer, retrying once on unparseable output, then falls back
/// to the default task with the raw context as query.
pub fn decompose_context(context: &str, gateway: &Gateway) -> Result<DecompositionResult, GatewayError> {
    let prompt = prompts::decomposition(context);
    for attempt in 1..=2 {
        let output = gateway.prompt(DECOMPOSER_ROLE, prompt.clone())?;
        if let Some(result) = parse_decomposition(&output) {
            return Ok(result);
        }
        tracing::warn!(attempt, "decomposition output did not parse");
    }
    Ok(DecompositionResult {
        task_description: prompts::DEFAULT_TASK.to_string(),
        search_query: context.chars().take(FALLBACK_QUERY_CHARS).collect(),
        keywords: Vec::new(),
        fallback: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fenced_json() {
        let out = "```json\n{\"task_description\": \"Recover key\", \"search_query\": \"rc4 keystream reuse\", \"keywords\": [\"rc4\", \"xor\", \"keystream\"]}\n```";
        let r = parse_decomposition(out).unwrap();
        assert_eq!(r.task_description, "Recover key");
        assert_eq!(r.keywords, vec!["rc4", "xor", "keystream"]);
    }

    #[test]
    fn keyword_count_is_clamped() {
        let six: Vec<String> = (1..=6).map(|i| format!("k{i}")).collect();
        assert_eq!(normalize_keywords(six, "q").len(), 5);
        assert_eq!(normalize_keywords(vec!["rc4".into()], "RC4 nonce reuse"), vec!["rc4", "nonce", "reuse"]);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_decomposition("no json here").is_none());
        assert!(parse_decomposition("{\"task_description\": \"x\"}").is_none());
        assert!(parse_decomposition("} {").is_none());
    }
}
