use serde::{Deserialize, Serialize};

use crate::llm_gateway::{ChatMessage, Gateway, GatewayError, UsageRecord};
use crate::prompts;

use super::{render_context, RetrievalError, RetrievedUnit};

pub const RELEVANCE_ROLE: &str = "relevance_grader";
pub const HALLUCINATION_ROLE: &str = "hallucination_grader";
pub const SOLVED_ROLE: &str = "solved_grader";
pub const GENERATOR_ROLE: &str = "rag_generator";
pub const REWRITER_ROLE: &str = "rewriter";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradeKind {
    Relevance,
    Hallucination,
    Solved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeDecision {
    pub kind: GradeKind,
    pub verdict: bool,
    pub raw: String,
}

impl GradeDecision {
    fn parse(kind: GradeKind, raw: String) -> Self {
        Self {
            kind,
            verdict: binary_parse(&raw),
            raw,
        }
    }
}

/// A step result plus the usage of the model call that produced it, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Graded<T> {
    pub value: T,
    pub usage: Option<UsageRecord>,
}

impl<T> Graded<T> {
    fn free(value: T) -> Self {
        Self { value, usage: None }
    }
}

/// Lowercase, drop punctuation, trim; true iff the result starts with "yes".
pub fn binary_parse(raw: &str) -> bool {
    let cleaned: String = raw
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .to_lowercase();
    cleaned.trim().starts_with("yes")
}

fn ask(gateway: &Gateway, role: &str, system: &str, user: String) -> Result<(String, UsageRecord), GatewayError> {
    let c = gateway.complete(role, vec![ChatMessage::system(system), ChatMessage::user(user)], Vec::new())?;
    Ok((c.message.content, c.usage))
}

/// One verdict over the concatenated context. No units means not relevant,
/// without a model call.
pub fn grade_relevance(q: &str, units: &[RetrievedUnit], gateway: &Gateway) -> Result<Graded<GradeDecision>, GatewayError> {
    if units.is_empty() {
        return Ok(Graded::free(GradeDecision {
            kind: GradeKind::Relevance,
            verdict: false,
            raw: String::new(),
        }));
    }
    let (raw, usage) = ask(
        gateway,
        RELEVANCE_ROLE,
        prompts::RELEVANCE_GRADER_SYSTEM,
        prompts::relevance_user(q, &render_context(units)),
    )?;
    Ok(Graded {
        value: GradeDecision::parse(GradeKind::Relevance, raw),
        usage: Some(usage),
    })
}

pub fn generate_hint(q: &str, units: &[RetrievedUnit], gateway: &Gateway) -> Result<Graded<String>, RetrievalError> {
    if units.is_empty() {
        return Err(RetrievalError::Precondition("generate_hint needs retrieved context".into()));
    }
    let c = gateway.complete(
        GENERATOR_ROLE,
        vec![ChatMessage::user(prompts::rag(q, &render_context(units)))],
        Vec::new(),
    )?;
    Ok(Graded {
        value: c.message.content.trim().to_string(),
        usage: Some(c.usage),
    })
}

/// An empty generation is never grounded; no model call is made for it.
pub fn grade_hallucination(a: &str, units: &[RetrievedUnit], gateway: &Gateway) -> Result<Graded<GradeDecision>, GatewayError> {
    if a.trim().is_empty() {
        return Ok(Graded::free(GradeDecision {
            kind: GradeKind::Hallucination,
            verdict: false,
            raw: String::new(),
        }));
    }
    let (raw, usage) = ask(
        gateway,
        HALLUCINATION_ROLE,
        prompts::HALLUCINATION_GRADER_SYSTEM,
        prompts::hallucination_user(&render_context(units), a),
    )?;
    Ok(Graded {
        value: GradeDecision::parse(GradeKind::Hallucination, raw),
        usage: Some(usage),
    })
}

pub fn grade_solved(a: &str, q: &str, gateway: &Gateway) -> Result<Graded<GradeDecision>, RetrievalError> {
    if a.trim().is_empty() {
        return Err(RetrievalError::Precondition("grade_solved needs a non-empty answer".into()));
    }
    let (raw, usage) = ask(gateway, SOLVED_ROLE, prompts::SOLVED_GRADER_SYSTEM, prompts::solved_user(q, a))?;
    Ok(Graded {
        value: GradeDecision::parse(GradeKind::Solved, raw),
        usage: Some(usage),
    })
}

/// Blank model output keeps `q`.
pub fn rewrite_query(q: &str, gateway: &Gateway) -> Result<Graded<String>, GatewayError> {
    let (raw, usage) = ask(gateway, REWRITER_ROLE, prompts::REWRITER_SYSTEM, prompts::rewriter_user(q))?;
    let new = raw.trim();
    let value = if new.is_empty() {
        tracing::warn!(query = q, "rewriter returned nothing; keeping the query");
        q.to_string()
    } else {
        new.to_string()
    };
    Ok(Graded {
        value,
        usage: Some(usage),
    })
}
