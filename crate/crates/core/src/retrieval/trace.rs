//! Retrieval traces and their grammar.
//!
//! With `r` = retrieve, `y`/`n` = relevance verdict, `g` = generate,
//! `h+`/`h-` = hallucination verdict (grounded / not), `s+`/`s-` = solved
//! verdict, `w` = rewrite, `a` = return_answer, `e` = give_empty:
//!
//! ```text
//! pass  := r n w | r y (g h-)* g h+ s- w | r y (g h-)+
//! trace := pass* (r y (g h-)* g h+ s+ a | e)
//! ```
//!
//! A pass ending in `h-` may be followed directly by `g` (regenerate with the
//! same context) instead of starting a new pass. A gateway failure may cut a
//! trace short at any point: the valid prefix is then followed by `error e`.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    Retrieve {
        query: String,
        units: Vec<String>,
        #[serde(default)]
        step_back: bool,
    },
    GradeRelevance {
        verdict: bool,
    },
    Rewrite {
        from: String,
        to: String,
    },
    Generate {
        chars: usize,
    },
    GradeHallucination {
        verdict: bool,
    },
    GradeSolved {
        verdict: bool,
    },
    ReturnAnswer,
    GiveEmpty,
    Error {
        message: String,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Retrieve { .. } => "retrieve",
            EventKind::GradeRelevance { .. } => "grade_relevance",
            EventKind::Rewrite { .. } => "rewrite",
            EventKind::Generate { .. } => "generate",
            EventKind::GradeHallucination { .. } => "grade_hallucination",
            EventKind::GradeSolved { .. } => "grade_solved",
            EventKind::ReturnAnswer => "return_answer",
            EventKind::GiveEmpty => "give_empty",
            EventKind::Error { .. } => "error",
        }
    }

    /// Compact token used in tests and logs, e.g. `rel_yes`.
    pub fn token(&self) -> &'static str {
        match self {
            EventKind::Retrieve { .. } => "retrieve",
            EventKind::GradeRelevance { verdict: true } => "rel_yes",
            EventKind::GradeRelevance { verdict: false } => "rel_no",
            EventKind::Rewrite { .. } => "rewrite",
            EventKind::Generate { .. } => "generate",
            EventKind::GradeHallucination { verdict: true } => "hal_yes",
            EventKind::GradeHallucination { verdict: false } => "hal_no",
            EventKind::GradeSolved { verdict: true } => "solved_yes",
            EventKind::GradeSolved { verdict: false } => "solved_no",
            EventKind::ReturnAnswer => "return_answer",
            EventKind::GiveEmpty => "give_empty",
            EventKind::Error { .. } => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: usize,
    pub at_ms: u64,
    #[serde(flatten)]
    pub kind: EventKind,
    /// SHA-256 of the event's main text payload (query, model output, hint).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
    #[serde(default)]
    pub cost: f64,
}

pub fn payload_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTrace {
    pub id: String,
    pub events: Vec<TraceEvent>,
}

impl RetrievalTrace {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            events: Vec::new(),
        }
    }

    pub fn tokens(&self) -> Vec<&'static str> {
        self.events.iter().map(|e| e.kind.token()).collect()
    }

    pub fn count(&self, pred: impl Fn(&EventKind) -> bool) -> usize {
        self.events.iter().filter(|e| pred(&e.kind)).count()
    }

    pub fn total_cost(&self) -> f64 {
        self.events.iter().fold(0.0, |acc, e| acc + e.cost)
    }

    pub fn returned(&self) -> bool {
        matches!(self.events.last().map(|e| &e.kind), Some(EventKind::ReturnAnswer))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("trace event {index} (`{token}`) is not allowed here; expected one of: {expected}")]
pub struct TraceGrammarError {
    pub index: usize,
    pub token: String,
    pub expected: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum St {
    /// Start of a pass.
    Pass,
    Retrieved,
    RelNo,
    RelYes,
    Generated,
    HalNo,
    HalYes,
    SolvedNo,
    SolvedYes,
    Failed,
    Done,
}

impl St {
    fn expected(self) -> &'static str {
        match self {
            St::Pass => "retrieve, give_empty, error",
            St::Retrieved => "grade_relevance, error",
            St::RelNo | St::SolvedNo => "rewrite, error",
            St::RelYes => "generate, error",
            St::Generated => "grade_hallucination, error",
            St::HalNo => "generate, retrieve, give_empty, error",
            St::HalYes => "grade_solved, error",
            St::SolvedYes => "return_answer, error",
            St::Failed => "give_empty",
            St::Done => "end of trace",
        }
    }
}

/// Checks `tokens` (see [`EventKind::token`]) against the trace grammar.
pub fn validate_tokens(tokens: &[&str]) -> Result<(), TraceGrammarError> {
    let mut st = St::Pass;
    for (index, &tok) in tokens.iter().enumerate() {
        let next = match (st, tok) {
            (St::Failed, "give_empty") => Some(St::Done),
            (St::Done, _) | (St::Failed, _) => None,
            (_, "error") => Some(St::Failed),
            (St::Pass | St::HalNo, "retrieve") => Some(St::Retrieved),
            (St::Pass | St::HalNo, "give_empty") => Some(St::Done),
            (St::Retrieved, "rel_yes") => Some(St::RelYes),
            (St::Retrieved, "rel_no") => Some(St::RelNo),
            (St::RelNo | St::SolvedNo, "rewrite") => Some(St::Pass),
            (St::RelYes | St::HalNo, "generate") => Some(St::Generated),
            (St::Generated, "hal_yes") => Some(St::HalYes),
            (St::Generated, "hal_no") => Some(St::HalNo),
            (St::HalYes, "solved_yes") => Some(St::SolvedYes),
            (St::HalYes, "solved_no") => Some(St::SolvedNo),
            (St::SolvedYes, "return_answer") => Some(St::Done),
            _ => None,
        };
        st = next.ok_or_else(|| TraceGrammarError {
            index,
            token: tok.to_string(),
            expected: st.expected().to_string(),
        })?;
    }
    if st == St::Done {
        Ok(())
    } else {
        Err(TraceGrammarError {
            index: tokens.len(),
            token: "<end>".into(),
            expected: st.expected().to_string(),
        })
    }
}

pub fn validate_trace(trace: &RetrievalTrace) -> Result<(), TraceGrammarError> {
    validate_tokens(&trace.tokens())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TraceLine {
    trace: String,
    #[serde(flatten)]
    event: TraceEvent,
}

/// One JSON object per event, each tagged with its trace id.
pub fn write_traces_jsonl<W: Write>(traces: &[RetrievalTrace], mut out: W) -> io::Result<()> {
    for t in traces {
        for e in &t.events {
            let line = TraceLine {
                trace: t.id.clone(),
                event: e.clone(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()
}

/// Inverse of [`write_traces_jsonl`]; events are regrouped by consecutive trace id.
pub fn read_traces_jsonl<R: BufRead>(input: R) -> io::Result<Vec<RetrievalTrace>> {
    let mut traces: Vec<RetrievalTrace> = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TraceLine =
            serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        match traces.last_mut() {
            Some(t) if t.id == parsed.trace => t.events.push(parsed.event),
            _ => traces.push(RetrievalTrace {
                id: parsed.trace,
                events: vec![parsed.event],
            }),
        }
    }
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ok(s: &str) -> bool {
        validate_tokens(&s.split_whitespace().collect::<Vec<_>>()).is_ok()
    }

    #[test]
    fn accepts_grammar_members() {
        assert!(ok("retrieve rel_yes generate hal_yes solved_yes return_answer"));
        assert!(ok("retrieve rel_no rewrite retrieve rel_no rewrite give_empty"));
        assert!(ok("retrieve rel_yes generate hal_no generate hal_yes solved_yes return_answer"));
        assert!(ok("retrieve rel_yes generate hal_no retrieve rel_yes generate hal_yes solved_yes return_answer"));
        assert!(ok("retrieve rel_yes generate hal_yes solved_no rewrite give_empty"));
        assert!(ok("retrieve rel_yes generate hal_no give_empty"));
        assert!(ok("give_empty"));
        assert!(ok("retrieve error give_empty"));
        assert!(ok("error give_empty"));
    }

    #[test]
    fn rejects_non_members() {
        assert!(!ok(""));
        assert!(!ok("retrieve rel_no generate hal_yes solved_yes return_answer"));
        assert!(!ok("retrieve rel_yes generate hal_no solved_yes return_answer"));
        assert!(!ok("retrieve rel_yes generate hal_yes solved_yes"));
        assert!(!ok("retrieve rel_yes generate hal_yes solved_yes return_answer give_empty"));
        assert!(!ok("retrieve rel_no rewrite"));
        assert!(!ok("retrieve error"));
        assert!(!ok("retrieve rel_yes generate hal_yes solved_no give_empty"));
    }

    #[test]
    fn jsonl_round_trip() {
        let mut t = RetrievalTrace::new("t1");
        t.events.push(TraceEvent {
            seq: 0,
            at_ms: 5,
            kind: EventKind::GradeRelevance { verdict: true },
            digest: Some(payload_digest("yes")),
            prompt_tokens: 3,
            completion_tokens: 1,
            cost: 0.25,
        });
        let mut u = RetrievalTrace::new("t2");
        u.events.push(TraceEvent {
            seq: 0,
            at_ms: 6,
            kind: EventKind::GiveEmpty,
            digest: None,
            prompt_tokens: 0,
            completion_tokens: 0,
            cost: 0.0,
        });
        let mut buf = Vec::new();
        write_traces_jsonl(&[t.clone(), u.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().next().unwrap().contains("\"event\":\"grade_relevance\""));
        assert_eq!(read_traces_jsonl(&buf[..]).unwrap(), vec![t, u]);
    }
}
