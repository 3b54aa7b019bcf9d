use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clock::{Clock, SystemClock};
use crate::llm_gateway::{Gateway, UsageRecord};

use super::grade::{generate_hint, grade_hallucination, grade_relevance, grade_solved, rewrite_query};
use super::strategies::{decompose_question, multi_query_retrieve, step_back_query};
use super::trace::{payload_digest, EventKind, RetrievalTrace, TraceEvent};
use super::{retrieve, HallucinationRetry, RetrievalConfig, RetrievalError, RetrievedUnit, Stores, UnitKey};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeHint {
    pub text: String,
    /// Units the hint was generated from.
    pub supporting_refs: Vec<UnitKey>,
    /// Query in effect when the hint was accepted.
    pub query_final: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalOutcome {
    pub hint: Option<KnowledgeHint>,
    pub trace: RetrievalTrace,
    /// Recursion depth `d` when the loop stopped.
    pub depth: usize,
    /// Loop passes taken.
    pub iterations: usize,
    /// Set when a gateway or store failure aborted the run.
    pub error: Option<String>,
}

pub struct RetrievalEngine {
    cfg: RetrievalConfig,
    stores: Arc<Stores>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for RetrievalEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RetrievalEngine")
            .field("cfg", &self.cfg)
            .field("stores", &self.stores)
            .finish_non_exhaustive()
    }
}

struct Recorder<'a> {
    trace: RetrievalTrace,
    clock: &'a dyn Clock,
}

impl Recorder<'_> {
    fn push(&mut self, kind: EventKind, payload: Option<&str>, usage: &[UsageRecord]) {
        let event = TraceEvent {
            seq: self.trace.events.len(),
            at_ms: self.clock.now_ms(),
            kind,
            digest: payload.map(payload_digest),
            prompt_tokens: usage.iter().map(|u| u.prompt_tokens).sum(),
            completion_tokens: usage.iter().map(|u| u.completion_tokens).sum(),
            cost: usage.iter().fold(0.0, |acc, u| acc + u.dollar_cost),
        };
        self.trace.events.push(event);
    }
}

impl RetrievalEngine {
    pub fn new(cfg: RetrievalConfig, stores: Arc<Stores>) -> Self {
        Self {
            cfg,
            stores,
            clock: Arc::new(SystemClock),
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn config(&self) -> &RetrievalConfig {
        &self.cfg
    }

    pub fn stores(&self) -> &Stores {
        &self.stores
    }

    /// Retrieval step including the optional step-back and multi-query strategies.
    fn retrieve_for(&self, q: &str, gateway: &Gateway) -> Result<(String, bool, Vec<RetrievedUnit>), RetrievalError> {
        let (query, step_back) = if self.cfg.step_back {
            (step_back_query(q, gateway), true)
        } else {
            (q.to_string(), false)
        };
        let units = if self.cfg.multi_query || self.cfg.rag_fusion {
            multi_query_retrieve(&query, self.cfg.multi_query_n, &self.cfg, &self.stores, gateway)?
        } else {
            retrieve(&query, &self.cfg, &self.stores, gateway)?
        };
        Ok((query, step_back, units))
    }

    /// Runs the loop for `q0` with trace id `trace_id`. Never fails: a hard
    /// failure ends the trace with `error give_empty` and no hint.
    pub fn run(&self, trace_id: &str, q0: &str, gateway: &Gateway) -> RetrievalOutcome {
        let mut rec = Recorder {
            trace: RetrievalTrace::new(trace_id),
            clock: self.clock.as_ref(),
        };
        let mut depth = 0;
        let mut iterations = 0;
        let result = self.run_loop(q0, gateway, &mut rec, &mut depth, &mut iterations);
        let (hint, error) = match result {
            Ok(Some(hint)) => {
                rec.push(EventKind::ReturnAnswer, Some(&hint.text), &[]);
                (Some(hint), None)
            }
            Ok(None) => {
                rec.push(EventKind::GiveEmpty, None, &[]);
                (None, None)
            }
            Err(e) => {
                let message = e.to_string();
                tracing::warn!(trace = trace_id, error = %message, "retrieval aborted");
                rec.push(EventKind::Error { message: message.clone() }, None, &[]);
                rec.push(EventKind::GiveEmpty, None, &[]);
                (None, Some(message))
            }
        };
        RetrievalOutcome {
            hint,
            trace: rec.trace,
            depth,
            iterations,
            error,
        }
    }

    fn run_loop(
        &self,
        q0: &str,
        gateway: &Gateway,
        rec: &mut Recorder<'_>,
        depth: &mut usize,
        iterations: &mut usize,
    ) -> Result<Option<KnowledgeHint>, RetrievalError> {
        let max_depth = self.cfg.max_depth;
        let cap = self.cfg.iteration_cap();
        let usage_since = |start: usize| gateway.usage()[start..].to_vec();

        let mut q = q0.to_string();
        let mut units: Vec<RetrievedUnit> = Vec::new();
        let mut need_retrieve = true;
        while *depth < max_depth && *iterations < cap {
            *iterations += 1;
            if need_retrieve {
                let start = gateway.call_count();
                let (query, step_back, got) = self.retrieve_for(&q, gateway)?;
                units = got;
                rec.push(
                    EventKind::Retrieve {
                        query: query.clone(),
                        units: units.iter().map(|u| u.key.to_string()).collect(),
                        step_back,
                    },
                    Some(&query),
                    &usage_since(start),
                );

                let rel = grade_relevance(&q, &units, gateway)?;
                rec.push(
                    EventKind::GradeRelevance {
                        verdict: rel.value.verdict,
                    },
                    Some(&rel.value.raw),
                    rel.usage.as_slice(),
                );
                if !rel.value.verdict {
                    q = self.rewrite(&q, gateway, rec)?;
                    continue;
                }
            }

            let a = generate_hint(&q, &units, gateway)?;
            rec.push(EventKind::Generate { chars: a.value.chars().count() }, Some(&a.value), a.usage.as_slice());
            let a = a.value;

            let hal = grade_hallucination(&a, &units, gateway)?;
            rec.push(
                EventKind::GradeHallucination {
                    verdict: hal.value.verdict,
                },
                Some(&hal.value.raw),
                hal.usage.as_slice(),
            );
            if !hal.value.verdict {
                need_retrieve = self.cfg.hallucination_retry == HallucinationRetry::Reretrieve;
                continue;
            }

            let solved = grade_solved(&a, &q, gateway)?;
            rec.push(
                EventKind::GradeSolved {
                    verdict: solved.value.verdict,
                },
                Some(&solved.value.raw),
                solved.usage.as_slice(),
            );
            if solved.value.verdict {
                return Ok(Some(KnowledgeHint {
                    text: a,
                    supporting_refs: units.iter().map(|u| u.key.clone()).collect(),
                    query_final: q,
                }));
            }
            q = self.rewrite(&q, gateway, rec)?;
            need_retrieve = true;
            *depth += 1;
        }
        Ok(None)
    }

    fn rewrite(&self, q: &str, gateway: &Gateway, rec: &mut Recorder<'_>) -> Result<String, RetrievalError> {
        let r = rewrite_query(q, gateway)?;
        rec.push(
            EventKind::Rewrite {
                from: q.to_string(),
                to: r.value.clone(),
            },
            Some(&r.value),
            r.usage.as_slice(),
        );
        Ok(r.value)
    }

    /// Hint for `q` honoring the question-decomposition toggle. Returns the
    /// combined hint and every trace produced.
    pub fn hint_for(&self, trace_id: &str, q: &str, gateway: &Gateway) -> (Option<KnowledgeHint>, Vec<RetrievalTrace>) {
        if !self.cfg.question_decomposition {
            let out = self.run(trace_id, q, gateway);
            return (out.hint, vec![out.trace]);
        }
        let answers = decompose_question(trace_id, q, gateway, self);
        let traces = answers.iter().map(|a| a.trace.clone()).collect();
        let answered: Vec<_> = answers.iter().filter(|a| a.hint.is_some()).collect();
        if answered.is_empty() {
            return (None, traces);
        }
        let text = answers
            .iter()
            .map(|a| {
                format!(
                    "Sub-question: {}\nAnswer: {}",
                    a.question,
                    a.hint.as_ref().map(|h| h.text.as_str()).unwrap_or("")
                )
            })
            .collect::<Vec<_>>()
            .join("\n\n");
        let supporting_refs = answered
            .iter()
            .flat_map(|a| a.hint.as_ref().unwrap().supporting_refs.iter().cloned())
            .collect();
        (
            Some(KnowledgeHint {
                text,
                supporting_refs,
                query_final: q.to_string(),
            }),
            traces,
        )
    }
}
