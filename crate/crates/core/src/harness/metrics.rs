use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agents::ExitStatus;
use crate::challenge::Category;
use crate::retrieval::{EventKind, RetrievalTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub category: Category,
    pub exit: ExitStatus,
    pub solved: bool,
    pub dollar_cost: f64,
    pub rounds: usize,
    #[serde(default)]
    pub model_calls: usize,
    #[serde(default)]
    pub trace_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub total: usize,
    pub solved: usize,
}

impl Tally {
    pub fn pct_solved(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.solved as f64 / self.total as f64
        }
    }
}

/// Retrieval-loop rates in percent; `None` when the denominator is zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionStats {
    pub relevance_pass_rate: Option<f64>,
    pub hallucination_fail_rate: Option<f64>,
    pub solved_pass_rate: Option<f64>,
    /// Share of returned hints whose trace rewrote the query at least once.
    pub retry_contribution: Option<f64>,
    pub relevance_grades: usize,
    pub hallucination_grades: usize,
    pub solved_grades: usize,
    pub returns: usize,
}

fn pct(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

pub fn transition_stats(traces: &[RetrievalTrace]) -> TransitionStats {
    let (mut rel, mut rel_yes, mut hal, mut hal_no, mut sol, mut sol_yes, mut ret, mut ret_retry) = (0, 0, 0, 0, 0, 0, 0, 0);
    for t in traces {
        let mut rewritten = false;
        for e in &t.events {
            match e.kind {
                EventKind::GradeRelevance { verdict } => {
                    rel += 1;
                    rel_yes += usize::from(verdict);
                }
                EventKind::GradeHallucination { verdict } => {
                    hal += 1;
                    hal_no += usize::from(!verdict);
                }
                EventKind::GradeSolved { verdict } => {
                    sol += 1;
                    sol_yes += usize::from(verdict);
                }
                EventKind::Rewrite { .. } => rewritten = true,
                EventKind::ReturnAnswer => {
                    ret += 1;
                    ret_retry += usize::from(rewritten);
                }
                _ => {}
            }
        }
    }
    TransitionStats {
        relevance_pass_rate: pct(rel_yes, rel),
        hallucination_fail_rate: pct(hal_no, hal),
        solved_pass_rate: pct(sol_yes, sol),
        retry_contribution: pct(ret_retry, ret),
        relevance_grades: rel,
        hallucination_grades: hal,
        solved_grades: sol,
        returns: ret,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub overall: Tally,
    /// Percent solved, unrounded.
    pub pct_solved: f64,
    /// Sum of cost over every record.
    pub total_cost: f64,
    /// Total cost divided by solved count; `None` with nothing solved.
    pub cost_per_solved: Option<f64>,
    pub cost_per_attempt: Option<f64>,
    pub categories: BTreeMap<Category, Tally>,
    pub exits: BTreeMap<ExitStatus, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transitions: Option<TransitionStats>,
}

pub fn compute_metrics(records: &[RunRecord]) -> BenchmarkReport {
    let mut r = BenchmarkReport::default();
    for rec in records {
        r.overall.total += 1;
        r.overall.solved += usize::from(rec.solved);
        let cat = r.categories.entry(rec.category).or_default();
        cat.total += 1;
        cat.solved += usize::from(rec.solved);
        *r.exits.entry(rec.exit).or_default() += 1;
        r.total_cost += rec.dollar_cost;
    }
    r.pct_solved = r.overall.pct_solved();
    r.cost_per_solved = (r.overall.solved > 0).then(|| r.total_cost / r.overall.solved as f64);
    r.cost_per_attempt = (r.overall.total > 0).then(|| r.total_cost / r.overall.total as f64);
    r
}
