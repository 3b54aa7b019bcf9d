use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Dollar limit and spend for one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub limit: f64,
    pub accrued: f64,
}

impl Default for Budget {
    fn default() -> Self {
        Self::new(f64::INFINITY)
    }
}

impl Budget {
    pub fn new(limit: f64) -> Self {
        Self { limit, accrued: 0.0 }
    }

    pub(crate) fn accrue(&mut self, cost: f64) {
        debug_assert!(cost >= 0.0);
        self.accrued += cost.max(0.0);
    }

    pub fn is_exhausted(&self) -> bool {
        self.accrued >= self.limit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetDecision {
    Proceed,
    Halt,
}

/// Check-before-call: a call is allowed while `accrued < limit`, so the final
/// spend can exceed the limit by at most one call.
pub fn enforce_budget(budget: &Budget) -> BudgetDecision {
    if budget.is_exhausted() {
        BudgetDecision::Halt
    } else {
        BudgetDecision::Proceed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    /// Dollars per 1000 prompt tokens.
    pub input_per_1k: f64,
    /// Dollars per 1000 completion tokens.
    pub output_per_1k: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable {
    models: BTreeMap<String, ModelPrice>,
}

impl PriceTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// List prices (USD per 1k tokens) for the models the agent was evaluated with.
    pub fn builtin() -> Self {
        let mut t = Self::new();
        for (model, input, output) in [
            ("claude-3-5-sonnet-20241022", 0.003, 0.015),
            ("claude-3-7-sonnet-20250219", 0.003, 0.015),
            ("claude-3-5-haiku-20241022", 0.0008, 0.004),
            ("gpt-4o-2024-11-20", 0.0025, 0.01),
            ("gpt-4.1-2025-04-14", 0.002, 0.008),
            ("deepseek-v3-0324", 0.00027, 0.0011),
        ] {
            t = t.with(model, input, output);
        }
        t
    }

    pub fn with(mut self, model: impl Into<String>, input_per_1k: f64, output_per_1k: f64) -> Self {
        self.models.insert(
            model.into(),
            ModelPrice {
                input_per_1k,
                output_per_1k,
            },
        );
        self
    }

    pub fn get(&self, model: &str) -> Option<ModelPrice> {
        self.models.get(model).copied()
    }

    /// Unknown models cost nothing, with a warning, so runs stay possible.
    pub fn cost(&self, model: &str, prompt_tokens: u64, completion_tokens: u64) -> f64 {
        match self.get(model) {
            Some(p) => {
                prompt_tokens as f64 * p.input_per_1k / 1000.0 + completion_tokens as f64 * p.output_per_1k / 1000.0
            }
            None => {
                tracing::warn!(model, "no price configured for model; recording $0 cost");
                0.0
            }
        }
    }
}
