use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::pipeline::TaskMetric;

pub const METRIC_IDS: [&str; 2] = ["exact_match", "token_f1"];

/// Lowercases, drops punctuation and collapses whitespace.
pub fn normalize(text: &str) -> String {
    let stripped: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatch;

impl TaskMetric for ExactMatch {
    fn metric_id(&self) -> &str {
        "exact_match"
    }

    fn score(&self, final_output: &str, label: &str) -> f64 {
        if normalize(final_output) == normalize(label) {
            1.0
        } else {
            0.0
        }
    }
}

/// Harmonic mean of token precision and recall over normalized tokens,
/// counting repeated tokens as a multiset.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenF1;

impl TaskMetric for TokenF1 {
    fn metric_id(&self) -> &str {
        "token_f1"
    }

    fn score(&self, final_output: &str, label: &str) -> f64 {
        let pred = normalize(final_output);
        let gold = normalize(label);
        let pred: Vec<&str> = pred.split_whitespace().collect();
        let gold: Vec<&str> = gold.split_whitespace().collect();
        if pred.is_empty() && gold.is_empty() {
            return 1.0;
        }
        if pred.is_empty() || gold.is_empty() {
            return 0.0;
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in &gold {
            *counts.entry(t).or_default() += 1;
        }
        let mut common = 0usize;
        for t in &pred {
            if let Some(c) = counts.get_mut(t) {
                if *c > 0 {
                    *c -= 1;
                    common += 1;
                }
            }
        }
        if common == 0 {
            return 0.0;
        }
        let p = common as f64 / pred.len() as f64;
        let r = common as f64 / gold.len() as f64;
        2.0 * p * r / (p + r)
    }
}

pub fn metric_by_id(metric_id: &str) -> Result<Arc<dyn TaskMetric>> {
    match metric_id {
        "exact_match" => Ok(Arc::new(ExactMatch)),
        "token_f1" => Ok(Arc::new(TokenF1)),
        other => Err(Error::config(format!(
            "unknown metric `{other}` (expected one of {METRIC_IDS:?})"
        ))),
    }
}

pub fn evaluate_metric(metric_id: &str, prediction: &str, label: &str) -> Result<f64> {
    Ok(metric_by_id(metric_id)?.score(prediction, label))
}

/// Good/bad threshold used when a config does not set one.
pub fn default_threshold(metric_id: &str) -> f64 {
    if metric_id == "exact_match" {
        1.0
    } else {
        0.5
    }
}
