//! Multi-step pipelines, their execution, and trace records.
//!
//! A [`Pipeline`] pairs a set of declared [`LlmStep`]s with a [`Program`]
//! holding all non-LLM control logic. The program requests step invocations
//! through [`StepContext::invoke`]; every invocation is recorded, so a
//! [`Trace`] captures loops and branches exactly as they ran.

mod engine;
pub mod graph;
mod io;
mod template;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use engine::{execute, StepContext};
pub use graph::GraphProgram;
pub use io::{read_traces, write_traces};
pub use template::{render_prompt, Demonstration, PromptTemplate};

/// Current prompt per step id.
pub type PromptSet = BTreeMap<String, PromptTemplate>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmStep {
    pub step_id: String,
    pub model_ref: String,
    #[serde(default)]
    pub description: String,
}

/// Executable control logic of a pipeline.
pub trait Program: Send + Sync {
    fn run(&self, ctx: &mut StepContext<'_>, input: &str) -> Result<String>;

    /// Source-like description handed to the pipeline analyzer.
    fn describe(&self) -> String {
        "<opaque program>".to_string()
    }
}

/// Adapts a closure into a [`Program`].
pub struct FnProgram<F> {
    func: F,
    description: String,
}

impl<F> FnProgram<F>
where
    F: Fn(&mut StepContext<'_>, &str) -> Result<String> + Send + Sync,
{
    pub fn new(description: impl Into<String>, func: F) -> Self {
        Self {
            func,
            description: description.into(),
        }
    }
}

impl<F> Program for FnProgram<F>
where
    F: Fn(&mut StepContext<'_>, &str) -> Result<String> + Send + Sync,
{
    fn run(&self, ctx: &mut StepContext<'_>, input: &str) -> Result<String> {
        (self.func)(ctx, input)
    }

    fn describe(&self) -> String {
        self.description.clone()
    }
}

#[derive(Clone)]
pub struct Pipeline {
    steps: Vec<LlmStep>,
    program: Arc<dyn Program>,
    task_description: String,
}

impl fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pipeline")
            .field("steps", &self.steps)
            .field("task_description", &self.task_description)
            .finish_non_exhaustive()
    }
}

impl Pipeline {
    pub fn new(
        steps: Vec<LlmStep>,
        program: Arc<dyn Program>,
        task_description: impl Into<String>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &steps {
            if !seen.insert(s.step_id.as_str()) {
                return Err(Error::config(format!("duplicate step id `{}`", s.step_id)));
            }
        }
        Ok(Self {
            steps,
            program,
            task_description: task_description.into(),
        })
    }

    pub fn steps(&self) -> &[LlmStep] {
        &self.steps
    }

    pub fn step(&self, step_id: &str) -> Option<&LlmStep> {
        self.steps.iter().find(|s| s.step_id == step_id)
    }

    pub fn step_ids(&self) -> impl Iterator<Item = &str> {
        self.steps.iter().map(|s| s.step_id.as_str())
    }

    pub fn program(&self) -> &dyn Program {
        self.program.as_ref()
    }

    pub fn task_description(&self) -> &str {
        &self.task_description
    }

    /// Checks that `prompts` has a valid template for every declared step.
    pub fn check_prompts(&self, prompts: &PromptSet) -> Result<()> {
        for s in &self.steps {
            let t = prompts
                .get(&s.step_id)
                .ok_or_else(|| Error::contract(format!("no prompt for step `{}`", s.step_id)))?;
            if t.step_id != s.step_id {
                return Err(Error::contract(format!(
                    "prompt keyed `{}` belongs to step `{}`",
                    s.step_id, t.step_id
                )));
            }
            t.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_id: String,
    pub invocation_index: u32,
    pub step_input: String,
    pub step_output: String,
    pub latency_ms: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Everything one case did: end-to-end input/output and each step call in
/// execution order. `final_output` is `None` when execution did not finish,
/// in which case `error` says why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub case_id: String,
    pub input: String,
    pub final_output: Option<String>,
    pub records: Vec<StepRecord>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Trace {
    pub fn is_complete(&self) -> bool {
        self.final_output.is_some()
    }

    pub fn record(&self, step_id: &str, invocation_index: u32) -> Option<&StepRecord> {
        self.records
            .iter()
            .find(|r| r.step_id == step_id && r.invocation_index == invocation_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Good,
    Bad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCase {
    pub trace: Trace,
    pub label: String,
    pub score: f64,
    pub classification: Classification,
}

impl ScoredCase {
    pub fn case_id(&self) -> &str {
        &self.trace.case_id
    }

    pub fn is_bad(&self) -> bool {
        self.classification == Classification::Bad
    }
}

/// End-to-end scoring contract: deterministic, bounded in `[0, 1]`.
pub trait TaskMetric: Send + Sync {
    fn metric_id(&self) -> &str;
    fn score(&self, final_output: &str, label: &str) -> f64;
}

/// Scores every trace and splits the cases at `threshold` (score `>=`
/// threshold is good). Incomplete traces score 0.
pub fn score_and_partition(
    cases: Vec<(Trace, String)>,
    metric: &dyn TaskMetric,
    threshold: f64,
) -> Result<(Vec<ScoredCase>, Vec<ScoredCase>)> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::contract(format!(
            "threshold must be in [0, 1], got {threshold}"
        )));
    }
    let mut good = Vec::new();
    let mut bad = Vec::new();
    for (trace, label) in cases {
        let score = match &trace.final_output {
            Some(out) => metric.score(out, &label).clamp(0.0, 1.0),
            None => 0.0,
        };
        let classification = if score >= threshold {
            Classification::Good
        } else {
            Classification::Bad
        };
        let case = ScoredCase {
            trace,
            label,
            score,
            classification,
        };
        match classification {
            Classification::Good => good.push(case),
            Classification::Bad => bad.push(case),
        }
    }
    Ok((good, bad))
}
