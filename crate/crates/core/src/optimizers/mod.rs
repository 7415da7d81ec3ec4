//! Single-prompt optimizers that turn a step dataset into candidate prompts.
//!
//! They only see one step's supervision pairs and current prompt, so any
//! optimizer implementing [`StepOptimizer`] can be plugged in per step.

mod demos;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::ModelBackend;
use crate::error::{Error, Result};
use crate::gradient::{GradientEngine, Role, StepDataset};
use crate::pipeline::{Demonstration, PromptTemplate};

pub use demos::{jaccard_distance, min_pairwise_distance, select_demonstrations};

/// Candidates for one step. Index 0 is always the unchanged incumbent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub step_id: String,
    pub candidates: Vec<PromptTemplate>,
    pub incumbent_index: usize,
}

impl CandidateSet {
    pub fn incumbent_only(current: &PromptTemplate) -> Self {
        Self {
            step_id: current.step_id.clone(),
            candidates: vec![current.clone()],
            incumbent_index: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn incumbent(&self) -> &PromptTemplate {
        &self.candidates[self.incumbent_index]
    }

    /// Appends `candidate` unless an identical prompt is already present.
    fn push_unique(&mut self, candidate: PromptTemplate) -> bool {
        if self.candidates.iter().any(|c| c.same_content(&candidate)) {
            return false;
        }
        self.candidates.push(candidate);
        true
    }
}

/// How many new candidates a step may generate this round. The incumbent is
/// not counted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizerBudget {
    pub step_id: String,
    pub n_candidates: usize,
}

pub trait StepOptimizer: Send + Sync {
    fn id(&self) -> &str;

    fn optimize(
        &self,
        dataset: &StepDataset,
        current: &PromptTemplate,
        dependency: &str,
        budget: &OptimizerBudget,
        backend: &dyn ModelBackend,
    ) -> Result<CandidateSet>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Instruct,
    Joint,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "instruct" => Ok(OptimizerKind::Instruct),
            "joint" => Ok(OptimizerKind::Joint),
            other => Err(Error::config(format!(
                "unknown optimizer `{other}` (expected instruct or joint)"
            ))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Instruct => "instruct",
            OptimizerKind::Joint => "joint",
        })
    }
}

/// Rewrites the instruction only; demonstrations are carried over unchanged.
#[derive(Debug, Clone)]
pub struct InstructionOptimizer {
    engine: GradientEngine,
    max_pairs: usize,
}

impl InstructionOptimizer {
    pub fn new(engine: GradientEngine, max_pairs: usize) -> Self {
        Self { engine, max_pairs }
    }
}

impl StepOptimizer for InstructionOptimizer {
    fn id(&self) -> &str {
        "instruct"
    }

    fn optimize(
        &self,
        dataset: &StepDataset,
        current: &PromptTemplate,
        dependency: &str,
        budget: &OptimizerBudget,
        backend: &dyn ModelBackend,
    ) -> Result<CandidateSet> {
        generate(
            &self.engine,
            self.max_pairs,
            dataset,
            current,
            dependency,
            budget,
            backend,
            &current.demonstrations,
        )
    }
}

/// Rewrites the instruction and replaces the demonstrations with
/// `min(k_demos, |D|)` pairs from the dataset, picked for diversity.
#[derive(Debug, Clone)]
pub struct JointOptimizer {
    engine: GradientEngine,
    max_pairs: usize,
    k_demos: usize,
}

impl JointOptimizer {
    pub fn new(engine: GradientEngine, max_pairs: usize, k_demos: usize) -> Self {
        Self {
            engine,
            max_pairs,
            k_demos,
        }
    }
}

impl StepOptimizer for JointOptimizer {
    fn id(&self) -> &str {
        "joint"
    }

    fn optimize(
        &self,
        dataset: &StepDataset,
        current: &PromptTemplate,
        dependency: &str,
        budget: &OptimizerBudget,
        backend: &dyn ModelBackend,
    ) -> Result<CandidateSet> {
        if self.k_demos == 0 {
            return InstructionOptimizer::new(self.engine.clone(), self.max_pairs)
                .optimize(dataset, current, dependency, budget, backend);
        }
        let picked: Vec<Demonstration> = select_demonstrations(&dataset.pairs, self.k_demos)
            .into_iter()
            .map(|i| dataset.pairs[i].clone())
            .collect();
        generate(
            &self.engine,
            self.max_pairs,
            dataset,
            current,
            dependency,
            budget,
            backend,
            &picked,
        )
    }
}

pub fn optimize_instruction(
    engine: &GradientEngine,
    dataset: &StepDataset,
    current: &PromptTemplate,
    dependency: &str,
    budget: &OptimizerBudget,
    max_pairs: usize,
    backend: &dyn ModelBackend,
) -> Result<CandidateSet> {
    InstructionOptimizer::new(engine.clone(), max_pairs)
        .optimize(dataset, current, dependency, budget, backend)
}

#[allow(clippy::too_many_arguments)]
pub fn optimize_joint(
    engine: &GradientEngine,
    dataset: &StepDataset,
    current: &PromptTemplate,
    dependency: &str,
    budget: &OptimizerBudget,
    k_demos: usize,
    max_pairs: usize,
    backend: &dyn ModelBackend,
) -> Result<CandidateSet> {
    JointOptimizer::new(engine.clone(), max_pairs, k_demos)
        .optimize(dataset, current, dependency, budget, backend)
}

/// Asks the proposer once per candidate slot `1..=budget` and keeps the
/// distinct results.
#[allow(clippy::too_many_arguments)]
fn generate(
    engine: &GradientEngine,
    max_pairs: usize,
    dataset: &StepDataset,
    current: &PromptTemplate,
    dependency: &str,
    budget: &OptimizerBudget,
    backend: &dyn ModelBackend,
    demonstrations: &[Demonstration],
) -> Result<CandidateSet> {
    if budget.n_candidates == 0 {
        return Err(Error::contract(format!(
            "step `{}` has a zero candidate budget",
            budget.step_id
        )));
    }
    let mut set = CandidateSet::incumbent_only(current);
    if dataset.is_empty() {
        return Ok(set);
    }
    let examples = dataset
        .pairs
        .iter()
        .take(max_pairs)
        .enumerate()
        .map(|(i, p)| format!("Example {}\nInput: {}\nOutput: {}", i + 1, p.input, p.output))
        .collect::<Vec<_>>()
        .join("\n\n");
    let total = budget.n_candidates.to_string();
    for k in 1..=budget.n_candidates {
        let index = k.to_string();
        let instruction = engine.call_role(
            Role::Propose,
            &[
                ("step_id", &current.step_id),
                ("instruction", &current.instruction),
                ("dependency", dependency),
                ("examples", &examples),
                ("candidate_index", &index),
                ("budget", &total),
            ],
            backend,
        )?;
        if instruction.is_empty() {
            continue;
        }
        set.push_unique(current.revised(instruction, demonstrations.to_vec()));
    }
    Ok(set)
}

/// Optimizers by id; `instruct` and `joint` are built in.
#[derive(Clone, Default)]
pub struct OptimizerRegistry {
    optimizers: BTreeMap<String, Arc<dyn StepOptimizer>>,
}

impl OptimizerRegistry {
    pub fn with_builtins(engine: &GradientEngine, max_pairs: usize, k_demos: usize) -> Self {
        let mut r = Self::default();
        r.register(Arc::new(InstructionOptimizer::new(engine.clone(), max_pairs)));
        r.register(Arc::new(JointOptimizer::new(engine.clone(), max_pairs, k_demos)));
        r
    }

    pub fn register(&mut self, optimizer: Arc<dyn StepOptimizer>) {
        self.optimizers.insert(optimizer.id().to_string(), optimizer);
    }

    pub fn get(&self, id: &str) -> Result<Arc<dyn StepOptimizer>> {
        self.optimizers
            .get(id)
            .cloned()
            .ok_or_else(|| Error::config(format!("no optimizer registered as `{id}`")))
    }
}

impl fmt::Debug for OptimizerRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.optimizers.keys()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ScriptRule, ScriptedBackend};
    use crate::pipeline::render_prompt;

    fn proposer(rules: &[(&str, &str)]) -> ScriptedBackend {
        ScriptedBackend::new(
            vec![],
            rules
                .iter()
                .map(|(p, r)| ScriptRule {
                    role: "propose".into(),
                    input_pattern: p.to_string(),
                    response: r.to_string(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn dataset(n: usize) -> StepDataset {
        StepDataset {
            step_id: "s".into(),
            pairs: (0..n)
                .map(|i| Demonstration {
                    input: format!("input {i} token{i}"),
                    output: format!("out {i}"),
                })
                .collect(),
        }
    }

    fn budget(n: usize) -> OptimizerBudget {
        OptimizerBudget {
            step_id: "s".into(),
            n_candidates: n,
        }
    }

    fn current() -> PromptTemplate {
        let mut p = PromptTemplate::new("s", "Do the thing.").unwrap();
        p.demonstrations.push(Demonstration {
            input: "old in".into(),
            output: "old out".into(),
        });
        p
    }

    #[test]
    fn empty_dataset_keeps_incumbent_only() {
        let b = proposer(&[]);
        let set = optimize_instruction(
            &GradientEngine::default(),
            &dataset(0),
            &current(),
            "",
            &budget(3),
            8,
            &b,
        )
        .unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(b.calls(), 0);
    }

    #[test]
    fn one_candidate_per_budget_slot() {
        let b = proposer(&[(r"Candidate: (\d+) of", "Variant $1.")]);
        let set = optimize_instruction(
            &GradientEngine::default(),
            &dataset(2),
            &current(),
            "",
            &budget(3),
            8,
            &b,
        )
        .unwrap();
        assert_eq!(set.len(), 4);
        assert_eq!(set.candidates[2].instruction, "Variant 2.");
        for c in &set.candidates {
            assert_eq!(c.demonstrations, current().demonstrations);
        }
        assert_eq!(
            render_prompt(set.incumbent(), "x"),
            render_prompt(&current(), "x")
        );
    }

    #[test]
    fn duplicates_are_dropped() {
        let b = proposer(&[(r"Candidate", "Same every time.")]);
        let set = optimize_instruction(
            &GradientEngine::default(),
            &dataset(2),
            &current(),
            "",
            &budget(3),
            8,
            &b,
        )
        .unwrap();
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn joint_takes_min_of_k_and_dataset() {
        let b = proposer(&[(r"Candidate: (\d+) of", "Variant $1.")]);
        let set = optimize_joint(
            &GradientEngine::default(),
            &dataset(2),
            &current(),
            "",
            &budget(2),
            4,
            8,
            &b,
        )
        .unwrap();
        for c in &set.candidates[1..] {
            assert_eq!(c.demonstrations.len(), 2);
            for d in &c.demonstrations {
                assert!(dataset(2).pairs.contains(d));
            }
        }
    }

    #[test]
    fn joint_with_zero_demos_matches_instruct() {
        let b = proposer(&[(r"Candidate: (\d+) of", "Variant $1.")]);
        let e = GradientEngine::default();
        let a = optimize_joint(&e, &dataset(3), &current(), "", &budget(2), 0, 8, &b).unwrap();
        let i = optimize_instruction(&e, &dataset(3), &current(), "", &budget(2), 8, &b).unwrap();
        assert_eq!(a, i);
    }

    #[test]
    fn registry_resolves_builtins() {
        let r = OptimizerRegistry::with_builtins(&GradientEngine::default(), 8, 2);
        assert_eq!(r.get("joint").unwrap().id(), "joint");
        assert!(r.get("mipro").is_err());
    }
}
