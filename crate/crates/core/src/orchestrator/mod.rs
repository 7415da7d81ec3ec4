//! The training loop.
//!
//! Each round samples a minibatch of training cases, runs the pipeline,
//! turns the failures into per-step supervision, lets every step optimizer
//! propose candidates within its budget, picks one candidate per step, and
//! re-splits the candidate budget by estimated step contribution for the
//! next round. The best prompt set seen on the dev split is kept.

mod sampler;

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::ModelBackend;
use crate::error::{Error, Result};
use crate::gradient::{
    build_step_datasets, CaseFeedback, DependencyReport, GradientEngine, PipelineUnderstanding, StepDataset,
};
use crate::optimizers::{OptimizerBudget, OptimizerRegistry};
use crate::pipeline::{execute, score_and_partition, Pipeline, PromptSet, TaskMetric, Trace};
use crate::selector::{select_configuration, SelectorSettings};
use crate::shapley::{allocate_budgets, kernel_shap, uniform_budgets, ValueSample};
use crate::tasks::{default_threshold, metric_by_id, Example};

pub use sampler::EpochSampler;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub rounds: usize,
    pub minibatch_size: usize,
    /// Good/bad cut-off; `None` uses the metric's default.
    pub threshold: Option<f64>,
    pub total_budget: usize,
    pub b_min: usize,
    pub selector: SelectorSettings,
    /// Dev cases scored per selector evaluation; `None` uses the whole split.
    pub eval_size: Option<usize>,
    pub default_optimizer: String,
    /// Per-step optimizer overrides.
    pub step_optimizers: BTreeMap<String, String>,
    /// Stop once more than this many consecutive rounds pass without a dev
    /// improvement; `None` never stops early.
    pub patience: Option<usize>,
    pub seed: u64,
    /// Worker threads; `None` uses the global rayon pool.
    pub jobs: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            rounds: 3,
            minibatch_size: 8,
            threshold: None,
            total_budget: 8,
            b_min: 1,
            selector: SelectorSettings::default(),
            eval_size: None,
            default_optimizer: "instruct".into(),
            step_optimizers: BTreeMap::new(),
            patience: None,
            seed: 0,
            jobs: None,
        }
    }
}

/// What the trainer optimizes against.
#[derive(Clone)]
pub struct TrainingTask {
    pub pipeline: Pipeline,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub metric: Arc<dyn TaskMetric>,
}

impl TrainingTask {
    pub fn new(pipeline: Pipeline, train: Vec<Example>, dev: Vec<Example>, metric_id: &str) -> Result<Self> {
        Ok(Self {
            pipeline,
            train,
            dev,
            metric: metric_by_id(metric_id)?,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingState {
    /// Rounds completed so far.
    pub round: usize,
    pub prompts: PromptSet,
    pub budgets: BTreeMap<String, usize>,
    /// Latest contribution estimate, reused when a round gathers too few
    /// coalition samples for a fit.
    pub phi: Option<BTreeMap<String, f64>>,
    pub dev_score: f64,
    pub best_dev_score: f64,
    pub best_prompts: PromptSet,
    pub best_round: usize,
    pub rounds_without_improvement: usize,
    sampler: EpochSampler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundStatus {
    Completed,
    /// Every minibatch case was good; nothing changed.
    NoOp,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiSource {
    KernelShap,
    Carried,
    None,
}

/// Per-round summary written to `rounds.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub status: RoundStatus,
    pub minibatch: Vec<String>,
    pub n_good: usize,
    pub n_bad: usize,
    pub train_score: f64,
    pub budgets: BTreeMap<String, usize>,
    pub dataset_sizes: BTreeMap<String, usize>,
    pub candidates: BTreeMap<String, usize>,
    pub selected: BTreeMap<String, usize>,
    pub selector_calls: usize,
    pub coalition_samples: Vec<ValueSample>,
    pub phi: Option<BTreeMap<String, f64>>,
    pub phi_source: PhiSource,
    pub next_budgets: BTreeMap<String, usize>,
    pub dev_score: f64,
    pub best_dev_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RoundReport {
    fn empty(round: usize, state: &TrainingState) -> Self {
        Self {
            round,
            status: RoundStatus::Completed,
            minibatch: Vec::new(),
            n_good: 0,
            n_bad: 0,
            train_score: 0.0,
            budgets: state.budgets.clone(),
            dataset_sizes: BTreeMap::new(),
            candidates: BTreeMap::new(),
            selected: BTreeMap::new(),
            selector_calls: 0,
            coalition_samples: Vec::new(),
            phi: state.phi.clone(),
            phi_source: PhiSource::None,
            next_budgets: state.budgets.clone(),
            dev_score: state.dev_score,
            best_dev_score: state.best_dev_score,
            error: None,
        }
    }
}

/// Intermediate products of a round, for inspection and trace dumps.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RoundArtifacts {
    pub traces: Vec<Trace>,
    pub understanding: Option<PipelineUnderstanding>,
    pub dependencies: Option<DependencyReport>,
    pub feedback: Vec<CaseFeedback>,
    pub datasets: BTreeMap<String, StepDataset>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingOutcome {
    pub baseline_dev_score: f64,
    pub best_dev_score: f64,
    pub best_round: usize,
    pub best_prompts: PromptSet,
    pub final_prompts: PromptSet,
    pub reports: Vec<RoundReport>,
}

/// Mean score of `prompts` on `examples`. Any execution failure is an error.
pub fn evaluate_prompts(
    pipeline: &Pipeline,
    prompts: &PromptSet,
    examples: &[Example],
    metric: &dyn TaskMetric,
    backend: &dyn ModelBackend,
    seed: u64,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Domain("cannot evaluate on an empty split".into()));
    }
    let scores: Vec<f64> = examples
        .par_iter()
        .map(|e| {
            let trace = execute(pipeline, prompts, &e.id, &e.input, backend, seed)?;
            let out = trace.final_output.as_deref().unwrap_or_default();
            Ok(metric.score(out, &e.label).clamp(0.0, 1.0))
        })
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

pub struct Trainer {
    task: TrainingTask,
    engine: GradientEngine,
    optimizers: OptimizerRegistry,
    backend: Arc<dyn ModelBackend>,
    config: TrainingConfig,
    threshold: f64,
}

impl Trainer {
    pub fn new(
        task: TrainingTask,
        engine: GradientEngine,
        optimizers: OptimizerRegistry,
        backend: Arc<dyn ModelBackend>,
        config: TrainingConfig,
    ) -> Result<Self> {
        if task.train.is_empty() {
            return Err(Error::config("training split is empty"));
        }
        if task.dev.is_empty() {
            return Err(Error::config("dev split is empty"));
        }
        if config.minibatch_size == 0 {
            return Err(Error::config("minibatch_size must be at least 1"));
        }
        if config.eval_size == Some(0) {
            return Err(Error::config("eval_size must be at least 1"));
        }
        if config.selector.budget == 0 {
            return Err(Error::config("selector budget must be at least 1"));
        }
        let threshold = config
            .threshold
            .unwrap_or_else(|| default_threshold(task.metric.metric_id()));
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::config(format!(
                "threshold must be in [0, 1], got {threshold}"
            )));
        }
        let m = task.pipeline.steps().len();
        uniform_budgets(m, config.total_budget, config.b_min)?;
        optimizers.get(&config.default_optimizer)?;
        for (step, id) in &config.step_optimizers {
            if task.pipeline.step(step).is_none() {
                return Err(Error::config(format!(
                    "optimizer override for unknown step `{step}`"
                )));
            }
            optimizers.get(id)?;
        }
        Ok(Self {
            task,
            engine,
            optimizers,
            backend,
            config,
            threshold,
        })
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn task(&self) -> &TrainingTask {
        &self.task
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    fn step_ids(&self) -> Vec<String> {
        self.task.pipeline.step_ids().map(str::to_string).collect()
    }

    pub fn evaluate(&self, prompts: &PromptSet, examples: &[Example]) -> Result<f64> {
        evaluate_prompts(
            &self.task.pipeline,
            prompts,
            examples,
            self.task.metric.as_ref(),
            self.backend.as_ref(),
            self.config.seed,
        )
    }

    /// Scores `prompts` on the dev split and sets up uniform budgets.
    pub fn initial_state(&self, prompts: PromptSet) -> Result<TrainingState> {
        self.task.pipeline.check_prompts(&prompts)?;
        let ids = self.step_ids();
        let budgets = uniform_budgets(ids.len(), self.config.total_budget, self.config.b_min)?.budgets;
        let dev_score = self.evaluate(&prompts, &self.task.dev)?;
        Ok(TrainingState {
            round: 0,
            budgets: ids.into_iter().zip(budgets).collect(),
            phi: None,
            dev_score,
            best_dev_score: dev_score,
            best_prompts: prompts.clone(),
            best_round: 0,
            prompts,
            rounds_without_improvement: 0,
            sampler: EpochSampler::new(self.task.train.len(), self.config.seed),
        })
    }

    /// Runs one round. `state` is only updated when the round succeeds.
    pub fn run_round(&self, state: &mut TrainingState) -> Result<(RoundReport, RoundArtifacts)> {
        let round = state.round + 1;
        let mut next = state.clone();
        next.round = round;
        let mut report = RoundReport::empty(round, state);
        let mut artifacts = RoundArtifacts::default();
        let pipeline = &self.task.pipeline;
        let backend = self.backend.as_ref();
        let metric = self.task.metric.as_ref();

        let batch: Vec<&Example> = next
            .sampler
            .next_batch(self.config.minibatch_size)
            .into_iter()
            .map(|i| &self.task.train[i])
            .collect();
        report.minibatch = batch.iter().map(|e| e.id.clone()).collect();

        let runs: Vec<(Trace, String)> = batch
            .par_iter()
            .map(|e| {
                let trace = match execute(
                    pipeline,
                    &state.prompts,
                    &e.id,
                    &e.input,
                    backend,
                    self.config.seed,
                ) {
                    Ok(t) => t,
                    Err(Error::Execution { partial, .. }) => *partial,
                    Err(other) => return Err(other),
                };
                Ok((trace, e.label.clone()))
            })
            .collect::<Result<_>>()?;
        artifacts.traces = runs.iter().map(|(t, _)| t.clone()).collect();
        let (good, bad) = score_and_partition(runs, metric, self.threshold)?;
        report.n_good = good.len();
        report.n_bad = bad.len();
        report.train_score = good.iter().chain(&bad).map(|c| c.score).sum::<f64>() / batch.len() as f64;

        if bad.is_empty() {
            report.status = RoundStatus::NoOp;
            next.rounds_without_improvement += 1;
            *state = next;
            return Ok((report, artifacts));
        }

        let understanding = self.engine.analyze_pipeline(pipeline, &state.prompts, backend)?;
        let dependencies = self.engine.analyze_dependencies(&understanding, &good, backend)?;
        let feedback = self
            .engine
            .process_bad_cases(&bad, &dependencies, metric, backend)?;
        let revised: Vec<_> = feedback.iter().flat_map(|f| f.revised.iter().cloned()).collect();
        let bad_traces: Vec<Trace> = bad.iter().map(|c| c.trace.clone()).collect();
        let datasets = build_step_datasets(&revised, &bad_traces)?;

        let ids = self.step_ids();
        let candidate_sets = ids
            .par_iter()
            .map(|id| {
                let current = &state.prompts[id];
                let dataset = datasets.get(id).cloned().unwrap_or_else(|| StepDataset {
                    step_id: id.clone(),
                    pairs: Vec::new(),
                });
                let optimizer_id = self
                    .config
                    .step_optimizers
                    .get(id)
                    .unwrap_or(&self.config.default_optimizer);
                let dependency = dependencies
                    .dependencies
                    .get(id)
                    .map(String::as_str)
                    .unwrap_or_default();
                let budget = OptimizerBudget {
                    step_id: id.clone(),
                    n_candidates: state.budgets[id],
                };
                self.optimizers
                    .get(optimizer_id)?
                    .optimize(&dataset, current, dependency, &budget, backend)
            })
            .collect::<Result<Vec<_>>>()?;
        for (id, set) in ids.iter().zip(&candidate_sets) {
            report.candidates.insert(id.clone(), set.len());
            report
                .dataset_sizes
                .insert(id.clone(), datasets.get(id).map_or(0, StepDataset::len));
        }

        let eval_cases: &[Example] = match self.config.eval_size {
            Some(n) => &self.task.dev[..n.min(self.task.dev.len())],
            None => &self.task.dev,
        };
        let assemble = |config: &[usize]| -> PromptSet {
            ids.iter()
                .zip(&candidate_sets)
                .zip(config)
                .map(|((id, set), &k)| (id.clone(), set.candidates[k].clone()))
                .collect()
        };
        let mut evaluator = |config: &[usize]| self.evaluate(&assemble(config), eval_cases);
        let sizes: Vec<usize> = candidate_sets.iter().map(|s| s.len()).collect();
        let settings = SelectorSettings {
            seed: self.config.selector.seed.wrapping_add(round as u64),
            ..self.config.selector.clone()
        };
        let outcome = select_configuration(&sizes, &mut evaluator, &settings)?;
        report.selector_calls = outcome.evaluator_calls;
        report.selected = ids
            .iter()
            .cloned()
            .zip(outcome.best.configuration.iter().copied())
            .collect();
        report.coalition_samples = outcome.coalition_samples.clone();
        next.prompts = assemble(&outcome.best.configuration);

        let m = ids.len();
        if outcome.coalition_samples.len() >= m + 2 {
            let phi = kernel_shap(&outcome.coalition_samples, m)?.phi;
            next.phi = Some(ids.iter().cloned().zip(phi).collect());
            report.phi_source = PhiSource::KernelShap;
        } else if next.phi.is_some() {
            report.phi_source = PhiSource::Carried;
        }
        if let Some(phi) = &next.phi {
            let values: Vec<f64> = ids.iter().map(|id| phi[id]).collect();
            let alloc = allocate_budgets(&values, self.config.total_budget, self.config.b_min)?;
            next.budgets = ids.iter().cloned().zip(alloc.budgets).collect();
        }
        report.phi = next.phi.clone();
        report.next_budgets = next.budgets.clone();

        next.dev_score = self.evaluate(&next.prompts, &self.task.dev)?;
        if next.dev_score > next.best_dev_score {
            next.best_dev_score = next.dev_score;
            next.best_prompts = next.prompts.clone();
            next.best_round = round;
            next.rounds_without_improvement = 0;
        } else {
            next.rounds_without_improvement += 1;
        }
        report.dev_score = next.dev_score;
        report.best_dev_score = next.best_dev_score;

        artifacts.understanding = Some(understanding);
        artifacts.dependencies = Some(dependencies);
        artifacts.feedback = feedback;
        artifacts.datasets = datasets;
        *state = next;
        Ok((report, artifacts))
    }

    /// Runs up to `rounds` rounds from `prompts`, calling `on_round` after
    /// each one. A failing round is reported with status `failed` before its
    /// error is returned.
    pub fn train(
        &self,
        prompts: PromptSet,
        on_round: &mut (dyn FnMut(&RoundReport, &RoundArtifacts) -> Result<()> + Send),
    ) -> Result<TrainingOutcome> {
        match self.config.jobs {
            Some(jobs) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(jobs.max(1))
                    .build()
                    .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
                pool.install(|| self.train_in_pool(prompts, on_round))
            }
            None => self.train_in_pool(prompts, on_round),
        }
    }

    fn train_in_pool(
        &self,
        prompts: PromptSet,
        on_round: &mut (dyn FnMut(&RoundReport, &RoundArtifacts) -> Result<()> + Send),
    ) -> Result<TrainingOutcome> {
        let mut state = self.initial_state(prompts)?;
        let baseline_dev_score = state.dev_score;
        let mut reports = Vec::new();
        for _ in 0..self.config.rounds {
            match self.run_round(&mut state) {
                Ok((report, artifacts)) => {
                    on_round(&report, &artifacts)?;
                    reports.push(report);
                }
                Err(e) => {
                    let mut report = RoundReport::empty(state.round + 1, &state);
                    report.status = RoundStatus::Failed;
                    report.error = Some(e.to_string());
                    on_round(&report, &RoundArtifacts::default())?;
                    return Err(e);
                }
            }
            if let Some(p) = self.config.patience {
                if state.rounds_without_improvement > p {
                    break;
                }
            }
        }
        Ok(TrainingOutcome {
            baseline_dev_score,
            best_dev_score: state.best_dev_score,
            best_round: state.best_round,
            best_prompts: state.best_prompts,
            final_prompts: state.prompts,
            reports,
        })
    }
}
