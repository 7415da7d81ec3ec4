//! TOML run configuration.
//!
//! Relative paths resolve against the directory of the config file. Any file
//! reference may instead name a bundled fixture file as `builtin:<task>`,
//! e.g. `script = "builtin:scripted-qa"`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::{
    CachingBackend, HttpBackend, HttpConfig, ModelBackend, RoutingBackend, ScriptFile, ScriptedBackend,
};
use crate::error::{Error, Result};
use crate::gradient::{GradientEngine, Role, RoleTemplates};
use crate::optimizers::OptimizerRegistry;
use crate::orchestrator::{Trainer, TrainingConfig, TrainingTask};
use crate::pipeline::graph::GraphDefinition;
use crate::pipeline::{Pipeline, PromptSet};
use crate::selector::{SelectorSettings, Strategy};
use crate::tasks::{builtin_asset, builtin_task, metric_by_id, parse_dataset, Example};

const BUILTIN_PREFIX: &str = "builtin:";

/// Commented defaults printed by `adopt config --print-defaults`.
pub const DEFAULT_CONFIG_TOML: &str = r#"# Rounds of optimization and training cases per round.
rounds = 3
minibatch_size = 8
seed = 0
# Where rounds.jsonl, prompts.json and traces/ are written.
output_dir = "runs"
# Optional: threshold (defaults to 1.0 for exact_match, 0.5 otherwise),
# patience, jobs, role_templates (directory of role template overrides).

[task]
# Either a bundled task...
builtin = "scripted-qa"
# ...or explicit files:
# pipeline = "pipeline.json"
# prompts = "prompts.json"
# train = "train.jsonl"
# dev = "dev.jsonl"
metric = "exact_match"

# Defaults to the built-in task's script when omitted.
# [backend]
# kind = "http"
# http = { base_url = "https://api.openai.com", model = "gpt-4o-mini" }

# Extra named backends and model_ref routes:
# [backends.judge]
# kind = "scripted"
# script = "judge.json"
# [routes]
# e3 = "judge"

# Model refs for optimizer roles (e1..e6, propose):
# [roles]
# e4 = "gpt-4o"

[selector]
budget = 8
coalition_quota = 4
strategy = "surrogate"
exploration = 0.05
# eval_size = 50

[budget]
# Defaults to two candidates per step.
# total = 8
b_min = 1

[optimizer]
default = "instruct"
k_demos = 2
max_pairs = 8
n_good = 4
# [optimizer.steps]
# answer = "joint"
"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub builtin: Option<String>,
    pub pipeline: Option<String>,
    pub prompts: Option<String>,
    pub train: Option<String>,
    pub dev: Option<String>,
    pub metric: String,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            builtin: None,
            pipeline: None,
            prompts: None,
            train: None,
            dev: None,
            metric: "exact_match".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    Scripted {
        script: String,
    },
    Http {
        #[serde(default)]
        http: HttpConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorConfig {
    pub budget: usize,
    pub coalition_quota: usize,
    pub strategy: Strategy,
    pub exploration: f64,
    pub eval_size: Option<usize>,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        let s = SelectorSettings::default();
        Self {
            budget: s.budget,
            coalition_quota: s.coalition_quota,
            strategy: s.strategy,
            exploration: s.exploration,
            eval_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    pub total: Option<usize>,
    pub b_min: usize,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            total: None,
            b_min: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub default: String,
    pub k_demos: usize,
    pub max_pairs: usize,
    pub n_good: usize,
    pub steps: BTreeMap<String, String>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            default: "instruct".into(),
            k_demos: 2,
            max_pairs: 8,
            n_good: 4,
            steps: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub rounds: usize,
    pub minibatch_size: usize,
    pub threshold: Option<f64>,
    pub patience: Option<usize>,
    pub seed: u64,
    pub output_dir: String,
    pub jobs: Option<usize>,
    pub role_templates: Option<String>,
    pub task: TaskConfig,
    pub backend: Option<BackendSpec>,
    pub backends: BTreeMap<String, BackendSpec>,
    pub routes: BTreeMap<String, String>,
    pub roles: BTreeMap<String, String>,
    pub selector: SelectorConfig,
    pub budget: BudgetConfig,
    pub optimizer: OptimizerConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            rounds: 3,
            minibatch_size: 8,
            threshold: None,
            patience: None,
            seed: 0,
            output_dir: "runs".into(),
            jobs: None,
            role_templates: None,
            // Without a [task] table the bundled QA task runs.
            task: TaskConfig {
                builtin: Some("scripted-qa".into()),
                ..TaskConfig::default()
            },
            backend: None,
            backends: BTreeMap::new(),
            routes: BTreeMap::new(),
            roles: BTreeMap::new(),
            selector: SelectorConfig::default(),
            budget: BudgetConfig::default(),
            optimizer: OptimizerConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

/// A backend with its script loaded, ready to embed in a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResolvedBackend {
    Scripted { script: ScriptFile },
    Http { http: HttpConfig },
}

impl ResolvedBackend {
    fn build(&self) -> Result<Arc<dyn ModelBackend>> {
        Ok(match self {
            ResolvedBackend::Scripted { script } => Arc::new(ScriptedBackend::from_file(script.clone())?),
            ResolvedBackend::Http { http } => Arc::new(HttpBackend::new(http.clone())?),
        })
    }
}

/// The default backend plus named backends selected by `model_ref`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSet {
    pub default: ResolvedBackend,
    #[serde(default)]
    pub named: BTreeMap<String, ResolvedBackend>,
    #[serde(default)]
    pub routes: BTreeMap<String, String>,
}

impl BackendSet {
    /// Routing backend behind a response cache.
    pub fn build(&self) -> Result<Arc<dyn ModelBackend>> {
        let built: BTreeMap<&str, Arc<dyn ModelBackend>> = self
            .named
            .iter()
            .map(|(k, v)| Ok((k.as_str(), v.build()?)))
            .collect::<Result<_>>()?;
        let mut routing = RoutingBackend::new(self.default.build()?);
        for (model_ref, name) in &self.routes {
            let b = built.get(name.as_str()).ok_or_else(|| {
                Error::config(format!("route `{model_ref}` names unknown backend `{name}`"))
            })?;
            routing = routing.route(model_ref.clone(), b.clone());
        }
        Ok(Arc::new(CachingBackend::new(routing)))
    }
}

/// Optimized prompts together with everything needed to run them again.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptBundle {
    pub prompts: PromptSet,
    pub pipeline: GraphDefinition,
    pub metric: String,
    pub backend: BackendSet,
    #[serde(default)]
    pub seed: u64,
}

impl PromptBundle {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Everything a run needs, loaded and validated.
#[derive(Debug)]
pub struct ResolvedRun {
    pub graph: GraphDefinition,
    pub pipeline: Pipeline,
    pub prompts: PromptSet,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub metric: String,
    pub backends: BackendSet,
    pub training: TrainingConfig,
    pub engine: GradientEngine,
    pub optimizers: OptimizerRegistry,
    pub output_dir: PathBuf,
}

impl ResolvedRun {
    pub fn trainer(&self, backend: Arc<dyn ModelBackend>) -> Result<Trainer> {
        let task = TrainingTask::new(
            self.pipeline.clone(),
            self.train.clone(),
            self.dev.clone(),
            &self.metric,
        )?;
        Trainer::new(
            task,
            self.engine.clone(),
            self.optimizers.clone(),
            backend,
            self.training.clone(),
        )
    }

    pub fn bundle(&self, prompts: PromptSet) -> PromptBundle {
        PromptBundle {
            prompts,
            pipeline: self.graph.clone(),
            metric: self.metric.clone(),
            backend: self.backends.clone(),
            seed: self.training.seed,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base).map_err(|e| match e {
            Error::Config(message) => Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message,
            },
            other => other,
        })
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    /// Checks values that need no file access.
    pub fn validate(&self) -> Result<()> {
        if self.minibatch_size == 0 {
            return Err(Error::config("minibatch_size must be at least 1"));
        }
        if let Some(t) = self.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::config(format!("threshold must be in [0, 1], got {t}")));
            }
        }
        if self.jobs == Some(0) {
            return Err(Error::config("jobs must be at least 1"));
        }
        if self.selector.budget == 0 {
            return Err(Error::config("selector.budget must be at least 1"));
        }
        if self.selector.coalition_quota < 2 {
            return Err(Error::config("selector.coalition_quota must be at least 2"));
        }
        if self.selector.exploration.is_nan() || self.selector.exploration < 0.0 {
            return Err(Error::config("selector.exploration must be >= 0"));
        }
        if self.selector.eval_size == Some(0) {
            return Err(Error::config("selector.eval_size must be at least 1"));
        }
        if self.budget.b_min == 0 {
            return Err(Error::config("budget.b_min must be at least 1"));
        }
        if self.optimizer.max_pairs == 0 {
            return Err(Error::config("optimizer.max_pairs must be at least 1"));
        }
        metric_by_id(&self.task.metric)?;
        for role in self.roles.keys() {
            role.parse::<Role>()?;
        }
        for (model_ref, name) in &self.routes {
            if !self.backends.contains_key(name) {
                return Err(Error::config(format!(
                    "route `{model_ref}` names unknown backend `{name}`"
                )));
            }
        }
        let t = &self.task;
        let explicit = [&t.pipeline, &t.prompts, &t.train, &t.dev];
        if t.builtin.is_none() && explicit.iter().any(|f| f.is_none()) {
            return Err(Error::config(
                "task needs either `builtin` or all of pipeline, prompts, train and dev",
            ));
        }
        if t.builtin.is_none() && self.backend.is_none() {
            return Err(Error::config(
                "a [backend] section is required without a built-in task",
            ));
        }
        Ok(())
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    /// Reads a file reference, honouring `builtin:<task>`.
    fn read(&self, reference: &str, fixture_file: &str) -> Result<(String, PathBuf)> {
        if let Some(task) = reference.strip_prefix(BUILTIN_PREFIX) {
            let text = builtin_asset(task, fixture_file)?;
            return Ok((text.to_string(), PathBuf::from(reference)));
        }
        let path = self.path(reference);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
        Ok((text, path))
    }

    /// The explicit reference for `field`, else the built-in task's file.
    fn source(&self, field: &Option<String>, fixture_file: &str) -> Result<(String, PathBuf)> {
        match (field, &self.task.builtin) {
            (Some(r), _) => self.read(r, fixture_file),
            (None, Some(task)) => self.read(&format!("{BUILTIN_PREFIX}{task}"), fixture_file),
            (None, None) => Err(Error::config(format!("no source for {fixture_file}"))),
        }
    }

    fn load_examples(&self, field: &Option<String>, fixture_file: &str) -> Result<Vec<Example>> {
        let (text, path) = self.source(field, fixture_file)?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "case".into());
        parse_dataset(&text, &stem).map_err(|(line, message)| Error::Parse { path, line, message })
    }

    fn resolve_backend(&self, spec: &BackendSpec) -> Result<ResolvedBackend> {
        Ok(match spec {
            BackendSpec::Scripted { script } => {
                let (text, path) = self.read(script, "script.json")?;
                let script: ScriptFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
                    path,
                    line: e.line(),
                    message: e.to_string(),
                })?;
                ResolvedBackend::Scripted { script }
            }
            BackendSpec::Http { http } => ResolvedBackend::Http { http: http.clone() },
        })
    }

    pub fn resolve(&self) -> Result<ResolvedRun> {
        let parse_err = |path: PathBuf, e: serde_json::Error| Error::Parse {
            path,
            line: e.line(),
            message: e.to_string(),
        };
        if let Some(name) = &self.task.builtin {
            builtin_task(name)?;
        }
        let (text, path) = self.source(&self.task.pipeline, "pipeline.json")?;
        let graph: GraphDefinition = serde_json::from_str(&text).map_err(|e| parse_err(path, e))?;
        let pipeline = graph.clone().into_pipeline()?;
        let (text, path) = self.source(&self.task.prompts, "prompts.json")?;
        let prompts: PromptSet = serde_json::from_str(&text).map_err(|e| parse_err(path, e))?;
        pipeline.check_prompts(&prompts)?;
        let train = self.load_examples(&self.task.train, "train.jsonl")?;
        let dev = self.load_examples(&self.task.dev, "dev.jsonl")?;

        let default = match (&self.backend, &self.task.builtin) {
            (Some(spec), _) => self.resolve_backend(spec)?,
            (None, Some(task)) => self.resolve_backend(&BackendSpec::Scripted {
                script: format!("{BUILTIN_PREFIX}{task}"),
            })?,
            (None, None) => return Err(Error::config("no backend configured")),
        };
        let named = self
            .backends
            .iter()
            .map(|(k, v)| Ok((k.clone(), self.resolve_backend(v)?)))
            .collect::<Result<_>>()?;
        let backends = BackendSet {
            default,
            named,
            routes: self.routes.clone(),
        };

        let m = pipeline.steps().len();
        for step in self.optimizer.steps.keys() {
            if pipeline.step(step).is_none() {
                return Err(Error::config(format!(
                    "[optimizer.steps] names unknown step `{step}`"
                )));
            }
        }
        let training = TrainingConfig {
            rounds: self.rounds,
            minibatch_size: self.minibatch_size,
            threshold: self.threshold,
            total_budget: self.budget.total.unwrap_or(2 * m),
            b_min: self.budget.b_min,
            selector: SelectorSettings {
                budget: self.selector.budget,
                coalition_quota: self.selector.coalition_quota,
                strategy: self.selector.strategy,
                exploration: self.selector.exploration,
                seed: self.seed,
            },
            eval_size: self.selector.eval_size,
            default_optimizer: self.optimizer.default.clone(),
            step_optimizers: self.optimizer.steps.clone(),
            patience: self.patience,
            seed: self.seed,
            jobs: self.jobs,
        };

        let templates = match &self.role_templates {
            Some(dir) => RoleTemplates::load_dir(&self.path(dir))?,
            None => RoleTemplates::builtin(),
        };
        let mut engine = GradientEngine::new(templates)
            .with_n_good(self.optimizer.n_good)
            .with_seed(self.seed);
        for (role, model_ref) in &self.roles {
            engine = engine.with_model(role.parse()?, model_ref.clone());
        }
        let optimizers =
            OptimizerRegistry::with_builtins(&engine, self.optimizer.max_pairs, self.optimizer.k_demos);
        Ok(ResolvedRun {
            graph,
            pipeline,
            prompts,
            train,
            dev,
            metric: self.task.metric.clone(),
            backends,
            training,
            engine,
            optimizers,
            output_dir: self.path(&self.output_dir),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printed_defaults_parse_to_the_defaults() {
        let parsed = RunConfig::parse(DEFAULT_CONFIG_TOML, Path::new(".")).unwrap();
        assert_eq!(parsed, RunConfig::default());
    }

    #[test]
    fn defaults_resolve_to_the_bundled_task() {
        let run = RunConfig::default().resolve().unwrap();
        assert_eq!(run.pipeline.steps().len(), 2);
        assert_eq!(run.training.total_budget, 4);
        assert!(matches!(run.backends.default, ResolvedBackend::Scripted { .. }));
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        let base = Path::new(".");
        assert!(RunConfig::parse("roundz = 3", base).is_err());
        assert!(RunConfig::parse("minibatch_size = 0", base).is_err());
        assert!(RunConfig::parse("threshold = 1.5", base).is_err());
        assert!(RunConfig::parse("[task]\nmetric = \"bleu\"", base).is_err());
        assert!(RunConfig::parse("[roles]\ne9 = \"x\"", base).is_err());
        assert!(RunConfig::parse("[routes]\ne3 = \"judge\"", base).is_err());
        assert!(RunConfig::parse(
            "[task]\nbuiltin = \"scripted-qa\"\n[backend]\nkind = \"carrier-pigeon\"",
            base
        )
        .is_err());
        let err = RunConfig::parse("[task]\npipeline = \"p.json\"", base).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn paths_resolve_against_the_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        for file in ["pipeline.json", "prompts.json", "script.json"] {
            std::fs::write(dir.path().join(file), builtin_asset("scripted-qa", file).unwrap()).unwrap();
        }
        std::fs::write(
            dir.path().join("train.jsonl"),
            "{\"input\": \"Who wrote Hamlet?\", \"label\": \"William Shakespeare\"}\n",
        )
        .unwrap();
        let toml = r#"
output_dir = "out"
[task]
pipeline = "pipeline.json"
prompts = "prompts.json"
train = "train.jsonl"
dev = "builtin:scripted-qa"
[backend]
kind = "scripted"
script = "script.json"
[backends.judge]
kind = "http"
[routes]
e3 = "judge"
[roles]
e4 = "big-model"
"#;
        let path = dir.path().join("run.toml");
        std::fs::write(&path, toml).unwrap();
        let run = RunConfig::load(&path).unwrap().resolve().unwrap();
        assert_eq!(run.train[0].id, "train-1");
        assert_eq!(run.dev.len(), 4);
        assert_eq!(run.output_dir, dir.path().join("out"));
        assert_eq!(run.engine.model_ref(Role::GlobalGradient), "big-model");
        assert_eq!(run.backends.routes["e3"], "judge");
    }

    #[test]
    fn missing_file_is_a_config_error() {
        let toml = "[task]\nbuiltin = \"scripted-qa\"\ntrain = \"nope.jsonl\"";
        let err = RunConfig::parse(toml, Path::new("/nonexistent"))
            .unwrap()
            .resolve()
            .unwrap_err();
        assert!(err.is_config(), "{err}");
    }

    #[test]
    fn bundle_round_trips() {
        let run = RunConfig::default().resolve().unwrap();
        let bundle = run.bundle(run.prompts.clone());
        let text = serde_json::to_string(&bundle).unwrap();
        let back: PromptBundle = serde_json::from_str(&text).unwrap();
        assert_eq!(back.prompts, run.prompts);
        assert_eq!(back.backend, run.backends);
        assert_eq!(back.pipeline, run.graph);
    }
}
