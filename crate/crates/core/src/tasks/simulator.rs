//! LLM-free model of budget allocation across pipeline steps.
//!
//! Each step has a quality in `[0, 1]` and the pipeline scores the product
//! of qualities, so one weak step bottlenecks everything. Per iteration a
//! step with budget `b` draws `b` candidates and keeps the best; a draw
//! closes a random share of the gap to the step's cap, skewed so that most
//! candidates help little and more draws pay off with diminishing returns.
//! Policies differ only in how they split the total budget.
//!
//! Candidate draws use common random numbers keyed by (run, iteration, step,
//! draw), so two policies that give a step the same budget see the same
//! candidates.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selector::schedule_coalition_probes;
use crate::shapley::{allocate_budgets, kernel_shap, random_budgets, uniform_budgets, ValueSample};

/// Exponent applied to each uniform draw; larger means rarer good candidates.
const DRAW_SKEW: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticStep {
    pub quality: f64,
    /// Quality the step can approach but never exceed.
    pub cap: f64,
    /// Largest share of the remaining gap one iteration can close.
    pub rate: f64,
    /// Half-width of the uniform noise on this step's factor when a
    /// coalition is scored.
    pub noise: f64,
}

impl SyntheticStep {
    fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !(unit(self.quality) && unit(self.cap) && unit(self.rate) && self.noise >= 0.0) {
            return Err(Error::Domain(format!("invalid synthetic step {self:?}")));
        }
        if self.quality > self.cap {
            return Err(Error::Domain(format!(
                "step quality {} exceeds its cap {}",
                self.quality, self.cap
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Uniform,
    Random,
    Shapley,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Uniform, Policy::Random, Policy::Shapley];
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Uniform => "uniform",
            Policy::Random => "random",
            Policy::Shapley => "shapley",
        })
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Policy::Uniform),
            "random" => Ok(Policy::Random),
            "shapley" => Ok(Policy::Shapley),
            other => Err(Error::config(format!(
                "unknown policy `{other}` (expected uniform, random or shapley)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSettings {
    pub steps: Vec<SyntheticStep>,
    pub policy: Policy,
    pub target: f64,
    pub total_budget: usize,
    pub b_min: usize,
    pub runs: usize,
    pub seed: u64,
    pub max_iterations: usize,
    /// Coalitions scored per iteration by the shapley policy.
    pub coalition_quota: usize,
}

impl SimulationSettings {
    /// Defaults for `m` steps: [`default_steps`], budget `2m`, target 0.8.
    pub fn new(m: usize, policy: Policy) -> Self {
        Self {
            steps: default_steps(m),
            policy,
            target: 0.8,
            total_budget: 2 * m,
            b_min: 1,
            runs: 50,
            seed: 7,
            max_iterations: 50,
            coalition_quota: default_quota(m),
        }
    }
}

/// `min(2^m, 2m + 2)`: enough interior coalitions for a determined fit.
pub fn default_quota(m: usize) -> usize {
    let cap = if m < 20 { 1usize << m } else { usize::MAX };
    (2 * m + 2).min(cap).max(2)
}

/// Heterogeneous steps: the first is a weak bottleneck with plenty of room,
/// the others start close to their caps.
pub fn default_steps(m: usize) -> Vec<SyntheticStep> {
    (0..m)
        .map(|i| {
            if i == 0 {
                SyntheticStep {
                    quality: 0.3,
                    cap: 0.98,
                    rate: 0.6,
                    noise: 0.01,
                }
            } else {
                SyntheticStep {
                    quality: 0.95,
                    cap: 0.98,
                    rate: 0.6,
                    noise: 0.01,
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run: usize,
    pub iterations: usize,
    /// True when the run hit `max_iterations` without reaching the target.
    pub censored: bool,
    pub final_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub policy: Policy,
    pub runs: Vec<RunOutcome>,
    pub mean: f64,
    pub std_dev: f64,
    pub censored: usize,
}

impl SimulationResult {
    pub fn iterations(&self) -> Vec<usize> {
        self.runs.iter().map(|r| r.iterations).collect()
    }
}

pub fn simulate_allocation(settings: &SimulationSettings) -> Result<SimulationResult> {
    let m = settings.steps.len();
    if m == 0 {
        return Err(Error::Domain("simulation needs at least one step".into()));
    }
    for s in &settings.steps {
        s.validate()?;
    }
    if !(settings.target > 0.0 && settings.target <= 1.0) {
        return Err(Error::Domain(format!(
            "target must be in (0, 1], got {}",
            settings.target
        )));
    }
    if settings.runs == 0 {
        return Err(Error::Domain("runs must be at least 1".into()));
    }
    uniform_budgets(m, settings.total_budget, settings.b_min)?;
    if settings.policy == Policy::Shapley && settings.coalition_quota < 2 {
        return Err(Error::Domain("coalition quota must be >= 2".into()));
    }

    let runs: Vec<RunOutcome> = (0..settings.runs)
        .into_par_iter()
        .map(|run| simulate_run(settings, run))
        .collect::<Result<_>>()?;
    let n = runs.len() as f64;
    let mean = runs.iter().map(|r| r.iterations as f64).sum::<f64>() / n;
    let var = runs
        .iter()
        .map(|r| (r.iterations as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    Ok(SimulationResult {
        policy: settings.policy,
        censored: runs.iter().filter(|r| r.censored).count(),
        runs,
        mean,
        std_dev: var.sqrt(),
    })
}

fn product(q: &[f64]) -> f64 {
    q.iter().product()
}

/// Generator for the candidate draws of one (run, iteration, step).
fn draw_stream(run_seed: u64, iteration: usize, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream(1 + ((iteration as u64) << 20) + step as u64);
    rng
}

fn simulate_run(settings: &SimulationSettings, run: usize) -> Result<RunOutcome> {
    let m = settings.steps.len();
    let run_seed = settings.seed.wrapping_add(run as u64);
    // Stream 0 drives policy decisions and measurement noise.
    let mut policy_rng = ChaCha8Rng::seed_from_u64(run_seed);
    let mut q: Vec<f64> = settings.steps.iter().map(|s| s.quality).collect();
    let mut budgets = uniform_budgets(m, settings.total_budget, settings.b_min)?.budgets;

    let mut iteration = 0;
    while product(&q) < settings.target {
        if iteration == settings.max_iterations {
            return Ok(RunOutcome {
                run,
                iterations: iteration,
                censored: true,
                final_score: product(&q),
            });
        }
        if settings.policy == Policy::Random {
            budgets = random_budgets(m, settings.total_budget, settings.b_min, &mut policy_rng)?.budgets;
        }
        let strong: Vec<f64> = (0..m)
            .map(|i| {
                let step = &settings.steps[i];
                let mut rng = draw_stream(run_seed, iteration, i);
                let best = (0..budgets[i])
                    .map(|_| rng.gen::<f64>().powi(DRAW_SKEW))
                    .fold(0.0, f64::max);
                (q[i] + step.rate * (step.cap - q[i]) * best).min(step.cap)
            })
            .collect();

        if settings.policy == Policy::Shapley {
            let probes = schedule_coalition_probes(m, settings.coalition_quota, policy_rng.gen())?;
            let samples: Vec<ValueSample> = probes
                .into_iter()
                .map(|z| {
                    let value = (0..m)
                        .map(|i| {
                            let base = if z.contains(i) { strong[i] } else { q[i] };
                            let jitter = settings.steps[i].noise * (2.0 * policy_rng.gen::<f64>() - 1.0);
                            (base * (1.0 + jitter)).clamp(0.0, 1.0)
                        })
                        .product();
                    ValueSample { coalition: z, value }
                })
                .collect();
            let phi = kernel_shap(&samples, m)?.phi;
            budgets = allocate_budgets(&phi, settings.total_budget, settings.b_min)?.budgets;
        }
        q = strong;
        iteration += 1;
    }
    Ok(RunOutcome {
        run,
        iterations: iteration,
        censored: false,
        final_score: product(&q),
    })
}

/// Plain-text table of per-policy results.
pub fn summary_table(results: &[SimulationResult]) -> String {
    let mut s = format!(
        "{:<10}{:>6}{:>10}{:>10}{:>10}\n",
        "policy", "runs", "mean", "std", "censored"
    );
    for r in results {
        s.push_str(&format!(
            "{:<10}{:>6}{:>10.3}{:>10.3}{:>10}\n",
            r.policy.to_string(),
            r.runs.len(),
            r.mean,
            r.std_dev,
            r.censored
        ));
    }
    s
}
