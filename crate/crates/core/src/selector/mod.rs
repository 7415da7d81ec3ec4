//! Pipeline-level prompt selection.
//!
//! Each step contributes a candidate set; a configuration picks one
//! candidate per step. The selector spends a fixed number of end-to-end
//! evaluations searching that product space. Part of the budget is reserved
//! for weak/strong coalition probes whose scores feed the Shapley estimate,
//! so attribution costs no extra pipeline runs.

mod probes;

use std::collections::{BTreeSet, HashMap};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shapley::{Coalition, ValueSample};

pub use probes::schedule_coalition_probes;

/// Spaces up to this size are searched by enumeration.
const ENUMERATION_LIMIT: u128 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Surrogate,
    Random,
    Exhaustive,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "surrogate" => Ok(Strategy::Surrogate),
            "random" => Ok(Strategy::Random),
            "exhaustive" => Ok(Strategy::Exhaustive),
            other => Err(Error::config(format!(
                "unknown selector strategy `{other}` (expected surrogate, random or exhaustive)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorSettings {
    pub budget: usize,
    pub coalition_quota: usize,
    pub strategy: Strategy,
    /// Weight of the `1 / sqrt(1 + visits)` exploration bonus.
    pub exploration: f64,
    pub seed: u64,
}

impl Default for SelectorSettings {
    fn default() -> Self {
        Self {
            budget: 8,
            coalition_quota: 4,
            strategy: Strategy::Surrogate,
            exploration: 0.05,
            seed: 0,
        }
    }
}

/// One candidate index per step; index 0 is the step's incumbent.
pub type Configuration = Vec<usize>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedConfig {
    pub configuration: Configuration,
    pub score: f64,
    /// Set when every step runs either its weak or its strong prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coalition_flag: Option<Coalition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub best: EvaluatedConfig,
    /// Evaluations in the order they were made.
    pub history: Vec<EvaluatedConfig>,
    /// Strong candidate index per step.
    pub strong: Vec<usize>,
    pub coalition_samples: Vec<ValueSample>,
    pub evaluator_calls: usize,
}

struct SelectorState<'e> {
    sizes: Vec<usize>,
    evaluator: &'e mut dyn FnMut(&[usize]) -> Result<f64>,
    history: Vec<EvaluatedConfig>,
    scores: HashMap<Configuration, f64>,
    budget_remaining: usize,
    stats: Vec<Vec<(f64, u32)>>,
}

impl SelectorState<'_> {
    fn evaluate(&mut self, config: &[usize]) -> Result<f64> {
        if let Some(s) = self.scores.get(config) {
            return Ok(*s);
        }
        let score = (self.evaluator)(config)?;
        if !score.is_finite() {
            return Err(Error::Domain(format!(
                "evaluator returned non-finite score for {config:?}"
            )));
        }
        self.budget_remaining -= 1;
        self.scores.insert(config.to_vec(), score);
        for (i, &c) in config.iter().enumerate() {
            let slot = &mut self.stats[i][c];
            slot.0 += score;
            slot.1 += 1;
        }
        self.history.push(EvaluatedConfig {
            configuration: config.to_vec(),
            score,
            coalition_flag: None,
        });
        Ok(score)
    }

    fn observed_mean(&self, step: usize, cand: usize) -> Option<f64> {
        let (sum, n) = self.stats[step][cand];
        (n > 0).then(|| sum / f64::from(n))
    }

    /// Per-step strong candidate: highest observed mean, ties toward the
    /// incumbent and then lower indices.
    fn strong(&self) -> Vec<usize> {
        (0..self.sizes.len())
            .map(|i| {
                let mut best = 0;
                let mut best_mean = self.observed_mean(i, 0).unwrap_or(f64::NEG_INFINITY);
                for c in 1..self.sizes[i] {
                    if let Some(mean) = self.observed_mean(i, c) {
                        if mean > best_mean {
                            best = c;
                            best_mean = mean;
                        }
                    }
                }
                best
            })
            .collect()
    }
}

fn space_size(sizes: &[usize]) -> u128 {
    sizes.iter().fold(1u128, |acc, &n| acc.saturating_mul(n as u128))
}

/// Mixed-radix successor with the last step varying fastest.
fn next_config(config: &mut [usize], sizes: &[usize]) -> bool {
    for i in (0..config.len()).rev() {
        config[i] += 1;
        if config[i] < sizes[i] {
            return true;
        }
        config[i] = 0;
    }
    false
}

fn all_configs(sizes: &[usize]) -> Vec<Configuration> {
    let mut out = Vec::new();
    let mut c = vec![0; sizes.len()];
    loop {
        out.push(c.clone());
        if !next_config(&mut c, sizes) {
            return out;
        }
    }
}

trait Explorer {
    fn propose(&mut self, state: &SelectorState<'_>) -> Option<Configuration>;
}

struct ExhaustiveExplorer {
    cursor: Option<Configuration>,
}

impl Explorer for ExhaustiveExplorer {
    fn propose(&mut self, state: &SelectorState<'_>) -> Option<Configuration> {
        loop {
            let next = match self.cursor.take() {
                None => vec![0; state.sizes.len()],
                Some(mut c) => {
                    if !next_config(&mut c, &state.sizes) {
                        return None;
                    }
                    c
                }
            };
            self.cursor = Some(next.clone());
            if !state.scores.contains_key(&next) {
                return Some(next);
            }
        }
    }
}

struct RandomExplorer {
    rng: ChaCha8Rng,
}

impl Explorer for RandomExplorer {
    fn propose(&mut self, state: &SelectorState<'_>) -> Option<Configuration> {
        if space_size(&state.sizes) <= ENUMERATION_LIMIT {
            let open: Vec<Configuration> = all_configs(&state.sizes)
                .into_iter()
                .filter(|c| !state.scores.contains_key(c))
                .collect();
            if open.is_empty() {
                return None;
            }
            let k = self.rng.gen_range(0..open.len());
            return open.into_iter().nth(k);
        }
        for _ in 0..10_000 {
            let c: Configuration = state.sizes.iter().map(|&n| self.rng.gen_range(0..n)).collect();
            if !state.scores.contains_key(&c) {
                return Some(c);
            }
        }
        None
    }
}

/// Additive surrogate: each candidate's mean observed score (the global mean
/// when unvisited) plus `exploration / sqrt(1 + visits)`; a configuration's
/// acquisition is the sum over steps.
struct SurrogateExplorer {
    exploration: f64,
    rng: ChaCha8Rng,
}

impl SurrogateExplorer {
    fn acquisition_table(&self, state: &SelectorState<'_>) -> Vec<Vec<f64>> {
        let global = if state.history.is_empty() {
            0.0
        } else {
            state.history.iter().map(|h| h.score).sum::<f64>() / state.history.len() as f64
        };
        (0..state.sizes.len())
            .map(|i| {
                (0..state.sizes[i])
                    .map(|c| {
                        let (_, n) = state.stats[i][c];
                        state.observed_mean(i, c).unwrap_or(global)
                            + self.exploration / (1.0 + f64::from(n)).sqrt()
                    })
                    .collect()
            })
            .collect()
    }
}

impl Explorer for SurrogateExplorer {
    fn propose(&mut self, state: &SelectorState<'_>) -> Option<Configuration> {
        let acq = self.acquisition_table(state);
        let value = |c: &[usize]| c.iter().enumerate().map(|(i, &k)| acq[i][k]).sum::<f64>();
        if space_size(&state.sizes) <= ENUMERATION_LIMIT {
            let mut best: Option<(f64, Configuration)> = None;
            for c in all_configs(&state.sizes) {
                if state.scores.contains_key(&c) {
                    continue;
                }
                let v = value(&c);
                if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
                    best = Some((v, c));
                }
            }
            return best.map(|(_, c)| c);
        }
        // Coordinate ascent on the additive acquisition from the best
        // configuration so far; one sweep reaches its maximum.
        let mut current = state
            .history
            .iter()
            .max_by(|a, b| a.score.total_cmp(&b.score))
            .map(|h| h.configuration.clone())
            .unwrap_or_else(|| vec![0; state.sizes.len()]);
        for (i, slot) in current.iter_mut().enumerate() {
            let row = &acq[i];
            *slot = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
        }
        if !state.scores.contains_key(&current) {
            return Some(current);
        }
        // Best single-step deviation that has not been evaluated yet.
        let mut best: Option<(f64, Configuration)> = None;
        for i in 0..current.len() {
            for c in 0..state.sizes[i] {
                if c == current[i] {
                    continue;
                }
                let mut n = current.clone();
                n[i] = c;
                if state.scores.contains_key(&n) {
                    continue;
                }
                let v = value(&n);
                if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
                    best = Some((v, n));
                }
            }
        }
        if let Some((_, c)) = best {
            return Some(c);
        }
        RandomExplorer {
            rng: self.rng.clone(),
        }
        .propose(state)
        .inspect(|_| {
            self.rng.gen::<u64>();
        })
    }
}

/// Searches `sizes[0] x ... x sizes[m-1]` for the best-scoring configuration.
///
/// The all-incumbent configuration is always evaluated first. The evaluator
/// is called once per distinct configuration, `min(budget, |space|)` times in
/// total. Ties on score resolve toward the incumbent, then toward
/// lexicographically lower index vectors.
pub fn select_configuration(
    sizes: &[usize],
    evaluator: &mut dyn FnMut(&[usize]) -> Result<f64>,
    settings: &SelectorSettings,
) -> Result<SelectionOutcome> {
    if sizes.is_empty() {
        return Err(Error::Domain("nothing to select: no steps".into()));
    }
    if sizes.contains(&0) {
        return Err(Error::contract(
            "every step needs at least its incumbent candidate",
        ));
    }
    if settings.budget == 0 {
        return Err(Error::config("selector budget must be at least 1"));
    }
    let m = sizes.len();
    let space = space_size(sizes);
    let budget = (settings.budget as u128).min(space) as usize;
    let quota = settings.coalition_quota.min(budget);

    let mut state = SelectorState {
        sizes: sizes.to_vec(),
        evaluator,
        history: Vec::new(),
        scores: HashMap::new(),
        budget_remaining: budget,
        stats: sizes.iter().map(|&n| vec![(0.0, 0); n]).collect(),
    };
    let mut explorer: Box<dyn Explorer> = match settings.strategy {
        Strategy::Exhaustive => Box::new(ExhaustiveExplorer { cursor: None }),
        Strategy::Random => Box::new(RandomExplorer {
            rng: ChaCha8Rng::seed_from_u64(settings.seed),
        }),
        Strategy::Surrogate => Box::new(SurrogateExplorer {
            exploration: settings.exploration,
            rng: ChaCha8Rng::seed_from_u64(settings.seed),
        }),
    };

    let incumbent = vec![0; m];
    state.evaluate(&incumbent)?;

    // Free exploration, keeping quota - 1 evaluations for coalition probes
    // (the all-weak probe is the incumbent, already paid for).
    let reserved = quota.saturating_sub(1);
    while state.budget_remaining > reserved {
        match explorer.propose(&state) {
            Some(c) => {
                state.evaluate(&c)?;
            }
            None => break,
        }
    }

    let strong = state.strong();
    let to_config = |z: &Coalition| -> Configuration {
        (0..m)
            .map(|i| if z.contains(i) { strong[i] } else { 0 })
            .collect()
    };
    let mut samples: Vec<ValueSample> = Vec::new();
    let mut sampled: BTreeSet<Coalition> = BTreeSet::new();
    if quota >= 2 {
        for z in schedule_coalition_probes(m, quota, settings.seed)? {
            let config = to_config(&z);
            if !state.scores.contains_key(&config) {
                if state.budget_remaining == 0 {
                    continue;
                }
                state.evaluate(&config)?;
            }
            samples.push(ValueSample {
                coalition: z.clone(),
                value: state.scores[&config],
            });
            sampled.insert(z);
        }
    }

    while state.budget_remaining > 0 {
        match explorer.propose(&state) {
            Some(c) => {
                state.evaluate(&c)?;
            }
            None => break,
        }
    }

    // Flag every pure weak/strong evaluation and add it to the samples.
    for entry in state.history.iter_mut() {
        let pure = entry
            .configuration
            .iter()
            .zip(&strong)
            .all(|(&c, &s)| c == 0 || c == s);
        if !pure {
            continue;
        }
        let z = Coalition::new(
            entry
                .configuration
                .iter()
                .zip(&strong)
                .map(|(&c, &s)| s != 0 && c == s)
                .collect(),
        );
        if sampled.insert(z.clone()) {
            samples.push(ValueSample {
                coalition: z.clone(),
                value: entry.score,
            });
        }
        entry.coalition_flag = Some(z);
    }

    let best = state
        .history
        .iter()
        .min_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.configuration.cmp(&b.configuration))
        })
        .cloned()
        .expect("incumbent evaluated");

    Ok(SelectionOutcome {
        best,
        evaluator_calls: state.history.len(),
        history: state.history,
        strong,
        coalition_samples: samples,
    })
}
