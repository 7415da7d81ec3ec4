use std::collections::HashMap;

use super::{Coalition, ContributionEstimate, EstimateMethod, ValueSample};
use crate::error::{Error, Result};

/// Widest game `exact_shapley` accepts (2^20 table entries).
pub const MAX_EXACT_STEPS: usize = 20;

/// Coalition value table keyed by bit mask (bit `i` is step `i`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValueTable {
    m: usize,
    values: HashMap<u64, f64>,
}

impl ValueTable {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            values: HashMap::new(),
        }
    }

    /// Builds a complete table from a closure over masks.
    pub fn from_fn(m: usize, f: impl Fn(u64) -> f64) -> Self {
        let values = (0..1u64 << m).map(|mask| (mask, f(mask))).collect();
        Self { m, values }
    }

    /// Later samples for the same coalition overwrite earlier ones.
    pub fn from_samples(m: usize, samples: &[ValueSample]) -> Result<Self> {
        let mut t = Self::new(m);
        for s in samples {
            if s.coalition.len() != m {
                return Err(Error::Domain(format!(
                    "coalition {} has width {}, expected {m}",
                    s.coalition,
                    s.coalition.len()
                )));
            }
            t.insert(&s.coalition, s.value);
        }
        Ok(t)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn insert(&mut self, coalition: &Coalition, value: f64) {
        self.values.insert(coalition.mask(), value);
    }

    pub fn get(&self, mask: u64) -> Option<f64> {
        self.values.get(&mask).copied()
    }

    pub fn is_complete(&self) -> bool {
        self.m <= MAX_EXACT_STEPS && (0..1u64 << self.m).all(|k| self.values.contains_key(&k))
    }
}

/// Shapley weight for a coalition of size `s` in an `m`-player game:
/// `s! (m - s - 1)! / m!`, evaluated as `1 / (m * C(m - 1, s))`.
pub fn shapley_weight(s: usize, m: usize) -> Result<f64> {
    if s >= m {
        return Err(Error::Domain(format!(
            "shapley weight needs s < m, got s={s}, m={m}"
        )));
    }
    Ok(1.0 / (m as f64 * binomial(m - 1, s)))
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Exact Shapley values by summing weighted marginal contributions over
/// every coalition. Needs all `2^m` entries.
pub fn exact_shapley(table: &ValueTable, m: usize) -> Result<ContributionEstimate> {
    if m == 0 || m > MAX_EXACT_STEPS {
        return Err(Error::Domain(format!(
            "exact Shapley needs 1 <= m <= {MAX_EXACT_STEPS}, got {m}"
        )));
    }
    if table.m() != m {
        return Err(Error::Domain(format!(
            "table is for {} steps, asked for {m}",
            table.m()
        )));
    }
    let full = 1u64 << m;
    let missing: Vec<u64> = (0..full).filter(|k| table.get(*k).is_none()).collect();
    if !missing.is_empty() {
        let mut names: Vec<String> = missing
            .iter()
            .take(16)
            .map(|&k| Coalition::from_mask(k, m).to_string())
            .collect();
        if missing.len() > 16 {
            names.push(format!("... ({} more)", missing.len() - 16));
        }
        return Err(Error::MissingCoalitions(names));
    }
    let weights: Vec<f64> = (0..m).map(|s| shapley_weight(s, m).expect("s < m")).collect();
    let value = |k: u64| table.get(k).expect("table checked complete");
    let mut phi = vec![0.0; m];
    for (i, slot) in phi.iter_mut().enumerate() {
        let bit = 1u64 << i;
        let mut acc = Kahan::default();
        for s in (0..full).filter(|s| s & bit == 0) {
            let size = s.count_ones() as usize;
            acc.add(weights[size] * (value(s | bit) - value(s)));
        }
        *slot = acc.sum();
    }
    Ok(ContributionEstimate {
        phi,
        method: EstimateMethod::Exact,
        residual: 0.0,
        regularized: false,
    })
}

#[derive(Default)]
struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    fn sum(&self) -> f64 {
        self.sum
    }
}
