//! Step contribution estimates and budget reallocation.
//!
//! A coalition marks, per step, whether the step ran its strong (this
//! round's best) prompt or its weak (previous) prompt. The end-to-end score
//! of that assignment is the coalition's value. Contributions are Shapley
//! values of that game, computed exactly from a complete table or estimated
//! with Kernel SHAP from the coalitions that happened to be evaluated.

mod allocation;
mod exact;
mod kernel;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use allocation::{allocate_budgets, random_budgets, uniform_budgets, BudgetAllocation, PHI_EPSILON};
pub use exact::{exact_shapley, shapley_weight, ValueTable, MAX_EXACT_STEPS};
pub use kernel::{kernel_shap, kernel_weight};

/// Bit `i` set means step `i` uses its strong prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coalition(Vec<bool>);

impl Coalition {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn empty(m: usize) -> Self {
        Self(vec![false; m])
    }

    pub fn full(m: usize) -> Self {
        Self(vec![true; m])
    }

    /// Coalition from the low `m` bits of `mask` (bit `i` is step `i`).
    pub fn from_mask(mask: u64, m: usize) -> Self {
        Self((0..m).map(|i| mask >> i & 1 == 1).collect())
    }

    pub fn mask(&self) -> u64 {
        assert!(self.0.len() <= 64, "coalition wider than 64 steps");
        self.0
            .iter()
            .enumerate()
            .fold(0, |acc, (i, &b)| acc | (u64::from(b) << i))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn size(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }
}

impl fmt::Display for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for Coalition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Domain(format!("coalition bit-string contains `{other}`"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Coalition)
    }
}

impl Serialize for Coalition {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Coalition {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One observed coalition value. Serialized as `{"z": "0101", "v": 0.5}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSample {
    #[serde(rename = "z")]
    pub coalition: Coalition,
    #[serde(rename = "v")]
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    Exact,
    KernelShap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionEstimate {
    pub phi: Vec<f64>,
    pub method: EstimateMethod,
    /// Kernel-weighted residual sum of squares of the fit (0 for exact).
    pub residual: f64,
    /// Set when the design was rank-deficient and a ridge term was added.
    #[serde(default)]
    pub regularized: bool,
}

/// Reads line-delimited `{z, v}` records. All coalitions must share a width.
pub fn parse_samples(text: &str) -> Result<(Vec<ValueSample>, usize)> {
    let mut samples = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s: ValueSample = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: "<samples>".into(),
            line: i + 1,
            message: e.to_string(),
        })?;
        match width {
            None => width = Some(s.coalition.len()),
            Some(w) if w != s.coalition.len() => {
                return Err(Error::Parse {
                    path: "<samples>".into(),
                    line: i + 1,
                    message: format!("coalition width {} differs from {w}", s.coalition.len()),
                })
            }
            _ => {}
        }
        if !s.value.is_finite() {
            return Err(Error::Parse {
                path: "<samples>".into(),
                line: i + 1,
                message: "value is not finite".into(),
            });
        }
        samples.push(s);
    }
    let m = width.unwrap_or(0);
    Ok((samples, m))
}
