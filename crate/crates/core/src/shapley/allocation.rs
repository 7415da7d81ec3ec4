use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Added to every clipped contribution so zero-contribution steps still
/// receive a share of the weight.
pub const PHI_EPSILON: f64 = 1e-6;

/// Per-step candidate budgets, positional in pipeline step order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetAllocation {
    pub budgets: Vec<usize>,
    pub total: usize,
    pub b_min: usize,
}

impl BudgetAllocation {
    pub fn sum(&self) -> usize {
        self.budgets.iter().sum()
    }
}

fn check_feasible(m: usize, total: usize, b_min: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::Domain("cannot allocate budget over zero steps".into()));
    }
    if b_min == 0 {
        return Err(Error::Domain("b_min must be at least 1".into()));
    }
    if total < m * b_min {
        return Err(Error::InfeasibleBudget {
            total,
            steps: m,
            b_min,
        });
    }
    Ok(())
}

/// Splits `total` proportionally to `max(phi_i, 0)` (rescaled so the largest
/// positive contribution is 1) plus [`PHI_EPSILON`].
///
/// Steps whose proportional share falls below `b_min` are pinned to `b_min`
/// and the rest is re-split among the others until every share clears the
/// floor. Shares are rounded by largest remainder; ties go to the larger
/// contribution, then the lower index.
pub fn allocate_budgets(phi: &[f64], total: usize, b_min: usize) -> Result<BudgetAllocation> {
    let m = phi.len();
    check_feasible(m, total, b_min)?;
    let clipped: Vec<f64> = phi
        .iter()
        .map(|p| if p.is_finite() { p.max(0.0) } else { 0.0 })
        .collect();
    let top = clipped.iter().cloned().fold(0.0, f64::max);
    let weights: Vec<f64> = if top > 0.0 {
        clipped.iter().map(|p| p / top + PHI_EPSILON).collect()
    } else {
        vec![1.0; m]
    };
    let order_key: Vec<f64> = phi
        .iter()
        .map(|p| if p.is_nan() { f64::NEG_INFINITY } else { *p })
        .collect();
    Ok(split(&weights, &order_key, total, b_min))
}

fn split(weights: &[f64], order_key: &[f64], total: usize, b_min: usize) -> BudgetAllocation {
    let m = weights.len();
    let mut pinned = vec![false; m];
    let mut shares = vec![0.0; m];
    loop {
        let n_pinned = pinned.iter().filter(|&&p| p).count();
        let remaining = (total - n_pinned * b_min) as f64;
        let wsum: f64 = (0..m).filter(|&i| !pinned[i]).map(|i| weights[i]).sum();
        let mut changed = false;
        let free: Vec<usize> = (0..m).filter(|&i| !pinned[i]).collect();
        for i in free {
            shares[i] = remaining * weights[i] / wsum;
            if shares[i] < b_min as f64 {
                pinned[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut budgets: Vec<usize> = (0..m)
        .map(|i| {
            if pinned[i] {
                b_min
            } else {
                shares[i].floor() as usize
            }
        })
        .collect();
    let mut leftover = total - budgets.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..m).filter(|&i| !pinned[i]).collect();
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.total_cmp(&fa)
            .then(order_key[b].total_cmp(&order_key[a]))
            .then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        budgets[i] += 1;
        leftover -= 1;
    }
    BudgetAllocation {
        budgets,
        total,
        b_min,
    }
}

/// Equal split; any remainder goes to the lowest-indexed steps.
pub fn uniform_budgets(m: usize, total: usize, b_min: usize) -> Result<BudgetAllocation> {
    check_feasible(m, total, b_min)?;
    Ok(split(&vec![1.0; m], &vec![0.0; m], total, b_min))
}

/// Random split: every step gets `b_min`, each remaining unit goes to a
/// uniformly random step.
pub fn random_budgets<R: Rng + ?Sized>(
    m: usize,
    total: usize,
    b_min: usize,
    rng: &mut R,
) -> Result<BudgetAllocation> {
    check_feasible(m, total, b_min)?;
    let mut budgets = vec![b_min; m];
    for _ in 0..total - m * b_min {
        budgets[rng.gen_range(0..m)] += 1;
    }
    Ok(BudgetAllocation {
        budgets,
        total,
        b_min,
    })
}
