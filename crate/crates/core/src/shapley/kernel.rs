//! Kernel SHAP with the empty and full coalitions imposed as constraints.
//!
//! Fits `v(z) ~ v(empty) + z . phi` by weighted least squares over the
//! interior samples (0 < |z| < m) with Shapley kernel weights, subject to
//! `sum(phi) = v(full) - v(empty)`. The constraint is eliminated by
//! substituting the last coefficient. On a complete design the fit is the
//! exact Shapley value.

use nalgebra::{DMatrix, DVector};

use super::exact::binomial;
use super::{ContributionEstimate, EstimateMethod, ValueSample};
use crate::error::{Error, Result};

/// Shapley kernel `(m - 1) / (C(m, s) * s * (m - s))` for `0 < s < m`.
pub fn kernel_weight(s: usize, m: usize) -> f64 {
    assert!(s > 0 && s < m, "kernel weight is only defined for interior sizes");
    (m - 1) as f64 / (binomial(m, s) * s as f64 * (m - s) as f64)
}

pub fn kernel_shap(samples: &[ValueSample], m: usize) -> Result<ContributionEstimate> {
    if m == 0 {
        return Err(Error::Domain("kernel SHAP needs at least one step".into()));
    }
    if let Some(bad) = samples.iter().find(|s| s.coalition.len() != m) {
        return Err(Error::Domain(format!(
            "coalition {} has width {}, expected {m}",
            bad.coalition,
            bad.coalition.len()
        )));
    }
    if samples.iter().any(|s| !s.value.is_finite()) {
        return Err(Error::Domain("sample value is not finite".into()));
    }
    let mean_at = |size: usize| -> Option<f64> {
        let vals: Vec<f64> = samples
            .iter()
            .filter(|s| s.coalition.size() == size)
            .map(|s| s.value)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let (v_empty, v_full) = match (mean_at(0), mean_at(m)) {
        (Some(e), Some(f)) => (e, f),
        _ => {
            return Err(Error::contract(
                "kernel SHAP needs samples for both the all-weak and all-strong coalitions",
            ))
        }
    };
    let total = v_full - v_empty;
    if m == 1 {
        return Ok(ContributionEstimate {
            phi: vec![total],
            method: EstimateMethod::KernelShap,
            residual: 0.0,
            regularized: false,
        });
    }

    let interior: Vec<&ValueSample> = samples
        .iter()
        .filter(|s| {
            let k = s.coalition.size();
            k > 0 && k < m
        })
        .collect();
    let free = m - 1;
    let prior = total / m as f64;

    // Unknowns: delta_j = phi_j - prior for j < m-1; phi_{m-1} absorbs the constraint.
    let mut gram = DMatrix::<f64>::zeros(free, free);
    let mut rhs = DVector::<f64>::zeros(free);
    let mut row = vec![0.0; free];
    for s in &interior {
        let w = kernel_weight(s.coalition.size(), m);
        let last = f64::from(u8::from(s.coalition.contains(m - 1)));
        for (j, r) in row.iter_mut().enumerate() {
            *r = f64::from(u8::from(s.coalition.contains(j))) - last;
        }
        let baseline = v_empty + last * total + prior * row.iter().sum::<f64>();
        let y = s.value - baseline;
        for a in 0..free {
            if row[a] == 0.0 {
                continue;
            }
            rhs[a] += w * row[a] * y;
            for b in 0..free {
                gram[(a, b)] += w * row[a] * row[b];
            }
        }
    }

    let eig = gram.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let regularized = min_eig.is_nan() || min_eig <= 1e-10 * max_eig.max(1e-12);
    let mut system = gram;
    if regularized {
        // Ridge toward the uniform split, symmetric over all m coefficients.
        let lambda = 1e-8 * max_eig.max(1e-4);
        for a in 0..free {
            for b in 0..free {
                system[(a, b)] += lambda * if a == b { 2.0 } else { 1.0 };
            }
        }
    }
    let delta = system
        .cholesky()
        .ok_or_else(|| Error::Domain("kernel SHAP normal equations are not positive definite".into()))?
        .solve(&rhs);

    let mut phi: Vec<f64> = delta.iter().map(|d| prior + d).collect();
    let head: f64 = phi.iter().sum();
    phi.push(total - head);

    let residual = interior
        .iter()
        .map(|s| {
            let fit: f64 = v_empty
                + (0..m)
                    .filter(|&i| s.coalition.contains(i))
                    .map(|i| phi[i])
                    .sum::<f64>();
            kernel_weight(s.coalition.size(), m) * (s.value - fit).powi(2)
        })
        .sum();

    Ok(ContributionEstimate {
        phi,
        method: EstimateMethod::KernelShap,
        residual,
        regularized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapley::Coalition;

    fn sample(z: &str, v: f64) -> ValueSample {
        ValueSample {
            coalition: z.parse().unwrap(),
            value: v,
        }
    }

    #[test]
    fn kernel_weights_three_players() {
        // (m-1)/(C(3,1)*1*2) = 2/6
        assert!((kernel_weight(1, 3) - 1.0 / 3.0).abs() < 1e-15);
        assert!((kernel_weight(2, 3) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn endpoints_only_splits_uniformly_and_flags() {
        let est = kernel_shap(&[sample("000", 0.2), sample("111", 0.8)], 3).unwrap();
        assert!(est.regularized);
        for p in &est.phi {
            assert!((p - 0.2).abs() < 1e-9);
        }
    }

    #[test]
    fn missing_endpoint_is_contract_error() {
        let err = kernel_shap(&[sample("000", 0.2), sample("110", 0.8)], 3).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn single_step_takes_whole_gain() {
        let est = kernel_shap(&[sample("0", 0.25), sample("1", 0.75)], 1).unwrap();
        assert_eq!(est.phi, vec![0.5]);
    }

    #[test]
    fn efficiency_holds_for_partial_designs() {
        let samples = vec![
            sample("0000", 0.1),
            sample("1111", 0.9),
            sample("1000", 0.4),
            sample("0110", 0.3),
            sample("0011", 0.5),
        ];
        let est = kernel_shap(&samples, 4).unwrap();
        assert!((est.phi.iter().sum::<f64>() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn additive_game_exact_from_sparse_rows() {
        let c = [0.05, 0.1, 0.2, 0.15];
        let v = |z: &Coalition| 0.3 + (0..4).filter(|&i| z.contains(i)).map(|i| c[i]).sum::<f64>();
        let zs = ["0000", "1111", "1000", "0100", "0010", "1100"];
        let samples: Vec<_> = zs
            .iter()
            .map(|z| {
                let c: Coalition = z.parse().unwrap();
                ValueSample {
                    value: v(&c),
                    coalition: c,
                }
            })
            .collect();
        let est = kernel_shap(&samples, 4).unwrap();
        assert!(!est.regularized);
        for (p, e) in est.phi.iter().zip(c) {
            assert!((p - e).abs() < 1e-9, "{p} vs {e}");
        }
        assert!(est.residual < 1e-20);
    }
}
