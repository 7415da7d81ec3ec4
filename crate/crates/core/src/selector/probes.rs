use std::collections::HashSet;

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::shapley::Coalition;

/// Chooses which weak/strong coalitions the selector evaluates.
///
/// The all-weak and all-strong coalitions always come first. When `quota`
/// covers all `2^m` coalitions they are enumerated in mask order. Otherwise
/// the rest are drawn without duplicates: a size `s` with probability
/// proportional to `(m - 1) / (s (m - s))` (the total Shapley kernel mass of
/// that size), then a uniformly random subset of that size.
pub fn schedule_coalition_probes(m: usize, quota: usize, seed: u64) -> Result<Vec<Coalition>> {
    if m == 0 {
        return Err(Error::Domain("coalitions need at least one step".into()));
    }
    if quota < 2 {
        return Err(Error::Domain(format!(
            "coalition quota must be >= 2, got {quota}"
        )));
    }
    if m < 63 && quota >= 1usize << m {
        let mut all: Vec<Coalition> = (0..1u64 << m).map(|k| Coalition::from_mask(k, m)).collect();
        // Full coalition second, matching the sampled layout.
        let full = all.pop().expect("2^m >= 2");
        all.insert(1, full);
        return Ok(all);
    }

    let mut out = vec![Coalition::empty(m), Coalition::full(m)];
    let mut seen: HashSet<Coalition> = out.iter().cloned().collect();
    let size_mass: Vec<f64> = (1..m).map(|s| (m - 1) as f64 / (s * (m - s)) as f64).collect();
    let total_mass: f64 = size_mass.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while out.len() < quota {
        let mut u = rng.gen::<f64>() * total_mass;
        let mut size = m - 1;
        for (k, w) in size_mass.iter().enumerate() {
            if u < *w {
                size = k + 1;
                break;
            }
            u -= w;
        }
        let mut bits = vec![false; m];
        for i in sample(&mut rng, m, size).iter() {
            bits[i] = true;
        }
        let c = Coalition::new(bits);
        if seen.insert(c.clone()) {
            out.push(c);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(v: &[Coalition]) -> Vec<String> {
        v.iter().map(ToString::to_string).collect()
    }

    #[test]
    fn single_step_has_two_coalitions() {
        assert_eq!(strs(&schedule_coalition_probes(1, 2, 0).unwrap()), vec!["0", "1"]);
    }

    #[test]
    fn quota_at_or_above_space_enumerates() {
        let all = schedule_coalition_probes(3, 8, 0).unwrap();
        assert_eq!(
            strs(&all),
            vec!["000", "111", "100", "010", "110", "001", "101", "011"]
        );
        assert_eq!(schedule_coalition_probes(3, 100, 0).unwrap().len(), 8);
    }

    #[test]
    fn quota_below_two_is_rejected() {
        assert!(schedule_coalition_probes(3, 1, 0).is_err());
    }

    #[test]
    fn sampled_schedule_has_endpoints_and_no_duplicates() {
        for seed in 0..20 {
            let s = schedule_coalition_probes(8, 64, seed).unwrap();
            assert_eq!(s.len(), 64);
            assert_eq!(s[0], Coalition::empty(8));
            assert_eq!(s[1], Coalition::full(8));
            let set: HashSet<_> = s.iter().collect();
            assert_eq!(set.len(), 64);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(
            schedule_coalition_probes(6, 10, 42).unwrap(),
            schedule_coalition_probes(6, 10, 42).unwrap()
        );
    }
}
