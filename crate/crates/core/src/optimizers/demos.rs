use std::collections::HashSet;

use crate::pipeline::Demonstration;

/// `1 - |A ∩ B| / |A ∪ B|` over whitespace token sets; 0 when both are empty.
pub fn jaccard_distance(a: &str, b: &str) -> f64 {
    let a: HashSet<&str> = a.split_whitespace().collect();
    let b: HashSet<&str> = b.split_whitespace().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    1.0 - a.intersection(&b).count() as f64 / union as f64
}

/// Smallest pairwise input distance within `indices` (infinite below two items).
pub fn min_pairwise_distance(pairs: &[Demonstration], indices: &[usize]) -> f64 {
    let mut best = f64::INFINITY;
    for (n, &i) in indices.iter().enumerate() {
        for &j in &indices[n + 1..] {
            best = best.min(jaccard_distance(&pairs[i].input, &pairs[j].input));
        }
    }
    best
}

/// Picks `min(k, len)` pairs whose inputs are spread out: the farthest pair
/// first, then repeatedly the pair farthest from everything already picked.
/// Ties go to the earlier pair. Returns indices in dataset order.
pub fn select_demonstrations(pairs: &[Demonstration], k: usize) -> Vec<usize> {
    let n = pairs.len();
    if k >= n {
        return (0..n).collect();
    }
    match k {
        0 => return Vec::new(),
        1 => return vec![0],
        _ => {}
    }
    let dist = |i: usize, j: usize| jaccard_distance(&pairs[i].input, &pairs[j].input);
    let mut first = (0, 1);
    let mut first_d = f64::NEG_INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let d = dist(i, j);
            if d > first_d {
                first = (i, j);
                first_d = d;
            }
        }
    }
    let mut chosen = vec![first.0, first.1];
    while chosen.len() < k {
        let mut best = None;
        let mut best_d = f64::NEG_INFINITY;
        for c in (0..n).filter(|c| !chosen.contains(c)) {
            let d = chosen.iter().map(|&s| dist(c, s)).fold(f64::INFINITY, f64::min);
            if d > best_d {
                best = Some(c);
                best_d = d;
            }
        }
        chosen.push(best.expect("k < n leaves a candidate"));
    }
    chosen.sort_unstable();
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo(input: &str) -> Demonstration {
        Demonstration {
            input: input.into(),
            output: "o".into(),
        }
    }

    #[test]
    fn jaccard_basics() {
        assert_eq!(jaccard_distance("a b", "a b"), 0.0);
        assert_eq!(jaccard_distance("a b", "c d"), 1.0);
        assert!((jaccard_distance("a b", "b c") - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard_distance("", ""), 0.0);
    }

    #[test]
    fn degenerate_sizes() {
        let p = vec![demo("a"), demo("b")];
        assert!(select_demonstrations(&p, 0).is_empty());
        assert_eq!(select_demonstrations(&p, 1), vec![0]);
        assert_eq!(select_demonstrations(&p, 5), vec![0, 1]);
    }

    #[test]
    fn picks_spread_out_inputs() {
        let p = vec![demo("x y z"), demo("x y w"), demo("p q r"), demo("x y z w")];
        assert_eq!(select_demonstrations(&p, 2), vec![0, 2]);
    }
}
