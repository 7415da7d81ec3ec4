use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Draws minibatches without replacement within each epoch; every index is
/// visited exactly once per epoch. A batch that straddles two epochs never
/// repeats an index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochSampler {
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    seed: u64,
}

impl EpochSampler {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut s = Self {
            order: (0..n).collect(),
            cursor: 0,
            epoch: 0,
            seed,
        };
        s.shuffle();
        s
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    fn shuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.epoch);
        self.order.sort_unstable();
        self.order.shuffle(&mut rng);
        self.cursor = 0;
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let n = self.order.len();
        let size = size.min(n);
        let mut batch: Vec<usize> = Vec::with_capacity(size);
        while batch.len() < size {
            if self.cursor == n {
                self.epoch += 1;
                self.shuffle();
            }
            // Pull the next index not already in this batch forward; one
            // exists because the batch is smaller than the dataset.
            let j = (self.cursor..n)
                .find(|&j| !batch.contains(&self.order[j]))
                .expect("an unused index remains in the epoch");
            self.order.swap(self.cursor, j);
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn epochs_cover_each_index_once(n in 1usize..30, size in 1usize..12, seed in 0u64..100) {
            let mut s = EpochSampler::new(n, seed);
            let mut drawn = Vec::new();
            while drawn.len() < 3 * n {
                let batch = s.next_batch(size);
                let mut uniq = batch.clone();
                uniq.sort_unstable();
                uniq.dedup();
                prop_assert_eq!(uniq.len(), batch.len());
                drawn.extend(batch);
            }
            for epoch in drawn.chunks(n).take(3) {
                let mut e = epoch.to_vec();
                e.sort_unstable();
                prop_assert_eq!(e, (0..n).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn first_epoch_is_a_permutation() {
        let mut s = EpochSampler::new(7, 3);
        let mut seen: Vec<usize> = (0..7).flat_map(|_| s.next_batch(1)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
        assert_eq!(s.epoch(), 0);
        s.next_batch(1);
        assert_eq!(s.epoch(), 1);
    }
}
