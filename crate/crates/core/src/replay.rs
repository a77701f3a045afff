//! Per-agent FIFO experience buffer with half-fresh batch sampling.

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::AgentState;
use crate::error::{Error, Result};

/// One transition as seen by a single agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub state: AgentState,
    /// Executed action: hard one-hots for edges, bandwidth shares for the center.
    pub action: Vec<f64>,
    pub penalty: f64,
    pub next_state: AgentState,
}

#[derive(Debug, Clone)]
pub struct ExperienceBuffer {
    capacity: usize,
    items: VecDeque<Experience>,
}

pub const DEFAULT_CAPACITY: usize = 4096;

impl ExperienceBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("buffer_capacity", "must be >= 1"));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Item by insertion order, 0 = oldest retained.
    pub fn get(&self, i: usize) -> Option<&Experience> {
        self.items.get(i)
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
    }

    /// Buffer positions of a batch: the newest `ceil(B/2)` followed by
    /// `floor(B/2)` distinct older positions drawn uniformly.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        let n = self.items.len();
        if batch == 0 || n < batch {
            return Err(Error::InsufficientData { needed: batch.max(1), available: n });
        }
        let fresh = batch.div_ceil(2);
        let random = batch / 2;
        let mut out: Vec<usize> = (n - fresh..n).collect();
        let older = n - fresh;
        let drawn = random.min(older);
        out.extend(index::sample(rng, older, drawn).into_iter());
        // Only reachable if the older region is too small: extend downward from the fresh block.
        let mut next = n - fresh;
        while out.len() < batch {
            next -= 1;
            if !out.contains(&next) {
                out.push(next);
            }
        }
        Ok(out)
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Experience>> {
        Ok(self.sample_indices(batch, rng)?.into_iter().map(|i| &self.items[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exp(tag: f64) -> Experience {
        let s = AgentState::unmasked(None, vec![tag]);
        Experience { state: s.clone(), action: vec![1.0], penalty: tag, next_state: s }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ExperienceBuffer::new(3).unwrap();
        for i in 0..4 {
            b.push(exp(i as f64));
            assert!(b.len() <= 3);
        }
        let tags: Vec<f64> = (0..3).map(|i| b.get(i).unwrap().penalty).collect();
        assert_eq!(tags, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn single_item_batch() {
        let mut b = ExperienceBuffer::new(5).unwrap();
        b.push(exp(7.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(b.sample(1, &mut rng).unwrap()[0].penalty, 7.0);
    }

    #[test]
    fn insufficient_data() {
        let mut b = ExperienceBuffer::new(10).unwrap();
        b.push(exp(0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(b.sample(2, &mut rng), Err(Error::InsufficientData { needed: 2, available: 1 })));
        assert!(ExperienceBuffer::new(0).is_err());
    }

    #[test]
    fn full_batch_returns_everything() {
        let mut b = ExperienceBuffer::new(16).unwrap();
        for i in 0..9 {
            b.push(exp(i as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut idx = b.sample_indices(9, &mut rng).unwrap();
        idx.sort();
        assert_eq!(idx, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn fresh_half_always_present_and_old_half_uniform() {
        let mut b = ExperienceBuffer::new(1000).unwrap();
        for i in 0..1000 {
            b.push(exp(i as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rounds = 10_000;
        let mut counts = vec![0usize; 950];
        for _ in 0..rounds {
            let idx = b.sample_indices(100, &mut rng).unwrap();
            let mut seen = idx.clone();
            seen.sort();
            seen.dedup();
            assert_eq!(seen.len(), 100);
            for i in 950..1000 {
                assert!(idx.contains(&i));
            }
            for &i in idx.iter().filter(|&&i| i < 950) {
                counts[i] += 1;
            }
        }
        let p = 50.0 / 950.0;
        let mean = rounds as f64 * p;
        let sigma = (rounds as f64 * p * (1.0 - p)).sqrt();
        let outside = counts.iter().filter(|&&c| (c as f64 - mean).abs() > 3.0 * sigma).count();
        // Expected ~0.27% of 950 cells beyond 3 sigma.
        assert!(outside <= 8, "{outside} cells outside 3 sigma");
        assert!(counts.iter().all(|&c| (c as f64 - mean).abs() < 5.0 * sigma));
    }

    #[test]
    fn odd_batch_split() {
        let mut b = ExperienceBuffer::new(50).unwrap();
        for i in 0..20 {
            b.push(exp(i as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let idx = b.sample_indices(7, &mut rng).unwrap();
        assert_eq!(&idx[..4], &[16, 17, 18, 19]);
        assert!(idx[4..].iter().all(|&i| i < 16));
    }

    #[test]
    fn seeded_sampling_reproducible() {
        let mut b = ExperienceBuffer::new(100).unwrap();
        for i in 0..100 {
            b.push(exp(i as f64));
        }
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5).map(|_| b.sample_indices(20, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(4), draw(4));
    }
}
