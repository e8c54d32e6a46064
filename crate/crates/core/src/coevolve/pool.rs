use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ActionMask, Observation};

/// Most recent observations (with their masks) seen across all members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePool {
    capacity: usize,
    items: VecDeque<(Observation, ActionMask)>,
}

impl StatePool {
    pub fn new(capacity: usize) -> Self {
        StatePool {
            capacity,
            items: VecDeque::with_capacity(capacity),
        }
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

    pub fn push(&mut self, obs: Observation, mask: ActionMask) {
        if self.capacity == 0 {
            return;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back((obs, mask));
    }

    /// Push `quota` evenly spaced entries of a rollout.
    pub fn absorb(&mut self, observations: &[Observation], masks: &[ActionMask], quota: usize) {
        let n = observations.len();
        let take = quota.min(n);
        for i in 0..take {
            let j = i * n / take;
            self.push(observations[j], masks[j]);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Observation, ActionMask)> {
        self.items.iter()
    }

    /// Uniform draw with replacement from the stored entries.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<(Observation, ActionMask)> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..k)
            .map(|_| self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;

    fn obs(v: f64) -> Observation {
        Observation([v; crate::domain::OBS_DIM])
    }

    #[test]
    fn ring_buffer_keeps_the_newest() {
        let mut pool = StatePool::new(3);
        for i in 0..5 {
            pool.push(obs(i as f64), ActionMask::ALL);
        }
        let kept: Vec<f64> = pool.iter().map(|(o, _)| o.0[0]).collect();
        assert_eq!(kept, [2.0, 3.0, 4.0]);
    }

    #[test]
    fn samples_come_from_the_pool() {
        let mut pool = StatePool::new(8);
        let rows: Vec<Observation> = (0..20).map(|i| obs(i as f64)).collect();
        pool.absorb(&rows, &[ActionMask::ALL; 20], 4);
        let kept: Vec<f64> = pool.iter().map(|(o, _)| o.0[0]).collect();
        assert_eq!(kept, [0.0, 5.0, 10.0, 15.0]);
        let mut rng = seeds::stream(1, &[]);
        for (o, _) in pool.sample(100, &mut rng) {
            assert!(kept.contains(&o.0[0]));
        }
        assert!(StatePool::new(2).sample(3, &mut rng).is_empty());
    }
}
