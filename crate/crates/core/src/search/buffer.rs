//! Bounded FIFO store of replayable episodes.

use std::collections::VecDeque;

use rand::Rng;

use super::rollout::Episode;

#[derive(Debug, Clone)]
pub struct ExperienceBuffer {
    capacity: usize,
    episodes: VecDeque<Episode>,
}

impl ExperienceBuffer {
    pub fn new(capacity: usize) -> Self {
        ExperienceBuffer {
            capacity,
            episodes: VecDeque::with_capacity(capacity.min(4096)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Appends an episode, evicting the oldest when full.
    pub fn push(&mut self, episode: Episode) {
        if self.capacity == 0 {
            return;
        }
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    pub fn clear(&mut self) {
        self.episodes.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }

    /// Draws `count` episodes uniformly with replacement.
    pub fn sample(&self, count: usize, rng: &mut impl Rng) -> Vec<Episode> {
        if self.episodes.is_empty() {
            return Vec::new();
        }
        (0..count)
            .map(|_| self.episodes[rng.gen_range(0..self.episodes.len())].clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ep(tag: usize) -> Episode {
        Episode {
            actions: vec![tag],
            masks: vec![vec![true]],
            log_probs: vec![0.0],
            values: vec![0.0],
            reward: 0.0,
            seeded: true,
        }
    }

    #[test]
    fn oldest_evicted_first() {
        let mut b = ExperienceBuffer::new(2);
        for t in 0..3 {
            b.push(ep(t));
        }
        let tags: Vec<usize> = b.iter().map(|e| e.actions[0]).collect();
        assert_eq!(tags, vec![1, 2]);
        assert_eq!(b.len(), 2);
    }
}
