//! Bounded FIFO replay memory with uniform without-replacement sampling.

use std::collections::VecDeque;

use rand::Rng;

use super::Experience;

#[derive(Debug, Clone)]
pub struct ReplayMemory<A> {
    buffer: VecDeque<Experience<A>>,
    capacity: usize,
}

impl<A: Copy> ReplayMemory<A> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            buffer: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn push(&mut self, experience: Experience<A>) {
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(experience);
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Uniform sample of `count` distinct experiences.
    pub fn sample<R: Rng>(&self, rng: &mut R, count: usize) -> Vec<&Experience<A>> {
        assert!(count <= self.buffer.len());
        rand::seq::index::sample(rng, self.buffer.len(), count)
            .into_iter()
            .map(|i| &self.buffer[i])
            .collect()
    }

    #[cfg(test)]
    pub(crate) fn iter(&self) -> impl Iterator<Item = &Experience<A>> {
        self.buffer.iter()
    }
}
