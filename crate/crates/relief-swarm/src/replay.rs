//! Experience storage: transition records and the ring-buffer pool they
//! live in.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grid::CellIndex;
use crate::obs::{GlobalChannels, LocalFeatures};

/// One replay entry. Channels are stored raw (never pre-embedded) so conv
/// gradients flow when the record is replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub channels_t: GlobalChannels,
    pub channels_t1: GlobalChannels,
    pub locals_t: Vec<LocalFeatures>,
    pub locals_t1: Vec<LocalFeatures>,
    /// Action masks at t+1, for the bootstrapped masked max.
    pub masks_t1: Vec<Vec<CellIndex>>,
    pub actions: Vec<CellIndex>,
    pub reward: f64,
    /// The te^t factor: 1.0 while the episode continues, 0.0 on the final
    /// transition.
    pub te: f64,
}

/// Fixed-capacity ring buffer over [`TransitionRecord`]; overwrites oldest
/// first. Sampling is uniform (independent draws) from a seeded generator.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<TransitionRecord>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1024)),
            next: 0,
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

    pub fn push(&mut self, record: TransitionRecord) {
        if self.items.len() < self.capacity {
            self.items.push(record);
        } else {
            self.items[self.next] = record;
            self.next = (self.next + 1) % self.capacity;
        }
    }

    pub fn get(&self, index: usize) -> &TransitionRecord {
        &self.items[index]
    }

    /// Uniform minibatch indices.
    pub fn sample_indices(&self, batch: usize, rng: &mut impl Rng) -> Vec<usize> {
        (0..batch).map(|_| rng.gen_range(0..self.items.len())).collect()
    }
}
