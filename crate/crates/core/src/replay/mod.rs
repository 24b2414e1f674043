//! Prioritized replay with reserved demonstration zones.

mod buffer;
mod sum_tree;

pub use buffer::{PrioritizedBuffer, Region, ReplayConfig, SampleBatch, SlotRef};
pub use sum_tree::SumTree;

use parking_lot::{Mutex, MutexGuard};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error("buffer {buffer} not ready to train ({len} transitions)")]
    NotReady { buffer: usize, len: usize },
}

/// The group of buffers shared by workers and the trainer. Each buffer sits
/// behind its own lock; no operation here holds two locks at once.
#[derive(Debug)]
pub struct ReplaySet {
    buffers: Vec<Mutex<PrioritizedBuffer>>,
}

impl ReplaySet {
    pub fn new(count: usize, cfg: &ReplayConfig) -> Self {
        Self {
            buffers: (0..count).map(|i| Mutex::new(PrioritizedBuffer::new(i, cfg.clone()))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.buffers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.is_empty()
    }

    pub fn lock(&self, i: usize) -> MutexGuard<'_, PrioritizedBuffer> {
        self.buffers[i].lock()
    }

    /// Indices of buffers holding at least `min_len` transitions.
    pub fn ready(&self, min_len: usize) -> Vec<usize> {
        (0..self.buffers.len()).filter(|&i| self.lock(i).len() >= min_len).collect()
    }

    /// Sum over buffers of transitions ever written to main regions.
    pub fn main_inserted(&self) -> u64 {
        (0..self.buffers.len()).map(|i| self.lock(i).main_inserted()).sum()
    }
}
