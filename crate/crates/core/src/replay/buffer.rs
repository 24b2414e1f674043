use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sum_tree::SumTree;
use super::ReplayError;
use crate::rng::Stream;
use crate::types::{Episode, Transition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayConfig {
    /// Total slots, demonstration zone included.
    pub capacity: usize,
    /// Fraction of `capacity` reserved for the demonstration zone.
    pub demo_fraction: f64,
    pub alpha: f64,
    /// Importance-sampling exponent; 0 disables weighting.
    pub beta: f64,
    /// Floor added to absolute TD errors.
    pub priority_eps: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 20_000,
            demo_fraction: 0.01,
            alpha: 0.5,
            beta: 0.4,
            priority_eps: 1e-6,
        }
    }
}

impl ReplayConfig {
    pub fn paper_scale() -> Self {
        Self {
            capacity: 2_000_000,
            ..Self::default()
        }
    }

    pub fn zone_capacity(&self) -> usize {
        (self.capacity as f64 * self.demo_fraction).round() as usize
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.demo_fraction) {
            return Err(format!("replay.demo_fraction must be in [0, 1), got {}", self.demo_fraction));
        }
        if self.capacity <= self.zone_capacity() {
            return Err("replay.capacity leaves no room for the main region".into());
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.priority_eps > 0.0) {
            return Err("replay.alpha and replay.beta must be >= 0 and priority_eps > 0".into());
        }
        Ok(())
    }
}

/// Handle to a slot as it was when sampled. The generation changes whenever
/// the slot is overwritten, which lets late priority updates be discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SlotRef {
    pub slot: usize,
    pub generation: u64,
}

#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub buffer_id: usize,
    pub transitions: Vec<Transition>,
    pub refs: Vec<SlotRef>,
    /// Importance weights, normalized so the largest is 1.
    pub weights: Vec<f64>,
    /// Sampling probability of each drawn slot.
    pub probabilities: Vec<f64>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Zone,
    Main,
}

/// Fixed-capacity ring with FIFO eviction over a contiguous slot range.
#[derive(Debug, Clone)]
struct Ring {
    start: usize,
    cap: usize,
    head: usize,
    len: usize,
}

impl Ring {
    fn new(start: usize, cap: usize) -> Self {
        Self { start, cap, head: 0, len: 0 }
    }

    /// Slot to write next, and the slot being evicted if the ring is full.
    fn push(&mut self) -> (usize, bool) {
        if self.len < self.cap {
            let slot = self.start + (self.head + self.len) % self.cap;
            self.len += 1;
            (slot, false)
        } else {
            let slot = self.start + self.head;
            self.head = (self.head + 1) % self.cap;
            (slot, true)
        }
    }

    /// Occupied slots, oldest first.
    fn slots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).map(move |k| self.start + (self.head + k) % self.cap)
    }
}

/// Prioritized replay buffer with a reserved demonstration zone.
///
/// Slots `[0, C)` form the zone and `[C, N)` the main region; each region is
/// its own FIFO ring, so main-region inserts can never evict zone entries.
/// Pinned zone slots always report the buffer's maximum priority; their
/// sampling mass is kept outside the sum tree as `pinned * max^alpha`.
#[derive(Debug, Clone)]
pub struct PrioritizedBuffer {
    id: usize,
    cfg: ReplayConfig,
    slots: Vec<Option<Transition>>,
    generation: Vec<u64>,
    priority: Vec<f64>,
    pinned: Vec<bool>,
    pinned_slots: Vec<usize>,
    tree: SumTree,
    zone: Ring,
    main: Ring,
    max_priority: f64,
    main_inserted: u64,
}

impl PrioritizedBuffer {
    pub fn new(id: usize, cfg: ReplayConfig) -> Self {
        let c = cfg.zone_capacity();
        let n = cfg.capacity;
        Self {
            id,
            slots: vec![None; n],
            generation: vec![0; n],
            priority: vec![0.0; n],
            pinned: vec![false; n],
            pinned_slots: Vec::new(),
            tree: SumTree::new(n),
            zone: Ring::new(0, c),
            main: Ring::new(c, n - c),
            max_priority: 1.0,
            main_inserted: 0,
            cfg,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.zone.len + self.main.len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zone_len(&self) -> usize {
        self.zone.len
    }

    pub fn zone_capacity(&self) -> usize {
        self.zone.cap
    }

    pub fn main_len(&self) -> usize {
        self.main.len
    }

    /// Transitions ever written to the main region.
    pub fn main_inserted(&self) -> u64 {
        self.main_inserted
    }

    pub fn max_priority(&self) -> f64 {
        self.max_priority
    }

    pub fn pinned_count(&self) -> usize {
        self.pinned_slots.len()
    }

    pub fn region(&self, slot: usize) -> Region {
        if slot < self.zone.cap {
            Region::Zone
        } else {
            Region::Main
        }
    }

    pub fn is_pinned(&self, slot: usize) -> bool {
        self.pinned[slot]
    }

    pub fn transition(&self, slot: usize) -> Option<&Transition> {
        self.slots[slot].as_ref()
    }

    pub fn slot_ref(&self, slot: usize) -> SlotRef {
        SlotRef {
            slot,
            generation: self.generation[slot],
        }
    }

    /// Effective priority of an occupied slot.
    pub fn priority(&self, slot: usize) -> Option<f64> {
        self.slots[slot].as_ref()?;
        Some(if self.pinned[slot] { self.max_priority } else { self.priority[slot] })
    }

    /// Zone contents, oldest first.
    pub fn zone_transitions(&self) -> Vec<&Transition> {
        self.zone.slots().filter_map(|s| self.slots[s].as_ref()).collect()
    }

    pub fn zone_slots(&self) -> Vec<usize> {
        self.zone.slots().collect()
    }

    pub fn main_slots(&self) -> Vec<usize> {
        self.main.slots().collect()
    }

    /// Total sampling mass (`sum p^alpha` over occupied slots).
    pub fn total_mass(&self) -> f64 {
        self.tree.total() + self.pinned_mass()
    }

    pub fn tree_total(&self) -> f64 {
        self.tree.total()
    }

    pub fn tree_leaf_sum(&self) -> f64 {
        self.tree.leaf_sum()
    }

    fn pinned_mass(&self) -> f64 {
        self.pinned_slots.len() as f64 * self.max_priority.powf(self.cfg.alpha)
    }

    fn write(&mut self, slot: usize, t: Transition, pinned: bool) {
        if self.pinned[slot] {
            self.pinned_slots.retain(|&s| s != slot);
        }
        self.slots[slot] = Some(t);
        self.generation[slot] += 1;
        self.pinned[slot] = pinned;
        if pinned {
            self.pinned_slots.push(slot);
            self.priority[slot] = self.max_priority;
            self.tree.set(slot, 0.0);
        } else {
            self.set_priority(slot, self.max_priority);
        }
    }

    fn set_priority(&mut self, slot: usize, p: f64) {
        self.priority[slot] = p;
        self.tree.set(slot, p.powf(self.cfg.alpha));
    }

    /// Appends transitions to the main region at the current max priority,
    /// evicting the oldest main-region entries when full.
    pub fn insert_main(&mut self, fragment: &[Transition]) {
        for t in fragment {
            let (slot, _) = self.main.push();
            self.write(slot, t.clone(), false);
            self.main_inserted += 1;
        }
    }

    /// Writes an episode into the demonstration zone FIFO. Returns the number
    /// of transitions stored; an episode longer than the zone keeps only its
    /// most recent transitions.
    pub fn load_demo(&mut self, episode: &Episode, pinned: bool) -> usize {
        let cap = self.zone.cap;
        if cap == 0 {
            log::warn!("buffer {}: demonstration zone has zero capacity, demo dropped", self.id);
            return 0;
        }
        let ts = episode.transitions();
        let skip = ts.len().saturating_sub(cap);
        if skip > 0 {
            log::warn!(
                "buffer {}: demo of {} transitions exceeds zone capacity {}, keeping the last {}",
                self.id,
                ts.len(),
                cap,
                cap
            );
        }
        for t in &ts[skip..] {
            let (slot, _) = self.zone.push();
            self.write(slot, t.clone(), pinned);
        }
        ts.len() - skip
    }

    /// Draws `batch_size` slots with probability `p^alpha / sum p^alpha`,
    /// with replacement.
    pub fn sample(&self, batch_size: usize, beta: f64, rng: &mut Stream) -> Result<SampleBatch, ReplayError> {
        let total = self.total_mass();
        if self.is_empty() || total.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(ReplayError::NotReady {
                buffer: self.id,
                len: self.len(),
            });
        }
        let pinned_unit = self.max_priority.powf(self.cfg.alpha);
        let pinned_mass = self.pinned_mass();
        let n = self.len() as f64;
        let mut batch = SampleBatch {
            buffer_id: self.id,
            transitions: Vec::with_capacity(batch_size),
            refs: Vec::with_capacity(batch_size),
            weights: Vec::with_capacity(batch_size),
            probabilities: Vec::with_capacity(batch_size),
        };
        for _ in 0..batch_size {
            let u = rng.random::<f64>() * total;
            let (slot, mass) = if u < pinned_mass {
                let k = ((u / pinned_unit) as usize).min(self.pinned_slots.len() - 1);
                (self.pinned_slots[k], pinned_unit)
            } else {
                let s = self.tree.find(u - pinned_mass);
                (s, self.tree.get(s))
            };
            let t = self.slots[slot].as_ref().expect("sampled slot is occupied");
            let p = mass / total;
            batch.transitions.push(t.clone());
            batch.refs.push(self.slot_ref(slot));
            batch.probabilities.push(p);
            batch.weights.push((n * p).powf(-beta));
        }
        let w_max = batch.weights.iter().cloned().fold(0.0, f64::max);
        for w in &mut batch.weights {
            *w /= w_max;
        }
        Ok(batch)
    }

    /// Sets `priority = |td| + eps` for each still-current slot. Pinned slots
    /// keep tracking the maximum. Returns the number of slots updated.
    pub fn update_priorities(&mut self, refs: &[SlotRef], td_errors: &[f64]) -> usize {
        let mut updated = 0;
        for (r, td) in refs.iter().zip(td_errors) {
            if r.slot >= self.slots.len() || self.generation[r.slot] != r.generation || self.slots[r.slot].is_none() {
                continue;
            }
            let p = td.abs() + self.cfg.priority_eps;
            if !p.is_finite() {
                continue;
            }
            if p > self.max_priority {
                self.max_priority = p;
            }
            if self.pinned[r.slot] {
                continue;
            }
            self.set_priority(r.slot, p);
            updated += 1;
        }
        updated
    }

    /// Debug table: slot, region, priority, pinned flag.
    pub fn dump(&self) -> String {
        let mut out = String::from("slot\tregion\tpriority\tpinned\n");
        for slot in self.zone.slots().chain(self.main.slots()) {
            let region = match self.region(slot) {
                Region::Zone => "zone",
                Region::Main => "main",
            };
            let _ = writeln!(
                out,
                "{slot}\t{region}\t{:.6e}\t{}",
                self.priority(slot).unwrap_or(0.0),
                self.pinned[slot]
            );
        }
        out
    }
}
