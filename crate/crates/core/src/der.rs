//! Dynamic experience replay: the success pool, the periodic refresh of
//! demonstration zones, and the four buffer-structure initializers.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::Arc;

use parking_lot::Mutex;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::replay::ReplaySet;
use crate::rng::Stream;
use crate::types::Episode;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DerError {
    #[error("only successful episodes enter the success pool")]
    Unsuccessful,
    #[error("structure {structure} needs at least {needed} demonstrations, got {got}")]
    NotEnoughDemos {
        structure: &'static str,
        needed: usize,
        got: usize,
    },
}

/// How demonstrations are distributed over buffers before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    /// No demonstrations in any buffer.
    NoDemos,
    /// The first demonstration in every buffer.
    OneShotAll,
    /// Every demonstration in every buffer.
    AllShotsAll,
    /// Demonstration `i` in buffer `i`.
    OneShotEach,
}

impl Structure {
    pub const ALL: [Structure; 4] = [
        Structure::NoDemos,
        Structure::OneShotAll,
        Structure::AllShotsAll,
        Structure::OneShotEach,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Structure::NoDemos => "no_demos",
            Structure::OneShotAll => "one_shot_all",
            Structure::AllShotsAll => "all_shots_all",
            Structure::OneShotEach => "one_shot_each",
        }
    }

    /// Demonstrations needed for `num_buffers` buffers.
    pub fn demos_required(&self, num_buffers: usize) -> usize {
        match self {
            Structure::NoDemos => 0,
            Structure::OneShotAll | Structure::AllShotsAll => 1,
            Structure::OneShotEach => num_buffers,
        }
    }
}

impl std::fmt::Display for Structure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Structure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Structure::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown structure '{s}'"))
    }
}

/// Loads demonstrations according to `structure`. Demos are pinned at top
/// priority when DER is off and enter the zone FIFO unpinned when it is on.
/// Returns the number of episode loads performed.
pub fn initialize_structure(
    structure: Structure,
    der_enabled: bool,
    demos: &[Episode],
    buffers: &ReplaySet,
) -> Result<usize, DerError> {
    let needed = structure.demos_required(buffers.len());
    if demos.len() < needed {
        return Err(DerError::NotEnoughDemos {
            structure: structure.name(),
            needed,
            got: demos.len(),
        });
    }
    let pinned = !der_enabled;
    let mut loads = 0;
    for i in 0..buffers.len() {
        let selection: &[Episode] = match structure {
            Structure::NoDemos => &[],
            Structure::OneShotAll => &demos[..1],
            Structure::AllShotsAll => demos,
            Structure::OneShotEach => &demos[i..i + 1],
        };
        let mut buf = buffers.lock(i);
        for demo in selection {
            buf.load_demo(demo, pinned);
            loads += 1;
        }
    }
    Ok(loads)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DerConfig {
    /// Trainer steps between zone refreshes.
    pub period: u64,
    /// Maximum episodes kept in the success pool.
    pub pool_capacity: usize,
}

impl Default for DerConfig {
    fn default() -> Self {
        Self {
            period: 500,
            pool_capacity: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DerSchedule {
    pub period: u64,
    pub enabled: bool,
}

impl DerSchedule {
    pub fn new(period: u64, enabled: bool) -> Self {
        assert!(period >= 1, "refresh period must be at least 1");
        Self { period, enabled }
    }

    /// Whether a refresh is due after trainer step `step` (1-based).
    pub fn is_due(&self, step: u64) -> bool {
        self.enabled && step > 0 && step.is_multiple_of(self.period)
    }
}

#[derive(Debug)]
struct PoolInner {
    episodes: VecDeque<(u64, Arc<Episode>)>,
    next_id: u64,
}

/// Bounded FIFO of successful episodes shared by all workers.
#[derive(Debug)]
pub struct SuccessPool {
    capacity: usize,
    inner: Mutex<PoolInner>,
}

impl SuccessPool {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            inner: Mutex::new(PoolInner {
                episodes: VecDeque::with_capacity(capacity.min(1024)),
                next_id: 0,
            }),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.inner.lock().episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Episodes ever accepted.
    pub fn total_added(&self) -> u64 {
        self.inner.lock().next_id
    }

    /// Appends a successful episode, evicting the oldest at capacity.
    /// Returns the id assigned to the episode.
    pub fn add(&self, episode: Arc<Episode>) -> Result<u64, DerError> {
        if !episode.success() {
            return Err(DerError::Unsuccessful);
        }
        let mut inner = self.inner.lock();
        let id = inner.next_id;
        inner.next_id += 1;
        if self.capacity == 0 {
            return Ok(id);
        }
        if inner.episodes.len() == self.capacity {
            inner.episodes.pop_front();
        }
        inner.episodes.push_back((id, episode));
        Ok(id)
    }

    /// Current contents, oldest first.
    pub fn snapshot(&self) -> Vec<(u64, Arc<Episode>)> {
        self.inner.lock().episodes.iter().cloned().collect()
    }

    /// Debug table of pooled episodes.
    pub fn export(&self) -> String {
        let mut out = String::from("id\tlength\ttotal_reward\n");
        for (id, ep) in self.snapshot() {
            let _ = writeln!(out, "{id}\t{}\t{:?}", ep.len(), ep.total_reward());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Refresh {
    pub buffer: usize,
    pub episode_id: u64,
}

/// Each buffer independently draws one pooled episode uniformly (with
/// replacement across buffers) and appends it to its zone FIFO. An empty
/// pool or a disabled schedule leaves every zone untouched.
pub fn refresh_zones(pool: &SuccessPool, buffers: &ReplaySet, schedule: &DerSchedule, rng: &mut Stream) -> Vec<Refresh> {
    if !schedule.enabled {
        return Vec::new();
    }
    let snapshot = pool.snapshot();
    if snapshot.is_empty() {
        return Vec::new();
    }
    (0..buffers.len())
        .map(|b| {
            let (id, ep) = &snapshot[rng.random_range(0..snapshot.len())];
            buffers.lock(b).load_demo(ep, false);
            Refresh {
                buffer: b,
                episode_id: *id,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replay::ReplayConfig;
    use crate::rng::seed_streams;
    use crate::types::testing::episode;

    fn set(n: usize, capacity: usize, zone: usize) -> ReplaySet {
        ReplaySet::new(
            n,
            &ReplayConfig {
                capacity,
                demo_fraction: zone as f64 / capacity as f64,
                ..ReplayConfig::default()
            },
        )
    }

    fn demos(n: usize, len: usize) -> Vec<Episode> {
        (0..n).map(|i| episode(len + i, true)).collect()
    }

    #[test]
    fn one_shot_each_gives_buffer_i_demo_i() {
        let buffers = set(6, 2000, 200);
        let d = demos(6, 5);
        initialize_structure(Structure::OneShotEach, false, &d, &buffers).unwrap();
        for (i, demo) in d.iter().enumerate() {
            let b = buffers.lock(i);
            let zone: Vec<_> = b.zone_transitions().into_iter().cloned().collect();
            assert_eq!(zone, demo.transitions().to_vec());
            assert_eq!(b.pinned_count(), demo.len());
        }
    }

    #[test]
    fn no_demos_leaves_zones_empty() {
        let buffers = set(6, 2000, 200);
        initialize_structure(Structure::NoDemos, true, &[], &buffers).unwrap();
        assert!((0..6).all(|i| buffers.lock(i).zone_len() == 0));
    }

    #[test]
    fn all_shots_all_fills_each_zone() {
        let buffers = set(6, 20_000, 200);
        let d: Vec<Episode> = (0..6).map(|_| episode(30, true)).collect();
        initialize_structure(Structure::AllShotsAll, false, &d, &buffers).unwrap();
        assert!((0..6).all(|i| buffers.lock(i).zone_len() == 6 * 30));
    }

    #[test]
    fn one_shot_all_and_der_mode_unpinned() {
        let buffers = set(3, 2000, 200);
        let d = demos(2, 4);
        initialize_structure(Structure::OneShotAll, true, &d, &buffers).unwrap();
        for i in 0..3 {
            let b = buffers.lock(i);
            assert_eq!(b.zone_len(), 4);
            assert_eq!(b.pinned_count(), 0);
        }
    }

    #[test]
    fn insufficient_demos() {
        let buffers = set(6, 2000, 200);
        let err = initialize_structure(Structure::OneShotEach, false, &demos(5, 3), &buffers).unwrap_err();
        assert_eq!(
            err,
            DerError::NotEnoughDemos {
                structure: "one_shot_each",
                needed: 6,
                got: 5
            }
        );
        assert!(initialize_structure(Structure::OneShotAll, false, &[], &buffers).is_err());
    }

    #[test]
    fn pool_rejects_failures_and_evicts_fifo() {
        let pool = SuccessPool::new(2);
        assert_eq!(pool.add(Arc::new(episode(3, false))), Err(DerError::Unsuccessful));
        let e: Vec<Arc<Episode>> = (1..=3).map(|n| Arc::new(episode(n, true))).collect();
        for ep in &e {
            pool.add(ep.clone()).unwrap();
        }
        let snap: Vec<Arc<Episode>> = pool.snapshot().into_iter().map(|(_, ep)| ep).collect();
        assert_eq!(snap, vec![e[1].clone(), e[2].clone()]);
        assert_eq!(pool.total_added(), 3);
        assert!(pool.export().contains("2\t3\t"));
    }

    #[test]
    fn empty_pool_refresh_is_a_no_op() {
        let buffers = set(2, 100, 10);
        let pool = SuccessPool::new(10);
        let r = refresh_zones(&pool, &buffers, &DerSchedule::new(1, true), &mut seed_streams(0, "der"));
        assert!(r.is_empty());
        assert!((0..2).all(|i| buffers.lock(i).zone_len() == 0));
    }

    #[test]
    fn single_episode_pool_reaches_every_buffer() {
        let buffers = set(6, 1000, 20);
        let pool = SuccessPool::new(10);
        let ep = Arc::new(episode(4, true));
        pool.add(ep.clone()).unwrap();
        let r = refresh_zones(&pool, &buffers, &DerSchedule::new(1, true), &mut seed_streams(0, "der"));
        assert_eq!(r.len(), 6);
        for i in 0..6 {
            let zone: Vec<_> = buffers.lock(i).zone_transitions().into_iter().cloned().collect();
            assert_eq!(zone, ep.transitions().to_vec());
        }
    }

    #[test]
    fn disabled_schedule_never_refreshes() {
        let buffers = set(2, 100, 10);
        let pool = SuccessPool::new(10);
        pool.add(Arc::new(episode(2, true))).unwrap();
        let s = DerSchedule::new(5, false);
        assert!(!s.is_due(5));
        assert!(refresh_zones(&pool, &buffers, &s, &mut seed_streams(0, "der")).is_empty());
        let on = DerSchedule::new(5, true);
        assert!(!on.is_due(0) && !on.is_due(4) && on.is_due(5) && on.is_due(10));
    }

    #[test]
    fn structure_names_round_trip() {
        for s in Structure::ALL {
            assert_eq!(s.name().parse::<Structure>().unwrap(), s);
        }
    }
}
