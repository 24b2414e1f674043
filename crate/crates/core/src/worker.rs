//! Rollout workers: noisy policy execution, fragment shipping and pool reports.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::der::SuccessPool;
use crate::env::{EnvError, Environment};
use crate::filter::ObservationFilter;
use crate::learner::PolicySnapshot;
use crate::replay::ReplaySet;
use crate::rng::{seed_streams, Stream};
use crate::types::{Action, Episode, Transition, ACTION_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkerConfig {
    /// Exploration noise standard deviation as a fraction of the action bound.
    pub noise_scale: f64,
    pub fragment_size: usize,
    pub t_max: usize,
    /// Spread per-worker noise geometrically over `[noise/4, noise*4]`.
    pub sigma_ladder: bool,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        Self {
            noise_scale: 0.1,
            fragment_size: 50,
            t_max: 300,
            sigma_ladder: false,
        }
    }
}

impl WorkerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(format!("worker.noise_scale must be >= 0, got {}", self.noise_scale));
        }
        if self.fragment_size == 0 || self.t_max == 0 {
            return Err("worker.fragment_size and worker.t_max must be at least 1".into());
        }
        Ok(())
    }

    /// Noise standard deviation for worker `id` of `count`.
    pub fn sigma(&self, id: usize, count: usize, action_bound: f64) -> f64 {
        let base = self.noise_scale * action_bound;
        if !self.sigma_ladder || count < 2 {
            return base;
        }
        let frac = id as f64 / (count - 1) as f64;
        base * 4f64.powf(2.0 * frac - 1.0)
    }
}

/// Rolls out one episode with `policy` plus Gaussian noise of std `sigma`.
/// Raw observations seen along the way are folded into `stats`. The episode
/// ends on success or after `t_max` steps, whichever comes first.
pub fn run_episode(
    env: &mut dyn Environment,
    policy: &PolicySnapshot,
    t_max: usize,
    sigma: f64,
    rng: &mut Stream,
    stats: &mut ObservationFilter,
) -> Result<Episode, EnvError> {
    let a_max = env.action_bound();
    let noise = Normal::new(0.0, sigma).map_err(|e| EnvError::Fault(format!("noise: {e}")))?;
    let mut obs = env.reset(rng);
    let _ = stats.update(&obs);
    let mut transitions = Vec::with_capacity(t_max.min(1024));
    for t in 0..t_max {
        let features = policy.filter.apply(&obs);
        let out = policy.actor.forward(&features).expect("actor input width");
        let mut a = [0.0; ACTION_DIM];
        for (ai, o) in a.iter_mut().zip(&out) {
            *ai = o * a_max;
            if sigma > 0.0 {
                *ai += noise.sample(rng);
            }
        }
        let action = Action::clamped(a, a_max).map_err(|e| EnvError::Fault(e.to_string()))?;
        let step = env.step(&action)?;
        if let Err(e) = stats.update(&step.obs) {
            return Err(EnvError::Fault(e.to_string()));
        }
        let done = step.done || t + 1 == t_max;
        let tr = Transition::new(obs, action, step.obs, step.reward, done, step.success)
            .map_err(|e| EnvError::Fault(e.to_string()))?;
        transitions.push(tr);
        obs = step.obs;
        if done {
            break;
        }
    }
    Episode::new(transitions, t_max).map_err(|e| EnvError::Fault(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShipReport {
    pub buffer: usize,
    /// Length of each fragment, in insertion order.
    pub fragments: Vec<usize>,
    /// Pool id when the episode was successful and a pool was given.
    pub pool_id: Option<u64>,
}

/// Sends every fragment of `episode` to one buffer chosen uniformly with
/// `route`, and adds successful episodes to `pool`.
pub fn ship_fragments(
    episode: &Arc<Episode>,
    fragment_size: usize,
    buffers: &ReplaySet,
    pool: Option<&SuccessPool>,
    route: &mut Stream,
) -> ShipReport {
    let buffer = route.random_range(0..buffers.len());
    let mut fragments = Vec::new();
    for chunk in episode.transitions().chunks(fragment_size) {
        buffers.lock(buffer).insert_main(chunk);
        fragments.push(chunk.len());
    }
    let pool_id = match pool {
        Some(p) if episode.success() => p.add(episode.clone()).ok(),
        _ => None,
    };
    ShipReport {
        buffer,
        fragments,
        pool_id,
    }
}

/// Per-worker CSV log: `episode,length,return,success`.
pub struct EpisodeLog<W: Write> {
    out: W,
}

impl<W: Write> EpisodeLog<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "episode,length,return,success")?;
        Ok(Self { out })
    }

    pub fn record(&mut self, index: u64, ep: &Episode) -> std::io::Result<()> {
        writeln!(self.out, "{index},{},{:?},{}", ep.len(), ep.total_reward(), ep.success() as u8)
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// A rollout actor owning its environment and random streams.
pub struct Worker<E: Environment> {
    id: usize,
    cfg: WorkerConfig,
    sigma: f64,
    env: E,
    rng: Stream,
    route: Stream,
    stats: ObservationFilter,
    episodes: u64,
    steps: u64,
    log: Option<EpisodeLog<Box<dyn Write + Send>>>,
}

impl<E: Environment> Worker<E> {
    pub fn new(id: usize, count: usize, cfg: WorkerConfig, env: E, seed: u64) -> Self {
        let sigma = cfg.sigma(id, count, env.action_bound());
        Self {
            id,
            sigma,
            env,
            rng: seed_streams(seed, &format!("worker-{id}")),
            route: route_stream(seed, id),
            stats: ObservationFilter::new(None),
            episodes: 0,
            steps: 0,
            log: None,
            cfg,
        }
    }

    pub fn with_log(mut self, out: Box<dyn Write + Send>) -> std::io::Result<Self> {
        self.log = Some(EpisodeLog::new(out)?);
        Ok(self)
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Observation statistics gathered since the last call.
    pub fn take_stats(&mut self) -> ObservationFilter {
        std::mem::replace(&mut self.stats, ObservationFilter::new(None))
    }

    /// Runs one episode. Faulted episodes are discarded with a warning and
    /// their statistics are not kept.
    pub fn rollout(&mut self, policy: &PolicySnapshot) -> Option<Episode> {
        let mut stats = ObservationFilter::new(None);
        match run_episode(&mut self.env, policy, self.cfg.t_max, self.sigma, &mut self.rng, &mut stats) {
            Ok(ep) => {
                self.stats.merge(&stats);
                self.steps += ep.len() as u64;
                if let Some(log) = self.log.as_mut() {
                    if let Err(e) = log.record(self.episodes, &ep) {
                        log::warn!("worker {}: episode log write failed: {e}", self.id);
                    }
                }
                self.episodes += 1;
                Some(ep)
            }
            Err(e) => {
                log::warn!("worker {}: episode aborted: {e}", self.id);
                None
            }
        }
    }

    pub fn ship(&mut self, episode: &Arc<Episode>, buffers: &ReplaySet, pool: Option<&SuccessPool>) -> ShipReport {
        ship_fragments(episode, self.cfg.fragment_size, buffers, pool, &mut self.route)
    }
}

/// Stream that picks the destination buffer of each episode of worker `id`.
pub fn route_stream(seed: u64, id: usize) -> Stream {
    seed_streams(seed, &format!("route-worker-{id}"))
}
