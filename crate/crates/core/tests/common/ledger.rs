use std::sync::atomic::AtomicBool;

use der_core::config::ExperimentConfig;
use der_core::der::Structure;
use der_core::env::{EnvError, Environment, StepOutcome, Variant};
use der_core::harness::{run_with, Event, RunReport};
use der_core::rng::{seed_streams, Stream};
use der_core::types::{Action, Observation};
use rand::Rng;

/// Episode length and outcome of worker `w`'s `k`-th episode.
pub fn script(w: usize, k: u64) -> (usize, bool) {
    let len = 5 + (7 * w + 11 * k as usize) % 23;
    (len, !(w as u64 + k).is_multiple_of(3))
}

/// Environment that ignores actions and plays a fixed episode schedule.
pub struct ScriptedEnv {
    worker: usize,
    episode: u64,
    t: usize,
    len: usize,
    success: bool,
}

impl ScriptedEnv {
    pub fn new(worker: usize) -> Self {
        Self {
            worker,
            episode: 0,
            t: 0,
            len: 0,
            success: false,
        }
    }

    fn obs(&self) -> Observation {
        Observation::new([self.t as f64 * 1e-3, 0.0, self.worker as f64 * 1e-2], [0.0, 0.0, 0.0, 1.0], [0.0; 6]).unwrap()
    }
}

impl Environment for ScriptedEnv {
    fn reset(&mut self, _rng: &mut Stream) -> Observation {
        let (len, success) = script(self.worker, self.episode);
        self.episode += 1;
        self.t = 0;
        self.len = len;
        self.success = success;
        self.obs()
    }

    fn step(&mut self, _action: &Action) -> Result<StepOutcome, EnvError> {
        if self.t >= self.len {
            return Err(EnvError::EpisodeOver);
        }
        self.t += 1;
        let last = self.t == self.len;
        let success = last && self.success;
        Ok(StepOutcome {
            obs: self.obs(),
            reward: if success { 10.0 } else { -1.0 },
            done: last,
            success,
        })
    }

    fn action_bound(&self) -> f64 {
        0.05
    }
}

pub fn ledger_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::for_task(Variant::PegInHole);
    cfg.seed = 5;
    cfg.deterministic = true;
    cfg.structure = Structure::NoDemos;
    cfg.der_enabled = true;
    cfg.num_workers = 3;
    cfg.num_buffers = 2;
    cfg.num_demos = 0;
    cfg.iteration_timesteps = 200;
    cfg.max_iterations = 3;
    cfg.stop_at_success = None;
    cfg.replay_ratio = 1.0;
    cfg.replay.capacity = 400;
    cfg.learner.learning_starts = 1;
    cfg.learner.batch_size = 8;
    cfg.learner.hidden = vec![8, 8];
    cfg.learner.target_update_freq = 40;
    cfg.der.period = 25;
    cfg.der.pool_capacity = 1;
    cfg.worker.fragment_size = 10;
    cfg.worker.t_max = 100;
    cfg
}

/// Replays the round-robin schedule by hand: buffer inserts per fragment,
/// pool ids in completion order, one gradient step per environment step,
/// refreshes of every buffer with the only pooled episode on multiples of
/// the refresh period and target copies on multiples of the copy period.
pub fn expected_ledger(cfg: &ExperimentConfig) -> Vec<Event> {
    let mut events = Vec::new();
    let mut routes: Vec<Stream> = (0..cfg.num_workers)
        .map(|w| seed_streams(cfg.seed, &format!("route-worker-{w}")))
        .collect();
    let mut counts = vec![0u64; cfg.num_workers];
    let (mut next, mut step, mut pool_next) = (0usize, 0u64, 0u64);
    let mut pooled: Option<u64> = None;
    for _ in 0..cfg.max_iterations {
        let mut steps = 0;
        while steps < cfg.iteration_timesteps {
            let w = next;
            next = (next + 1) % cfg.num_workers;
            let k = counts[w];
            counts[w] += 1;
            let (len, success) = script(w, k);
            let buffer = routes[w].random_range(0..cfg.num_buffers);
            let mut left = len;
            while left > 0 {
                let n = left.min(cfg.worker.fragment_size);
                events.push(Event::BufferInsert { worker: w, episode: k, buffer, len: n });
                left -= n;
            }
            if success {
                events.push(Event::PoolAdd { worker: w, episode: k, pool_id: pool_next });
                pooled = Some(pool_next);
                pool_next += 1;
            }
            steps += len as u64;
            for _ in 0..len {
                step += 1;
                if let Some(id) = pooled.filter(|_| step % cfg.der.period == 0) {
                    for b in 0..cfg.num_buffers {
                        events.push(Event::ZoneRefresh { step, buffer: b, pool_id: id });
                    }
                }
                if step % cfg.learner.target_update_freq == 0 {
                    events.push(Event::TargetCopy { step });
                }
            }
        }
    }
    events
}

pub fn run_ledger(cfg: &ExperimentConfig) -> RunReport {
    let envs = (0..cfg.num_workers).map(ScriptedEnv::new).collect();
    run_with(cfg, envs, &[], None, &AtomicBool::new(false)).expect("scripted run")
}

/// Index of the first differing event, if any.
pub fn first_mismatch(got: &[Event], want: &[Event]) -> Option<usize> {
    (0..got.len().max(want.len())).find(|&i| got.get(i) != want.get(i))
}
