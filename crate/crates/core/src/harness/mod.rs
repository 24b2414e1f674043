//! Experiment driver: builds demonstrations and buffers, runs workers and the
//! trainer, and reports per-iteration metrics.

mod summary;

pub use summary::{
    cell_name, iterations_to, load_records, median_iterations, summarize, t_half_width, write_summary, CellSummary,
    Summary, SummaryRow,
};

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::der::{initialize_structure, DerError, DerSchedule, Structure, SuccessPool};
use crate::env::{scripted_demo, DemoError, Environment, InsertionEnv};
use crate::filter::ObservationFilter;
use crate::learner::{DerContext, Learner, ParameterStore, StepReport, TrainingLog};
use crate::replay::ReplaySet;
use crate::rng::{seed_streams, Stream};
use crate::types::Episode;
use crate::worker::Worker;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Structure(#[from] DerError),
    #[error(transparent)]
    Demo(#[from] DemoError),
    #[error("expected {expected} environments, got {got}")]
    EnvCount { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Net(#[from] crate::netlib::NetError),
}

/// One row of a run's metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Cumulative environment steps at the end of the iteration.
    pub timesteps: u64,
    /// Episodes completed within the iteration.
    pub episodes: u64,
    pub success_rate: f64,
    pub mean_reward: f64,
    pub wall_seconds: f64,
}

pub const RECORD_HEADER: &str = "iteration,timesteps,episodes,success_rate,mean_reward,wall_seconds";

/// Ordered record of the shared-state mutations of a deterministic run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    /// One fragment of a worker's episode written to a buffer's main region.
    BufferInsert {
        worker: usize,
        episode: u64,
        buffer: usize,
        len: usize,
    },
    PoolAdd { worker: usize, episode: u64, pool_id: u64 },
    ZoneRefresh { step: u64, buffer: usize, pool_id: u64 },
    TargetCopy { step: u64 },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunTotals {
    pub env_steps: u64,
    pub episodes: u64,
    pub successes: u64,
    /// Transitions workers handed to buffers.
    pub transitions_shipped: u64,
    /// Transitions the buffers report having written to main regions.
    pub transitions_inserted: u64,
    pub train_steps: u64,
    pub publications: u64,
    pub snapshot_reads: u64,
    pub torn_snapshots: u64,
    pub pool_added: u64,
}

pub struct RunReport {
    pub records: Vec<IterationRecord>,
    pub events: Vec<Event>,
    pub totals: RunTotals,
    pub learner: Learner,
}

/// Where a run writes its metrics, checkpoint and training log.
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
    pub training_log: PathBuf,
}

impl RunOutputs {
    pub fn in_dir(dir: &Path, cfg: &ExperimentConfig) -> Self {
        let stem = cfg.run_name();
        Self {
            metrics: dir.join(format!("{stem}.csv")),
            checkpoint: dir.join(format!("{stem}.ckpt")),
            training_log: dir.join(format!("{stem}_train.csv")),
        }
    }
}

/// Trainer steps between training log rows.
const LOG_EVERY: u64 = 100;
/// Owed trainer steps beyond which threaded workers pause.
const MAX_TRAIN_BACKLOG: u64 = 64;

/// Scripted demonstrations for `cfg`, one independent stream per demo.
/// Structures without demonstrations get none.
pub fn generate_demos(cfg: &ExperimentConfig) -> Result<Vec<Episode>, DemoError> {
    if cfg.structure == Structure::NoDemos {
        return Ok(Vec::new());
    }
    let mut env = InsertionEnv::new(cfg.env.clone());
    (0..cfg.num_demos)
        .map(|i| {
            let mut rng = seed_streams(cfg.seed, &format!("demo-{i}"));
            scripted_demo(&mut env, &mut rng, cfg.demo_jitter, cfg.worker.t_max)
        })
        .collect()
}

struct Accumulator {
    steps: u64,
    episodes: u64,
    successes: u64,
    reward_sum: f64,
}

impl Accumulator {
    fn new() -> Self {
        Self {
            steps: 0,
            episodes: 0,
            successes: 0,
            reward_sum: 0.0,
        }
    }

    fn add(&mut self, len: usize, reward: f64, success: bool) {
        self.steps += len as u64;
        self.episodes += 1;
        self.successes += success as u64;
        self.reward_sum += reward;
    }

    fn record(&self, iteration: usize, timesteps: u64, wall: f64) -> IterationRecord {
        let n = self.episodes.max(1) as f64;
        IterationRecord {
            iteration,
            timesteps,
            episodes: self.episodes,
            success_rate: if self.episodes == 0 { 0.0 } else { self.successes as f64 / n },
            mean_reward: if self.episodes == 0 { 0.0 } else { self.reward_sum / n },
            wall_seconds: wall,
        }
    }
}

/// Trainer-side state shared by both execution modes.
struct Trainer<'a> {
    cfg: &'a ExperimentConfig,
    learner: Learner,
    buffers: &'a ReplaySet,
    pool: &'a SuccessPool,
    store: &'a ParameterStore,
    schedule: DerSchedule,
    train_rng: Stream,
    der_rng: Stream,
    since_publish: u64,
    publications: u64,
    log: Option<TrainingLog<BufWriter<File>>>,
}

impl Trainer<'_> {
    /// Attempts one gradient step. Returns false when no buffer is ready.
    fn step(&mut self, events: &mut Option<&mut Vec<Event>>) -> Result<bool, HarnessError> {
        let der = self.schedule.enabled.then_some(DerContext {
            pool: self.pool,
            schedule: self.schedule,
            rng: &mut self.der_rng,
        });
        let Some(report) = self.learner.train_step(self.buffers, der, &mut self.train_rng) else {
            return Ok(false);
        };
        if let Some(ev) = events.as_deref_mut() {
            for r in &report.refreshes {
                ev.push(Event::ZoneRefresh {
                    step: report.step,
                    buffer: r.buffer,
                    pool_id: r.episode_id,
                });
            }
            if report.target_copied {
                ev.push(Event::TargetCopy { step: report.step });
            }
        }
        self.log_step(&report)?;
        self.since_publish += 1;
        if self.since_publish >= self.cfg.publish_interval {
            self.publish();
        }
        Ok(true)
    }

    fn publish(&mut self) {
        self.learner.publish_parameters(self.store);
        self.publications += 1;
        self.since_publish = 0;
    }

    fn log_step(&mut self, r: &StepReport) -> Result<(), HarnessError> {
        if let Some(log) = self.log.as_mut() {
            if r.step.is_multiple_of(LOG_EVERY) {
                log.record(r)?;
            }
        }
        Ok(())
    }
}

/// Runs one configuration over caller-provided environments (one per
/// worker) and demonstrations. Metrics rows are appended to `metrics` as
/// they complete. `stop` ends the run early at the next episode boundary.
pub fn run_with<E: Environment + 'static>(
    cfg: &ExperimentConfig,
    envs: Vec<E>,
    demos: &[Episode],
    outputs: Option<&RunOutputs>,
    stop: &AtomicBool,
) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    if envs.len() != cfg.num_workers {
        return Err(HarnessError::EnvCount {
            expected: cfg.num_workers,
            got: envs.len(),
        });
    }
    let action_bound = envs[0].action_bound();
    let buffers = ReplaySet::new(cfg.num_buffers, &cfg.replay);
    let pool = SuccessPool::new(cfg.der.pool_capacity);
    initialize_structure(cfg.structure, cfg.der_enabled, demos, &buffers)?;

    let learner = Learner::new(
        cfg.learner.clone(),
        action_bound,
        ObservationFilter::new(cfg.filter_clip),
        &mut seed_streams(cfg.seed, "learner-init"),
    );
    let store = ParameterStore::new(learner.actor().clone(), learner.filter().clone());

    let mut metrics = match outputs {
        Some(o) => {
            if let Some(dir) = o.metrics.parent() {
                std::fs::create_dir_all(dir)?;
            }
            let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&o.metrics)?;
            w.write_record(RECORD_HEADER.split(','))?;
            w.flush()?;
            Some(w)
        }
        None => None,
    };
    let log = match outputs {
        Some(o) => Some(TrainingLog::new(BufWriter::new(File::create(&o.training_log)?), cfg.deterministic)?),
        None => None,
    };

    let mut trainer = Trainer {
        cfg,
        learner,
        buffers: &buffers,
        pool: &pool,
        store: &store,
        schedule: DerSchedule::new(cfg.der.period, cfg.der_enabled),
        train_rng: seed_streams(cfg.seed, "trainer"),
        der_rng: seed_streams(cfg.seed, "der"),
        since_publish: 0,
        publications: 0,
        log,
    };
    let workers: Vec<Worker<E>> = envs
        .into_iter()
        .enumerate()
        .map(|(i, env)| Worker::new(i, cfg.num_workers, cfg.worker.clone(), env, cfg.seed))
        .collect();

    let mut emit = |rec: IterationRecord, records: &mut Vec<IterationRecord>| -> Result<bool, HarnessError> {
        if let Some(w) = metrics.as_mut() {
            w.serialize(&rec)?;
            w.flush()?;
        }
        log::info!(
            "{} iteration {}: success {:.3}, reward {:.2}, episodes {}",
            cfg.run_name(),
            rec.iteration,
            rec.success_rate,
            rec.mean_reward,
            rec.episodes
        );
        let done = cfg.stop_at_success.is_some_and(|s| rec.success_rate >= s);
        records.push(rec);
        Ok(done)
    };

    let (records, events, mut totals) = if cfg.deterministic {
        run_round_robin(cfg, workers, &mut trainer, &mut emit, stop)?
    } else {
        run_threaded(cfg, workers, &mut trainer, &mut emit, stop)?
    };
    totals.transitions_inserted = buffers.main_inserted();
    totals.train_steps = trainer.learner.steps();
    totals.publications = trainer.publications;
    totals.pool_added = pool.total_added();

    if let Some(log) = trainer.log.take() {
        std::io::Write::flush(&mut log.into_inner())?;
    }
    if let Some(o) = outputs {
        let mut f = BufWriter::new(File::create(&o.checkpoint)?);
        trainer.learner.write_checkpoint(&mut f)?;
    }
    Ok(RunReport {
        records,
        events,
        totals,
        learner: trainer.learner,
    })
}

type Emit<'a> = dyn FnMut(IterationRecord, &mut Vec<IterationRecord>) -> Result<bool, HarnessError> + 'a;

fn run_round_robin<E: Environment>(
    cfg: &ExperimentConfig,
    mut workers: Vec<Worker<E>>,
    trainer: &mut Trainer<'_>,
    emit: &mut Emit<'_>,
    stop: &AtomicBool,
) -> Result<(Vec<IterationRecord>, Vec<Event>, RunTotals), HarnessError> {
    let mut records = Vec::new();
    let mut events = Vec::new();
    let mut totals = RunTotals::default();
    let mut credit = 0.0;
    let mut next = 0;
    'iterations: for iteration in 1..=cfg.max_iterations {
        let mut acc = Accumulator::new();
        while acc.steps < cfg.iteration_timesteps {
            if stop.load(Ordering::Relaxed) {
                break 'iterations;
            }
            let w = &mut workers[next];
            next = (next + 1) % cfg.num_workers;
            let snapshot = trainer.store.latest();
            totals.snapshot_reads += 1;
            if !snapshot.verify() {
                totals.torn_snapshots += 1;
            }
            let index = w.episodes();
            let Some(ep) = w.rollout(&snapshot) else { continue };
            trainer.learner.merge_filter(&w.take_stats());
            let ep = Arc::new(ep);
            let report = w.ship(&ep, trainer.buffers, Some(trainer.pool));
            for len in &report.fragments {
                events.push(Event::BufferInsert {
                    worker: w.id(),
                    episode: index,
                    buffer: report.buffer,
                    len: *len,
                });
            }
            if let Some(pool_id) = report.pool_id {
                events.push(Event::PoolAdd {
                    worker: w.id(),
                    episode: index,
                    pool_id,
                });
            }
            acc.add(ep.len(), ep.total_reward(), ep.success());
            totals.env_steps += ep.len() as u64;
            totals.transitions_shipped += ep.len() as u64;
            totals.episodes += 1;
            totals.successes += ep.success() as u64;

            credit += ep.len() as f64 * cfg.replay_ratio;
            let mut ev = Some(&mut events);
            while credit >= 1.0 {
                credit -= 1.0;
                if !trainer.step(&mut ev)? {
                    credit = 0.0;
                }
            }
        }
        if emit(acc.record(iteration, totals.env_steps, 0.0), &mut records)? {
            break;
        }
    }
    Ok((records, events, totals))
}

struct EpisodeMsg {
    len: usize,
    reward: f64,
    success: bool,
    stats: ObservationFilter,
}

fn run_threaded<E: Environment + 'static>(
    cfg: &ExperimentConfig,
    workers: Vec<Worker<E>>,
    trainer: &mut Trainer<'_>,
    emit: &mut Emit<'_>,
    stop: &AtomicBool,
) -> Result<(Vec<IterationRecord>, Vec<Event>, RunTotals), HarnessError> {
    let started = Instant::now();
    let halt = AtomicBool::new(false);
    let backlog = AtomicU64::new(0);
    // Environment steps shipped but not yet seen by the trainer.
    let inflight = AtomicU64::new(0);
    let shipped = AtomicU64::new(0);
    let reads = AtomicU64::new(0);
    let torn = AtomicU64::new(0);
    let (tx, rx) = mpsc::channel::<EpisodeMsg>();
    let buffers = trainer.buffers;
    let pool = trainer.pool;
    let store = trainer.store;

    std::thread::scope(|scope| -> Result<_, HarnessError> {
        for mut w in workers {
            let tx = tx.clone();
            let (halt, backlog, inflight, shipped, reads, torn) = (&halt, &backlog, &inflight, &shipped, &reads, &torn);
            scope.spawn(move || {
                while !halt.load(Ordering::Relaxed) {
                    let queued = inflight.load(Ordering::Relaxed) as f64 * cfg.replay_ratio;
                    if backlog.load(Ordering::Relaxed) as f64 + queued > MAX_TRAIN_BACKLOG as f64 {
                        std::thread::sleep(Duration::from_micros(200));
                        continue;
                    }
                    let snapshot = store.latest();
                    reads.fetch_add(1, Ordering::Relaxed);
                    if !snapshot.verify() {
                        torn.fetch_add(1, Ordering::Relaxed);
                    }
                    let Some(ep) = w.rollout(&snapshot) else { continue };
                    let ep = Arc::new(ep);
                    w.ship(&ep, buffers, Some(pool));
                    shipped.fetch_add(ep.len() as u64, Ordering::Relaxed);
                    inflight.fetch_add(ep.len() as u64, Ordering::Relaxed);
                    let msg = EpisodeMsg {
                        len: ep.len(),
                        reward: ep.total_reward(),
                        success: ep.success(),
                        stats: w.take_stats(),
                    };
                    if tx.send(msg).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);

        let mut records = Vec::new();
        let mut totals = RunTotals::default();
        let mut credit = 0.0;
        let mut iteration = 1;
        let mut acc = Accumulator::new();
        let mut no_events = None;
        let result = (|| -> Result<(), HarnessError> {
            if cfg.max_iterations == 0 {
                return Ok(());
            }
            loop {
                if stop.load(Ordering::Relaxed) {
                    return Ok(());
                }
                let first = match rx.recv_timeout(Duration::from_millis(5)) {
                    Ok(m) => Some(m),
                    Err(mpsc::RecvTimeoutError::Timeout) => None,
                    Err(mpsc::RecvTimeoutError::Disconnected) => return Ok(()),
                };
                for m in first.into_iter().chain(rx.try_iter()) {
                    inflight.fetch_sub(m.len as u64, Ordering::Relaxed);
                    trainer.learner.merge_filter(&m.stats);
                    acc.add(m.len, m.reward, m.success);
                    totals.env_steps += m.len as u64;
                    totals.episodes += 1;
                    totals.successes += m.success as u64;
                    credit += m.len as f64 * cfg.replay_ratio;
                    if acc.steps >= cfg.iteration_timesteps {
                        let rec = acc.record(iteration, totals.env_steps, started.elapsed().as_secs_f64());
                        acc = Accumulator::new();
                        if emit(rec, &mut records)? || iteration == cfg.max_iterations {
                            return Ok(());
                        }
                        iteration += 1;
                    }
                }
                backlog.store(credit as u64, Ordering::Relaxed);
                while credit >= 1.0 {
                    credit -= 1.0;
                    if !trainer.step(&mut no_events)? {
                        credit = 0.0;
                    }
                    backlog.store(credit as u64, Ordering::Relaxed);
                }
            }
        })();
        halt.store(true, Ordering::Relaxed);
        // Episodes finished after the last record still count towards the
        // totals; recv ends once every worker has exited.
        while let Ok(m) = rx.recv() {
            totals.env_steps += m.len as u64;
            totals.episodes += 1;
            totals.successes += m.success as u64;
        }
        result?;
        Ok((records, Vec::new(), totals))
    })
    .map(|(records, events, mut totals)| {
        totals.transitions_shipped = shipped.load(Ordering::Relaxed);
        totals.snapshot_reads = reads.load(Ordering::Relaxed);
        totals.torn_snapshots = torn.load(Ordering::Relaxed);
        (records, events, totals)
    })
}

/// Generates demonstrations, runs the insertion task and writes the
/// metrics CSV, training log and final checkpoint into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>, stop: &AtomicBool) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let demos = generate_demos(cfg)?;
    let envs = (0..cfg.num_workers).map(|_| InsertionEnv::new(cfg.env.clone())).collect();
    let outputs = out_dir.map(|d| RunOutputs::in_dir(d, cfg));
    run_with(cfg, envs, &demos, outputs.as_ref(), stop)
}

/// Runs every structure with and without DER for each seed in
/// `base.seeds`, writing one metrics CSV per run. Returns the CSV paths.
pub fn ablate(base: &ExperimentConfig, out_dir: &Path, stop: &AtomicBool) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    let mut paths = Vec::new();
    for structure in Structure::ALL {
        for der in [true, false] {
            for &seed in &base.seeds {
                if stop.load(Ordering::Relaxed) {
                    return Ok(paths);
                }
                let cfg = ExperimentConfig {
                    structure,
                    der_enabled: der,
                    seed,
                    ..base.clone()
                };
                run_experiment(&cfg, Some(out_dir), stop)?;
                paths.push(RunOutputs::in_dir(out_dir, &cfg).metrics);
            }
        }
    }
    Ok(paths)
}
