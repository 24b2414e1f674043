//! DDPG trainer over the shared replay set, with versioned policy publication.

use std::io::{BufRead, Write};
use std::sync::Arc;
use std::time::Instant;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use parking_lot::RwLock;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::der::{refresh_zones, DerSchedule, Refresh, SuccessPool};
use crate::filter::ObservationFilter;
use crate::netlib::{read_params, soft_update, write_params, AdamConfig, AdamState, Mlp, NetError, OutputActivation};
use crate::replay::{ReplaySet, SampleBatch};
use crate::rng::{Fnv64, Stream};
use crate::types::{ACTION_DIM, OBS_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub adam: AdamConfig,
    pub actor_loss_coef: f64,
    pub critic_loss_coef: f64,
    /// Gradient steps between target network updates.
    pub target_update_freq: u64,
    pub tau: f64,
    pub batch_size: usize,
    /// Minimum transitions a buffer needs before it is sampled.
    pub learning_starts: usize,
    pub hidden: Vec<usize>,
    /// Multiplier applied to rewards inside TD targets.
    pub reward_scale: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            adam: AdamConfig::default(),
            actor_loss_coef: 0.1,
            critic_loss_coef: 1.0,
            target_update_freq: 50_000,
            tau: 1.0,
            batch_size: 512,
            learning_starts: 1000,
            hidden: vec![64, 64],
            reward_scale: 1.0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(format!("learner.gamma must be in [0, 1], got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(format!("learner.tau must be in (0, 1], got {}", self.tau));
        }
        if self.target_update_freq == 0 || self.batch_size == 0 {
            return Err("learner.target_update_freq and learner.batch_size must be positive".into());
        }
        if self.hidden.contains(&0) {
            return Err("learner.hidden widths must be positive".into());
        }
        if !(self.adam.lr >= 0.0 && self.reward_scale.is_finite()) {
            return Err("learner.adam.lr must be >= 0 and reward_scale finite".into());
        }
        Ok(())
    }

    pub fn actor_widths(&self) -> Vec<usize> {
        let mut w = vec![OBS_DIM];
        w.extend(&self.hidden);
        w.push(ACTION_DIM);
        w
    }

    pub fn critic_widths(&self) -> Vec<usize> {
        let mut w = vec![OBS_DIM + ACTION_DIM];
        w.extend(&self.hidden);
        w.push(1);
        w
    }
}

/// A replay sample converted to network inputs. Observations are filter
/// normalized and actions divided by the action bound.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub next_states: Array2<f64>,
    pub rewards: Array1<f64>,
    pub done: Array1<f64>,
    pub weights: Array1<f64>,
}

impl TrainBatch {
    pub fn from_sample(batch: &SampleBatch, filter: &ObservationFilter, action_bound: f64) -> Self {
        let n = batch.len();
        let mut out = Self {
            states: Array2::zeros((n, OBS_DIM)),
            actions: Array2::zeros((n, ACTION_DIM)),
            next_states: Array2::zeros((n, OBS_DIM)),
            rewards: Array1::zeros(n),
            done: Array1::zeros(n),
            weights: Array1::from(batch.weights.clone()),
        };
        for (i, t) in batch.transitions.iter().enumerate() {
            let s = filter.apply(&t.obs);
            let s2 = filter.apply(&t.next_obs);
            for j in 0..OBS_DIM {
                out.states[[i, j]] = s[j];
                out.next_states[[i, j]] = s2[j];
            }
            for (j, a) in t.action.as_array().iter().enumerate() {
                out.actions[[i, j]] = a / action_bound;
            }
            out.rewards[i] = t.reward;
            out.done[i] = if t.done { 1.0 } else { 0.0 };
        }
        out
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Gradient steps taken so far, this one included.
    pub step: u64,
    pub buffer: usize,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub target_copied: bool,
    pub refreshes: Vec<Refresh>,
}

/// Success pool, schedule and random stream used for zone refreshes.
pub struct DerContext<'a> {
    pub pool: &'a SuccessPool,
    pub schedule: DerSchedule,
    pub rng: &'a mut Stream,
}

/// Output of one optimization pass over a prepared batch.
#[derive(Debug, Clone)]
pub struct Update {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub td_errors: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Learner {
    cfg: LearnerConfig,
    action_bound: f64,
    actor: Mlp,
    critic: Mlp,
    target_actor: Mlp,
    target_critic: Mlp,
    actor_adam: AdamState,
    critic_adam: AdamState,
    filter: ObservationFilter,
    steps: u64,
    target_copies: u64,
}

impl Learner {
    pub fn new(cfg: LearnerConfig, action_bound: f64, filter: ObservationFilter, rng: &mut Stream) -> Self {
        let actor = Mlp::new(&cfg.actor_widths(), OutputActivation::Tanh, rng);
        let critic = Mlp::new(&cfg.critic_widths(), OutputActivation::Identity, rng);
        Self::from_networks(cfg, action_bound, filter, actor, critic)
    }

    /// Builds a learner around given online networks; targets start as copies.
    pub fn from_networks(
        cfg: LearnerConfig,
        action_bound: f64,
        filter: ObservationFilter,
        actor: Mlp,
        critic: Mlp,
    ) -> Self {
        assert_eq!(actor.input_dim(), OBS_DIM);
        assert_eq!(actor.output_dim(), ACTION_DIM);
        assert_eq!(critic.input_dim(), OBS_DIM + ACTION_DIM);
        assert_eq!(critic.output_dim(), 1);
        Self {
            actor_adam: AdamState::new(cfg.adam, actor.param_count()),
            critic_adam: AdamState::new(cfg.adam, critic.param_count()),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            filter,
            cfg,
            action_bound,
            steps: 0,
            target_copies: 0,
        }
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    pub fn action_bound(&self) -> f64 {
        self.action_bound
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn target_actor(&self) -> &Mlp {
        &self.target_actor
    }

    pub fn target_critic(&self) -> &Mlp {
        &self.target_critic
    }

    pub fn filter(&self) -> &ObservationFilter {
        &self.filter
    }

    /// Folds worker-side filter statistics into the trainer's filter.
    pub fn merge_filter(&mut self, delta: &ObservationFilter) {
        self.filter.merge(delta);
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn target_copies(&self) -> u64 {
        self.target_copies
    }

    fn critic_input(states: &Array2<f64>, actions: &Array2<f64>) -> Array2<f64> {
        concatenate![Axis(1), *states, *actions]
    }

    /// `Q(s, a)` for each row of the batch under the online critic.
    pub fn q_values(&self, b: &TrainBatch) -> Array1<f64> {
        let x = Self::critic_input(&b.states, &b.actions);
        let cache = self.critic.forward_batch(x.view()).expect("critic input width");
        cache.output().column(0).to_owned()
    }

    /// `y = scale * r + gamma * (1 - done) * Q'(s', pi'(s'))`.
    pub fn td_targets(&self, b: &TrainBatch) -> Array1<f64> {
        let next_a = self.target_actor.forward_batch(b.next_states.view()).expect("actor input width");
        let x = Self::critic_input(&b.next_states, next_a.output());
        let q_next = self.target_critic.forward_batch(x.view()).expect("critic input width");
        let q_next = q_next.output().column(0);
        let mut y = Array1::zeros(b.len());
        for i in 0..b.len() {
            y[i] = self.cfg.reward_scale * b.rewards[i] + self.cfg.gamma * (1.0 - b.done[i]) * q_next[i];
        }
        y
    }

    /// `|y - Q(s, a)|` per row.
    pub fn compute_priorities(&self, b: &TrainBatch, targets: &Array1<f64>) -> Vec<f64> {
        let q = self.q_values(b);
        targets.iter().zip(q.iter()).map(|(y, q)| (y - q).abs()).collect()
    }

    /// Weighted squared TD loss and its flat gradient with respect to the
    /// critic parameters. Also returns the signed TD errors `y - Q`.
    pub fn critic_gradients(&self, b: &TrainBatch, targets: &Array1<f64>) -> (f64, Vec<f64>, Vec<f64>) {
        let n = b.len() as f64;
        let x = Self::critic_input(&b.states, &b.actions);
        let cache = self.critic.forward_batch(x.view()).expect("critic input width");
        let q = cache.output().column(0);
        let coef = self.cfg.critic_loss_coef;
        let mut loss = 0.0;
        let mut td = Vec::with_capacity(b.len());
        let mut upstream = Array2::zeros((b.len(), 1));
        for i in 0..b.len() {
            let e = targets[i] - q[i];
            loss += b.weights[i] * e * e;
            upstream[[i, 0]] = -2.0 * coef * b.weights[i] * e / n;
            td.push(e);
        }
        let (grads, _) = self.critic.backward(&cache, upstream.view()).expect("critic upstream shape");
        (coef * loss / n, crate::netlib::flatten_grads(&grads), td)
    }

    /// `-coef * mean Q(s, pi(s))` and its flat gradient with respect to the
    /// actor parameters, chained through the critic's action input.
    pub fn actor_gradients(&self, b: &TrainBatch) -> (f64, Vec<f64>) {
        let n = b.len() as f64;
        let coef = self.cfg.actor_loss_coef;
        let actor_cache = self.actor.forward_batch(b.states.view()).expect("actor input width");
        let x = Self::critic_input(&b.states, actor_cache.output());
        let critic_cache = self.critic.forward_batch(x.view()).expect("critic input width");
        let loss = -coef * critic_cache.output().sum() / n;
        let upstream = Array2::from_elem((b.len(), 1), -coef / n);
        let (_, input_grad) = self.critic.backward(&critic_cache, upstream.view()).expect("critic upstream shape");
        let d_action = input_grad.slice(s![.., OBS_DIM..]).to_owned();
        let (grads, _) = self.actor.backward(&actor_cache, d_action.view()).expect("actor upstream shape");
        (loss, crate::netlib::flatten_grads(&grads))
    }

    /// One critic and one actor Adam step on a prepared batch. Both
    /// gradients are taken at the current parameters before either update.
    pub fn apply_batch(&mut self, b: &TrainBatch) -> Update {
        let y = self.td_targets(b);
        let (critic_loss, critic_grad, td_errors) = self.critic_gradients(b, &y);
        let (actor_loss, actor_grad) = self.actor_gradients(b);

        let mut flat = self.critic.flatten();
        if self.critic_adam.step(&mut flat, &critic_grad).is_ok() {
            self.critic.set_flat(&flat).expect("critic size");
        } else {
            log::warn!("critic step {} skipped: non-finite gradient", self.steps + 1);
        }
        let mut flat = self.actor.flatten();
        if self.actor_adam.step(&mut flat, &actor_grad).is_ok() {
            self.actor.set_flat(&flat).expect("actor size");
        } else {
            log::warn!("actor step {} skipped: non-finite gradient", self.steps + 1);
        }
        Update {
            critic_loss,
            actor_loss,
            td_errors,
        }
    }

    fn update_targets(&mut self) {
        let tau = self.cfg.tau;
        for (target, online) in [(&mut self.target_actor, &self.actor), (&mut self.target_critic, &self.critic)] {
            let mut p = target.parameters();
            soft_update(&mut p, &online.parameters(), tau).expect("matching manifests");
            target.set_flat(&p.values).expect("target size");
        }
        self.target_copies += 1;
    }

    /// Samples from one uniformly chosen ready buffer, updates both networks,
    /// writes `|TD|` priorities back, and runs the target and refresh
    /// schedules. Returns `None` without side effects when no buffer holds
    /// `learning_starts` transitions.
    pub fn train_step(&mut self, buffers: &ReplaySet, der: Option<DerContext<'_>>, rng: &mut Stream) -> Option<StepReport> {
        let ready = buffers.ready(self.cfg.learning_starts.max(1));
        if ready.is_empty() {
            return None;
        }
        let buffer = ready[rng.random_range(0..ready.len())];
        let sample = {
            let buf = buffers.lock(buffer);
            let beta = buf.config().beta;
            buf.sample(self.cfg.batch_size, beta, rng).ok()?
        };
        let batch = TrainBatch::from_sample(&sample, &self.filter, self.action_bound);
        let update = self.apply_batch(&batch);
        buffers.lock(buffer).update_priorities(&sample.refs, &update.td_errors);

        self.steps += 1;
        let target_copied = self.steps.is_multiple_of(self.cfg.target_update_freq);
        if target_copied {
            self.update_targets();
        }
        let refreshes = match der {
            Some(ctx) if ctx.schedule.is_due(self.steps) => refresh_zones(ctx.pool, buffers, &ctx.schedule, ctx.rng),
            _ => Vec::new(),
        };
        Some(StepReport {
            step: self.steps,
            buffer,
            critic_loss: update.critic_loss,
            actor_loss: update.actor_loss,
            target_copied,
            refreshes,
        })
    }

    /// Publishes the current actor and filter to `store`; returns the new version.
    pub fn publish_parameters(&self, store: &ParameterStore) -> u64 {
        store.publish(self.actor.clone(), self.filter.clone())
    }

    /// Writes networks, filter and counters. Optimizer moments are not saved.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<(), NetError> {
        writeln!(w, "learner")?;
        writeln!(w, "steps {}", self.steps)?;
        writeln!(w, "target_copies {}", self.target_copies)?;
        writeln!(w, "action_bound {:?}", self.action_bound)?;
        write_filter(w, &self.filter)?;
        write_params(w, "actor", &self.actor.parameters())?;
        write_params(w, "critic", &self.critic.parameters())?;
        write_params(w, "target_actor", &self.target_actor.parameters())?;
        write_params(w, "target_critic", &self.target_critic.parameters())?;
        Ok(())
    }

    /// Restores a learner written by [`Learner::write_checkpoint`]. Adam
    /// state restarts from zero.
    pub fn read_checkpoint<R: BufRead>(r: &mut R, cfg: LearnerConfig) -> Result<Self, NetError> {
        let mut line = String::new();
        let mut next = |r: &mut R| -> Result<String, NetError> {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(NetError::Parse("unexpected end of checkpoint".into()));
            }
            Ok(line.trim_end().to_string())
        };
        if next(r)? != "learner" {
            return Err(NetError::Parse("missing learner header".into()));
        }
        let steps: u64 = parse_field(&next(r)?, "steps")?;
        let target_copies: u64 = parse_field(&next(r)?, "target_copies")?;
        let action_bound: f64 = parse_field(&next(r)?, "action_bound")?;
        let filter = read_filter(r)?;
        let mut nets = Vec::with_capacity(4);
        for expected in ["actor", "critic", "target_actor", "target_critic"] {
            let (name, p) = read_params(r)?;
            if name != expected {
                return Err(NetError::Parse(format!("expected block '{expected}', found '{name}'")));
            }
            nets.push(Mlp::from_parameters(&p)?);
        }
        let target_critic = nets.pop().unwrap();
        let target_actor = nets.pop().unwrap();
        let critic = nets.pop().unwrap();
        let actor = nets.pop().unwrap();
        let mut learner = Self::from_networks(cfg, action_bound, filter, actor, critic);
        learner.target_actor = target_actor;
        learner.target_critic = target_critic;
        learner.steps = steps;
        learner.target_copies = target_copies;
        Ok(learner)
    }
}

fn parse_field<T: std::str::FromStr>(line: &str, key: &str) -> Result<T, NetError> {
    line.strip_prefix(key)
        .and_then(|rest| rest.trim().parse().ok())
        .ok_or_else(|| NetError::Parse(format!("expected '{key} <value>', found '{line}'")))
}

fn write_filter<W: Write>(w: &mut W, f: &ObservationFilter) -> Result<(), NetError> {
    writeln!(w, "filter {}", f.count())?;
    match f.clip() {
        Some(c) => writeln!(w, "clip {c:?}")?,
        None => writeln!(w, "clip none")?,
    }
    for row in [f.mean(), f.m2()] {
        let vals: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", vals.join(" "))?;
    }
    Ok(())
}

fn read_filter<R: BufRead>(r: &mut R) -> Result<ObservationFilter, NetError> {
    let mut lines = Vec::with_capacity(4);
    for _ in 0..4 {
        let mut l = String::new();
        if r.read_line(&mut l)? == 0 {
            return Err(NetError::Parse("truncated filter block".into()));
        }
        lines.push(l.trim_end().to_string());
    }
    let count: u64 = parse_field(&lines[0], "filter")?;
    let clip = match lines[1].strip_prefix("clip ") {
        Some("none") => None,
        Some(v) => Some(v.parse().map_err(|_| NetError::Parse(format!("bad clip '{v}'")))?),
        None => return Err(NetError::Parse("missing clip line".into())),
    };
    let row = |l: &str| -> Result<[f64; OBS_DIM], NetError> {
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| NetError::Parse(format!("bad filter value '{v}'"))))
            .collect::<Result<_, _>>()?;
        vals.try_into().map_err(|_| NetError::Parse("filter row has wrong width".into()))
    };
    Ok(ObservationFilter::from_parts(count, row(&lines[2])?, row(&lines[3])?, clip))
}

/// Actor and filter as seen by workers, with a checksum over both.
#[derive(Debug, Clone)]
pub struct PolicySnapshot {
    pub version: u64,
    pub actor: Mlp,
    pub filter: ObservationFilter,
    pub checksum: u64,
}

impl PolicySnapshot {
    pub fn new(version: u64, actor: Mlp, filter: ObservationFilter) -> Self {
        let checksum = Self::compute_checksum(&actor, &filter);
        Self {
            version,
            actor,
            filter,
            checksum,
        }
    }

    pub fn compute_checksum(actor: &Mlp, filter: &ObservationFilter) -> u64 {
        let mut h = Fnv64::new();
        for layer in actor.layers() {
            for v in layer.weights.iter().chain(layer.bias.iter()) {
                h.write_u64(v.to_bits());
            }
        }
        h.write_u64(filter.checksum());
        h.finish()
    }

    /// Recomputes the checksum and compares it with the stored one.
    pub fn verify(&self) -> bool {
        Self::compute_checksum(&self.actor, &self.filter) == self.checksum
    }
}

/// Latest published policy. Readers get an immutable `Arc`, so a snapshot
/// can never change underneath them.
#[derive(Debug)]
pub struct ParameterStore {
    current: RwLock<Arc<PolicySnapshot>>,
}

impl ParameterStore {
    pub fn new(actor: Mlp, filter: ObservationFilter) -> Self {
        Self {
            current: RwLock::new(Arc::new(PolicySnapshot::new(0, actor, filter))),
        }
    }

    pub fn latest(&self) -> Arc<PolicySnapshot> {
        self.current.read().clone()
    }

    pub fn version(&self) -> u64 {
        self.current.read().version
    }

    pub fn publish(&self, actor: Mlp, filter: ObservationFilter) -> u64 {
        let mut cur = self.current.write();
        let version = cur.version + 1;
        *cur = Arc::new(PolicySnapshot::new(version, actor, filter));
        version
    }
}

/// CSV training log: `iteration,critic_loss,actor_loss,steps_per_sec`.
/// With `deterministic` set the rate column is written as 0.
pub struct TrainingLog<W: Write> {
    out: W,
    started: Instant,
    deterministic: bool,
}

impl<W: Write> TrainingLog<W> {
    pub fn new(mut out: W, deterministic: bool) -> std::io::Result<Self> {
        writeln!(out, "iteration,critic_loss,actor_loss,steps_per_sec")?;
        Ok(Self {
            out,
            started: Instant::now(),
            deterministic,
        })
    }

    pub fn record(&mut self, r: &StepReport) -> std::io::Result<()> {
        let rate = if self.deterministic {
            0.0
        } else {
            r.step as f64 / self.started.elapsed().as_secs_f64().max(1e-9)
        };
        writeln!(self.out, "{},{:?},{:?},{:.3}", r.step, r.critic_loss, r.actor_loss, rate)
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
