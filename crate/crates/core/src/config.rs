//! Experiment configuration: task presets plus TOML overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::der::{DerConfig, Structure};
use crate::env::{EnvConfig, Variant};
use crate::learner::LearnerConfig;
use crate::replay::ReplayConfig;
use crate::worker::WorkerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Everything needed to run one ablation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Variant,
    pub structure: Structure,
    pub der_enabled: bool,
    pub num_buffers: usize,
    pub num_workers: usize,
    pub seed: u64,
    /// Seeds used by `ablate`.
    pub seeds: Vec<u64>,
    /// Environment steps per reported iteration.
    pub iteration_timesteps: u64,
    pub max_iterations: usize,
    /// Scripted demonstrations generated per run.
    pub num_demos: usize,
    /// Jitter std of the scripted demonstrator.
    pub demo_jitter: f64,
    /// Clip applied to normalized observations.
    pub filter_clip: Option<f64>,
    /// Single-threaded round-robin execution with reproducible output.
    pub deterministic: bool,
    /// End the run after the first iteration whose success rate reaches this.
    pub stop_at_success: Option<f64>,
    /// Gradient steps per environment step.
    pub replay_ratio: f64,
    /// Trainer steps between policy publications.
    pub publish_interval: u64,
    pub replay: ReplayConfig,
    pub learner: LearnerConfig,
    pub worker: WorkerConfig,
    pub der: DerConfig,
    pub env: EnvConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_task(Variant::PegInHole)
    }
}

impl ExperimentConfig {
    /// Desk-scale preset for a task.
    pub fn for_task(task: Variant) -> Self {
        let (hidden, workers) = match task {
            Variant::PegInHole => (vec![64, 64], 5),
            Variant::LapJoint => (vec![256, 256], 30),
        };
        Self {
            task,
            structure: Structure::NoDemos,
            der_enabled: true,
            num_buffers: 6,
            num_workers: workers,
            seed: 0,
            seeds: vec![0, 1, 2],
            iteration_timesteps: 10_000,
            max_iterations: 150,
            num_demos: 6,
            demo_jitter: 0.002,
            filter_clip: Some(10.0),
            deterministic: false,
            stop_at_success: None,
            replay_ratio: 0.1,
            publish_interval: 10,
            replay: ReplayConfig::default(),
            learner: LearnerConfig {
                hidden,
                target_update_freq: 500,
                batch_size: 128,
                ..LearnerConfig::default()
            },
            worker: WorkerConfig {
                noise_scale: 0.3,
                ..WorkerConfig::default()
            },
            der: DerConfig::default(),
            env: EnvConfig::for_variant(task),
        }
    }

    /// Buffer, target-update and iteration sizes at the original scale.
    pub fn paper_scale(task: Variant) -> Self {
        let mut c = Self::for_task(task);
        c.replay = ReplayConfig::paper_scale();
        c.learner.target_update_freq = 50_000;
        c.learner.batch_size = LearnerConfig::default().batch_size;
        c.worker.noise_scale = WorkerConfig::default().noise_scale;
        c.iteration_timesteps = 200_000;
        c
    }

    /// Parses TOML. The optional top-level `task` key picks the preset that
    /// the remaining keys override.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let overrides: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let task = match overrides.get("task") {
            Some(v) => v
                .as_str()
                .ok_or_else(|| ConfigError::Parse("task must be a string".into()))?
                .parse::<Variant>()
                .map_err(ConfigError::Parse)?,
            None => Variant::PegInHole,
        };
        let mut base = toml::Table::try_from(Self::for_task(task)).map_err(|e| ConfigError::Parse(e.to_string()))?;
        merge_tables(&mut base, overrides);
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.num_buffers == 0 {
            return bad("num_buffers must be at least 1".into());
        }
        if self.num_workers == 0 {
            return bad("num_workers must be at least 1".into());
        }
        let needed = self.structure.demos_required(self.num_buffers);
        if self.num_demos < needed {
            return bad(format!(
                "structure {} needs at least {needed} demonstrations, num_demos is {}",
                self.structure, self.num_demos
            ));
        }
        if self.env.variant != self.task {
            return bad(format!(
                "env.variant {} does not match task {}",
                self.env.variant.name(),
                self.task.name()
            ));
        }
        if self.iteration_timesteps == 0 {
            return bad("iteration_timesteps must be positive".into());
        }
        if !(self.replay_ratio >= 0.0 && self.replay_ratio.is_finite()) {
            return bad(format!("replay_ratio must be >= 0, got {}", self.replay_ratio));
        }
        if self.publish_interval == 0 {
            return bad("publish_interval must be at least 1".into());
        }
        if self.der.period == 0 {
            return bad("der.period must be at least 1".into());
        }
        if let Some(s) = self.stop_at_success {
            if !(0.0..=1.0).contains(&s) {
                return bad(format!("stop_at_success must be in [0, 1], got {s}"));
            }
        }
        if let Some(c) = self.filter_clip {
            if c.is_nan() || c <= 0.0 {
                return bad(format!("filter_clip must be positive, got {c}"));
            }
        }
        if self.demo_jitter.is_nan() || self.demo_jitter < 0.0 {
            return bad("demo_jitter must be >= 0".into());
        }
        self.replay.validate().map_err(ConfigError::Invalid)?;
        self.learner.validate().map_err(ConfigError::Invalid)?;
        self.worker.validate().map_err(ConfigError::Invalid)?;
        self.env.validate().map_err(ConfigError::Invalid)?;
        Ok(())
    }

    /// File stem encoding task, structure, DER flag and seed.
    pub fn run_name(&self) -> String {
        format!(
            "{}_{}_{}_seed{}",
            self.task.name(),
            self.structure.name(),
            if self.der_enabled { "der" } else { "noder" },
            self.seed
        )
    }
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
