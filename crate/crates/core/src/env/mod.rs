//! Environments: the planar insertion tasks and the scripted demonstrator.

mod demo;
mod insertion;

pub use demo::{scripted_demo, DemoError, ScriptedController};
pub use insertion::{
    dynamics, reward, wrench, EnvConfig, EnvState, HoleFrame, InsertionEnv, PlanarPose, Variant,
};

use thiserror::Error;

use crate::rng::Stream;
use crate::types::{Action, Observation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("action component {0} is not finite")]
    NonFiniteAction(usize),
    #[error("step called on a finished episode")]
    EpisodeOver,
    #[error("environment fault: {0}")]
    Fault(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// Episodic control task driven by workers.
pub trait Environment: Send {
    fn reset(&mut self, rng: &mut Stream) -> Observation;

    fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError>;

    /// Per-component action bound.
    fn action_bound(&self) -> f64;
}
