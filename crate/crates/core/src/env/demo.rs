//! Scripted demonstrator standing in for teleoperated demonstrations.

use rand_distr::{Distribution, Normal};
use thiserror::Error;

use super::{EnvError, Environment, InsertionEnv};
use crate::rng::Stream;
use crate::types::{Action, Episode, Transition, TypeError};

const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("no successful demonstration after {0} attempts; check the environment configuration")]
    NoSuccess(usize),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// Proportional pose controller with privileged access to the goal.
#[derive(Debug, Clone, Copy)]
pub struct ScriptedController {
    /// Fraction of the remaining error removed per control period.
    pub gain: f64,
}

impl Default for ScriptedController {
    fn default() -> Self {
        Self { gain: 0.5 }
    }
}

impl ScriptedController {
    pub fn act(&self, env: &InsertionEnv, jitter: [f64; 3]) -> Action {
        let cfg = env.config();
        let p = env.state().physical;
        let g = env.goal();
        let k = self.gain / cfg.dt;
        Action::clamped(
            [
                k * (g.x - p.x) + jitter[0],
                0.0,
                k * (g.z - p.z) + jitter[1],
                0.0,
                k * (g.theta - p.theta) + jitter[2],
                0.0,
            ],
            cfg.action_bound,
        )
        .expect("controller output is finite")
    }
}

/// Rolls the scripted controller with Gaussian jitter `sigma` (m/s, rad/s)
/// until an episode succeeds, retrying up to 100 times.
pub fn scripted_demo(
    env: &mut InsertionEnv,
    rng: &mut Stream,
    sigma: f64,
    max_steps: usize,
) -> Result<Episode, DemoError> {
    let controller = ScriptedController::default();
    let noise = Normal::new(0.0, sigma.max(0.0)).expect("nonnegative std");
    for _ in 0..MAX_ATTEMPTS {
        let mut obs = env.reset(rng);
        let mut transitions = Vec::new();
        for t in 0..max_steps {
            let jitter = if sigma > 0.0 {
                [noise.sample(rng), noise.sample(rng), noise.sample(rng)]
            } else {
                [0.0; 3]
            };
            let action = controller.act(env, jitter);
            let out = env.step(&action)?;
            let done = out.done || t + 1 == max_steps;
            transitions.push(Transition::new(obs, action, out.obs, out.reward, done, out.success)?);
            obs = out.obs;
            if done {
                break;
            }
        }
        if transitions.last().is_some_and(|t| t.success) {
            return Ok(Episode::new(transitions, max_steps)?);
        }
    }
    log::error!("scripted demonstrator failed {MAX_ATTEMPTS} times");
    Err(DemoError::NoSuccess(MAX_ATTEMPTS))
}
