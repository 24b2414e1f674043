//! Fixed-layout observation/action vectors and the transition/episode records
//! stored in replay buffers.

use thiserror::Error;

pub const OBS_DIM: usize = 13;
pub const ACTION_DIM: usize = 6;

/// Tolerance used when checking relative equality of an episode's cached
/// return against the sum of its rewards.
const RETURN_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TypeError {
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("quaternion has zero or non-unit norm")]
    DegenerateQuaternion,
    #[error("transition marked successful but not done")]
    SuccessWithoutDone,
    #[error("episode is empty")]
    EmptyEpisode,
    #[error("episode length {len} exceeds limit {limit}")]
    EpisodeTooLong { len: usize, limit: usize },
    #[error("episode success flag disagrees with its final transition")]
    SuccessMismatch,
    #[error("only the final transition of an episode may be terminal (step {0})")]
    EarlyTerminal(usize),
}

/// Pose + wrench observation: `[x, y, z, qx, qy, qz, qw, fx, fy, fz, tx, ty, tz]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation([f64; OBS_DIM]);

impl Observation {
    /// Builds an observation, normalizing the quaternion.
    pub fn new(position: [f64; 3], orientation: [f64; 4], wrench: [f64; 6]) -> Result<Self, TypeError> {
        let mut v = [0.0; OBS_DIM];
        v[0..3].copy_from_slice(&position);
        v[3..7].copy_from_slice(&orientation);
        v[7..13].copy_from_slice(&wrench);
        Self::from_array(v)
    }

    pub fn from_slice(values: &[f64]) -> Result<Self, TypeError> {
        let arr: [f64; OBS_DIM] = values.try_into().map_err(|_| TypeError::Length {
            expected: OBS_DIM,
            got: values.len(),
        })?;
        Self::from_array(arr)
    }

    pub fn from_array(mut v: [f64; OBS_DIM]) -> Result<Self, TypeError> {
        check_finite(&v)?;
        let norm = v[3..7].iter().map(|q| q * q).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(TypeError::DegenerateQuaternion);
        }
        // Exact unit quaternions are left untouched so that layouts round-trip bit-exactly.
        if norm != 1.0 {
            for q in &mut v[3..7] {
                *q /= norm;
            }
        }
        Ok(Self(v))
    }

    /// Accepts values written by a previous run as-is. The quaternion must
    /// already be unit length to within 1e-9; it is not renormalized.
    pub fn from_stored(v: [f64; OBS_DIM]) -> Result<Self, TypeError> {
        check_finite(&v)?;
        let norm = v[3..7].iter().map(|q| q * q).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(TypeError::DegenerateQuaternion);
        }
        Ok(Self(v))
    }

    pub fn as_array(&self) -> &[f64; OBS_DIM] {
        &self.0
    }

    pub fn position(&self) -> [f64; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn orientation(&self) -> [f64; 4] {
        [self.0[3], self.0[4], self.0[5], self.0[6]]
    }

    pub fn wrench(&self) -> [f64; 6] {
        let mut w = [0.0; 6];
        w.copy_from_slice(&self.0[7..13]);
        w
    }
}

/// Cartesian twist command `[vx, vy, vz, wx, wy, wz]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action([f64; ACTION_DIM]);

impl Action {
    /// Clamps every component into `[-a_max, a_max]`.
    pub fn clamped(values: [f64; ACTION_DIM], a_max: f64) -> Result<Self, TypeError> {
        check_finite(&values)?;
        Ok(Self(values.map(|x| x.clamp(-a_max, a_max))))
    }

    /// Builds an action without clamping; used when reading stored records.
    pub fn from_array(values: [f64; ACTION_DIM]) -> Result<Self, TypeError> {
        check_finite(&values)?;
        Ok(Self(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self, TypeError> {
        let arr: [f64; ACTION_DIM] = values.try_into().map_err(|_| TypeError::Length {
            expected: ACTION_DIM,
            got: values.len(),
        })?;
        Self::from_array(arr)
    }

    pub fn zero() -> Self {
        Self([0.0; ACTION_DIM])
    }

    pub fn as_array(&self) -> &[f64; ACTION_DIM] {
        &self.0
    }

    pub fn linear(&self) -> [f64; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn angular(&self) -> [f64; 3] {
        [self.0[3], self.0[4], self.0[5]]
    }
}

fn check_finite(values: &[f64]) -> Result<(), TypeError> {
    match values.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(TypeError::NonFinite(i)),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: Action,
    pub next_obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

impl Transition {
    pub fn new(
        obs: Observation,
        action: Action,
        next_obs: Observation,
        reward: f64,
        done: bool,
        success: bool,
    ) -> Result<Self, TypeError> {
        if !reward.is_finite() {
            return Err(TypeError::NonFinite(0));
        }
        if success && !done {
            return Err(TypeError::SuccessWithoutDone);
        }
        Ok(Self {
            obs,
            action,
            next_obs,
            reward,
            done,
            success,
        })
    }
}

/// A completed rollout. The final transition is always terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    transitions: Vec<Transition>,
    success: bool,
    total_reward: f64,
}

impl Episode {
    /// Validates and wraps a transition sequence. `max_len` bounds the length
    /// (use `usize::MAX` when no horizon applies).
    pub fn new(transitions: Vec<Transition>, max_len: usize) -> Result<Self, TypeError> {
        let last = transitions.last().ok_or(TypeError::EmptyEpisode)?;
        if transitions.len() > max_len {
            return Err(TypeError::EpisodeTooLong {
                len: transitions.len(),
                limit: max_len,
            });
        }
        if let Some(i) = transitions[..transitions.len() - 1].iter().position(|t| t.done) {
            return Err(TypeError::EarlyTerminal(i));
        }
        let success = last.success;
        let total_reward = transitions.iter().map(|t| t.reward).sum();
        Ok(Self {
            transitions,
            success,
            total_reward,
        })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn into_transitions(self) -> Vec<Transition> {
        self.transitions
    }

    pub fn success(&self) -> bool {
        self.success
    }

    pub fn total_reward(&self) -> f64 {
        self.total_reward
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Checks the cached fields against the transitions.
    pub fn is_consistent(&self) -> bool {
        let sum: f64 = self.transitions.iter().map(|t| t.reward).sum();
        let scale = sum.abs().max(self.total_reward.abs()).max(1.0);
        self.transitions.last().map(|t| t.success) == Some(self.success)
            && (sum - self.total_reward).abs() <= RETURN_REL_TOL * scale
    }
}
