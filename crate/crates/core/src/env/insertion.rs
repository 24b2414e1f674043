//! Planar insertion tasks with analytic contact.
//!
//! The moving piece is a rigid peg described by its tip pose `(x, z, theta)`
//! in the vertical x-z plane; `theta` is a rotation about the y axis. The
//! fixed part is a slot of half-width `w` cut `hole_depth` deep into a
//! surface at `z = 0`, optionally with a chamfer that widens the mouth
//! linearly by `chamfer_depth` over the top `chamfer_depth` of the slot.
//!
//! The controller integrates a commanded pose. The physical pose is the
//! projection of the commanded pose out of solid material, and the contact
//! wrench is a spring on the gap between the two:
//!
//! ```text
//! f      = -k     * (commanded - physical)   (x and z)
//! tau_y  = -k_rot * (commanded - physical).theta - L * f_x - s * e(theta) * f_z
//! ```
//!
//! where `L` is the sensor-to-tip lever, `s` the side of the hole the peg
//! leans against and `e(theta)` the peg's tilted half-extent. Both poses live
//! in [`EnvState`], so the wrench is a function of state alone and vanishes
//! exactly when nothing overlaps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EnvError, Environment, StepOutcome};
use crate::rng::Stream;
use crate::types::{Action, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    PegInHole,
    LapJoint,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::PegInHole => "peg_in_hole",
            Variant::LapJoint => "lap_joint",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "peg_in_hole" => Ok(Variant::PegInHole),
            "lap_joint" => Ok(Variant::LapJoint),
            other => Err(format!("unknown environment '{other}'")),
        }
    }
}

/// Geometry, contact and reward parameters. Lengths in meters, angles in
/// radians, time in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub variant: Variant,
    pub hole_half_width: f64,
    pub clearance: f64,
    pub chamfer_depth: f64,
    pub hole_depth: f64,
    /// Tip height above the surface at reset.
    pub start_height: f64,
    pub stiffness: f64,
    pub rot_stiffness: f64,
    /// Distance from the wrench sensor down to the peg tip.
    pub lever_length: f64,
    /// Growth of the peg's horizontal half-extent per unit `|sin theta|`.
    pub tilt_length: f64,
    /// Commanded pose may lead the physical pose by at most this much.
    pub max_penetration: f64,
    pub max_rot_penetration: f64,
    pub success_eps: f64,
    pub bonus: f64,
    /// Meters per radian in the pose distance.
    pub rot_weight: f64,
    pub dt: f64,
    pub action_bound: f64,
    /// Peg-in-hole: initial tilt drawn from `[-r, r]`.
    pub init_theta_range: f64,
    /// Peg-in-hole: initial lateral offset drawn from `[-r, r]`.
    pub init_x_range: f64,
    /// Lap-joint: hole frame rotation drawn from `[min, max]`.
    pub hole_theta_range: [f64; 2],
    /// Lap-joint: hole frame offset drawn from `[min, max]`.
    pub hole_x_range: [f64; 2],
    pub workspace_half_width: f64,
    pub workspace_height: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self::peg_in_hole()
    }
}

impl EnvConfig {
    pub fn peg_in_hole() -> Self {
        Self {
            variant: Variant::PegInHole,
            hole_half_width: 0.010,
            clearance: 0.002,
            chamfer_depth: 0.005,
            hole_depth: 0.030,
            start_height: 0.030,
            stiffness: 1000.0,
            rot_stiffness: 10.0,
            lever_length: 0.050,
            tilt_length: 0.020,
            max_penetration: 0.010,
            max_rot_penetration: 0.1,
            success_eps: 0.005,
            bonus: 1000.0,
            rot_weight: 0.1,
            dt: 1.0,
            action_bound: 0.05,
            init_theta_range: 30f64.to_radians(),
            init_x_range: 0.0,
            hole_theta_range: [0.0, 0.0],
            hole_x_range: [0.0, 0.0],
            workspace_half_width: 0.1,
            workspace_height: 0.2,
        }
    }

    pub fn lap_joint() -> Self {
        Self {
            variant: Variant::LapJoint,
            clearance: 0.001,
            chamfer_depth: 0.0,
            success_eps: 0.002,
            bonus: 100.0,
            init_theta_range: 0.0,
            hole_theta_range: [(-2f64).to_radians(), 0.0],
            hole_x_range: [-0.002, 0.002],
            ..Self::peg_in_hole()
        }
    }

    pub fn for_variant(variant: Variant) -> Self {
        match variant {
            Variant::PegInHole => Self::peg_in_hole(),
            Variant::LapJoint => Self::lap_joint(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("hole_half_width", self.hole_half_width),
            ("clearance", self.clearance),
            ("hole_depth", self.hole_depth),
            ("stiffness", self.stiffness),
            ("success_eps", self.success_eps),
            ("dt", self.dt),
            ("action_bound", self.action_bound),
            ("tilt_length", self.tilt_length),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("env.{name} must be positive, got {v}"));
            }
        }
        if self.clearance >= self.hole_half_width {
            return Err("env.clearance must be smaller than hole_half_width".into());
        }
        if self.chamfer_depth < 0.0 || self.start_height < 0.0 {
            return Err("env.chamfer_depth and env.start_height must be nonnegative".into());
        }
        if self.variant == Variant::LapJoint && self.chamfer_depth != 0.0 {
            return Err("lap_joint has straight corners; chamfer_depth must be 0".into());
        }
        Ok(())
    }

    pub fn peg_half_width(&self) -> f64 {
        self.hole_half_width - self.clearance
    }

    /// Slot half-width at height `z` (`z <= 0`), including the chamfer.
    pub fn slot_half_width(&self, z: f64) -> f64 {
        self.hole_half_width + (self.chamfer_depth + z.min(0.0)).max(0.0)
    }

    /// Horizontal half-extent of the peg tilted by `theta`.
    pub fn peg_extent(&self, theta: f64) -> f64 {
        self.peg_half_width() + self.tilt_length * theta.sin().abs()
    }
}

/// Tip pose in the x-z plane.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlanarPose {
    pub x: f64,
    pub z: f64,
    pub theta: f64,
}

impl PlanarPose {
    pub fn new(x: f64, z: f64, theta: f64) -> Self {
        Self { x, z, theta }
    }

    /// Position `(x, 0, z)` and rotation about y as `(qx, qy, qz, qw)`.
    pub fn embed(&self, wrench: [f64; 6]) -> Observation {
        let (s, c) = (0.5 * self.theta).sin_cos();
        Observation::new([self.x, 0.0, self.z], [0.0, s, 0.0, c], wrench)
            .expect("finite pose embeds into a valid observation")
    }

    pub fn from_observation(obs: &Observation) -> Self {
        let p = obs.position();
        let q = obs.orientation();
        Self {
            x: p[0],
            z: p[2],
            theta: 2.0 * q[1].atan2(q[3]),
        }
    }
}

/// Pose of the fixed part; the goal sits at the slot bottom in this frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HoleFrame {
    pub x: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub physical: PlanarPose,
    pub commanded: PlanarPose,
    pub hole: HoleFrame,
}

impl EnvState {
    /// Contact-free state at `pose`.
    pub fn at_rest(pose: PlanarPose, hole: HoleFrame) -> Self {
        Self {
            physical: pose,
            commanded: pose,
            hole,
        }
    }
}

/// Distance-based reward with a bonus inside the closed `eps`-ball.
pub fn reward(distance: f64, eps: f64, bonus: f64) -> f64 {
    if distance > eps {
        -distance
    } else {
        -distance + bonus
    }
}

#[derive(Debug, Clone)]
pub struct InsertionEnv {
    cfg: EnvConfig,
    state: EnvState,
    finished: bool,
}

impl InsertionEnv {
    pub fn new(cfg: EnvConfig) -> Self {
        let state = EnvState::at_rest(PlanarPose::new(0.0, cfg.start_height, 0.0), HoleFrame::default());
        Self {
            cfg,
            state,
            finished: false,
        }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn goal(&self) -> PlanarPose {
        goal_of(&self.cfg, &self.state.hole)
    }

    pub fn reset_to(&mut self, state: EnvState) -> Observation {
        self.state = state;
        self.finished = false;
        self.observe()
    }

    /// Draws an initial state; the only stochastic part of the environment.
    pub fn sample_initial_state(&self, rng: &mut Stream) -> EnvState {
        let cfg = &self.cfg;
        match cfg.variant {
            Variant::PegInHole => {
                let theta = uniform(rng, -cfg.init_theta_range, cfg.init_theta_range);
                let x = uniform(rng, -cfg.init_x_range, cfg.init_x_range);
                EnvState::at_rest(PlanarPose::new(x, cfg.start_height, theta), HoleFrame::default())
            }
            Variant::LapJoint => {
                let theta = uniform(rng, cfg.hole_theta_range[0], cfg.hole_theta_range[1]);
                let x = uniform(rng, cfg.hole_x_range[0], cfg.hole_x_range[1]);
                EnvState::at_rest(
                    PlanarPose::new(0.0, cfg.start_height, 0.0),
                    HoleFrame { x, theta },
                )
            }
        }
    }

    pub fn observe(&self) -> Observation {
        self.state.physical.embed(wrench(&self.cfg, &self.state))
    }

    pub fn distance_to_goal(&self) -> f64 {
        pose_distance(&self.cfg, &self.state.physical, &self.goal())
    }
}

impl Environment for InsertionEnv {
    fn reset(&mut self, rng: &mut Stream) -> Observation {
        let s = self.sample_initial_state(rng);
        self.reset_to(s)
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError> {
        if self.finished {
            return Err(EnvError::EpisodeOver);
        }
        if let Some(i) = action.as_array().iter().position(|v| !v.is_finite()) {
            return Err(EnvError::NonFiniteAction(i));
        }
        self.state = dynamics(&self.cfg, &self.state, action);
        let d = self.distance_to_goal();
        let success = d <= self.cfg.success_eps;
        self.finished = success;
        Ok(StepOutcome {
            obs: self.observe(),
            reward: reward(d, self.cfg.success_eps, self.cfg.bonus),
            done: success,
            success,
        })
    }

    fn action_bound(&self) -> f64 {
        self.cfg.action_bound
    }
}

fn uniform(rng: &mut Stream, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

pub(crate) fn goal_of(cfg: &EnvConfig, hole: &HoleFrame) -> PlanarPose {
    PlanarPose::new(hole.x, -cfg.hole_depth, hole.theta)
}

/// Translation norm plus `rot_weight` times the rotation error.
pub(crate) fn pose_distance(cfg: &EnvConfig, a: &PlanarPose, b: &PlanarPose) -> f64 {
    (a.x - b.x).hypot(a.z - b.z) + cfg.rot_weight * (a.theta - b.theta).abs()
}

/// One control period: integrate the twist into the commanded pose, project,
/// then bound the commanded pose's lead over the physical pose.
pub fn dynamics(cfg: &EnvConfig, state: &EnvState, action: &Action) -> EnvState {
    let a = action.as_array();
    let c = &state.commanded;
    let mut cmd = PlanarPose::new(
        (c.x + a[0] * cfg.dt).clamp(-cfg.workspace_half_width, cfg.workspace_half_width),
        (c.z + a[2] * cfg.dt).min(cfg.workspace_height),
        (c.theta + a[4] * cfg.dt).clamp(-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2),
    );
    let physical = project(cfg, &state.hole, &state.physical, &cmd);
    cmd.x = physical.x + (cmd.x - physical.x).clamp(-cfg.max_penetration, cfg.max_penetration);
    cmd.z = physical.z + (cmd.z - physical.z).clamp(-cfg.max_penetration, cfg.max_penetration);
    cmd.theta = physical.theta
        + (cmd.theta - physical.theta).clamp(-cfg.max_rot_penetration, cfg.max_rot_penetration);
    EnvState {
        physical,
        commanded: cmd,
        hole: state.hole,
    }
}

/// Projects the commanded pose out of solid material. Whether the peg is
/// inside the slot is decided by the previous physical pose: a peg above the
/// surface enters only if it fits through the mouth.
fn project(cfg: &EnvConfig, hole: &HoleFrame, prev: &PlanarPose, cmd: &PlanarPose) -> PlanarPose {
    if cmd.z >= 0.0 {
        return *cmd;
    }
    let rel_x = cmd.x - hole.x;
    let rel_theta = cmd.theta - hole.theta;
    let inside = prev.z < 0.0 || rel_x.abs() + cfg.peg_extent(rel_theta) <= cfg.slot_half_width(0.0);
    if !inside {
        return PlanarPose::new(cmd.x, 0.0, cmd.theta);
    }
    let z = cmd.z.max(-cfg.hole_depth);
    let slot = cfg.slot_half_width(z);
    let tilt_room = ((slot - cfg.peg_half_width()) / cfg.tilt_length).clamp(0.0, 1.0);
    let max_tilt = tilt_room.asin();
    let theta_rel = rel_theta.clamp(-max_tilt, max_tilt);
    let room = (slot - cfg.peg_extent(theta_rel)).max(0.0);
    let x_rel = rel_x.clamp(-room, room);
    PlanarPose::new(hole.x + x_rel, z, hole.theta + theta_rel)
}

/// Contact wrench `(fx, fy, fz, tx, ty, tz)` implied by the state.
pub fn wrench(cfg: &EnvConfig, state: &EnvState) -> [f64; 6] {
    let p = &state.physical;
    let c = &state.commanded;
    let fx = -cfg.stiffness * (c.x - p.x);
    let fz = -cfg.stiffness * (c.z - p.z);
    let rel_x = p.x - state.hole.x;
    let side = if rel_x > 0.0 {
        1.0
    } else if rel_x < 0.0 {
        -1.0
    } else {
        0.0
    };
    let extent = cfg.peg_extent(p.theta - state.hole.theta);
    let ty = -cfg.rot_stiffness * (c.theta - p.theta) - cfg.lever_length * fx - side * extent * fz;
    // Adding 0.0 folds negative zeros so a contact-free wrench is all +0.0.
    [fx + 0.0, 0.0, fz + 0.0, 0.0, ty + 0.0, 0.0]
}
