//! Reinforcement-learning environment around the simulated robot.
//!
//! Every action is a field increment `(dBx, dBy)` applied once per control
//! period (10 ms at 100 Hz); the rod is then advanced through the period in
//! fixed physics substeps. The reward is the forward progress of the middle
//! node. Episodes are truncated, never terminated, at the time cap.
//!
//! Observation layout for `N` elements and `S` sampled nodes:
//!
//! | slice                | content                                   |
//! |----------------------|-------------------------------------------|
//! | `[0, 2N)`            | `(sin, cos)` of each element's angle      |
//! | `[2N, 3N)`           | element angular velocity × `omega_scale`  |
//! | `[3N, 3N+S)`         | node height above ground × `height_scale` |
//! | `[3N+S, 3N+2S)`      | node contact indicator                    |
//! | `[3N+2S, 3N+2S+3)`   | `sin φ_B`, `cos φ_B`, `|B| / B_max`       |

use std::ops::Deref;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::contact::{add_ground_response, contact_indicators, GroundPlane, STANDARD_GRAVITY};
use crate::dissipation::{add_damping_forces, DampingConfig};
use crate::error::{Error, Result};
use crate::magnetics::{
    add_magnetic_torques, field_polar, FieldState, MagnetizationProfile, ProfileSpec, ROBOT_MAGNETIZATION,
};
use crate::rod::{build_rod, MaterialParams, RigidityTable, RodState, Vec3};
use crate::SimRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetField {
    /// Uniform over the amplitude disc.
    Random,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Field amplitude cap, mT.
    pub max_field_mt: f64,
    /// Per-axis bound on a field increment, mT.
    pub action_limit_mt: f64,
    pub action_rate_hz: f64,
    /// Truncation time, s.
    pub episode_seconds: f64,
    /// Physics substep, s. Must divide the control period. Set per
    /// training phase, not read from configuration files.
    #[serde(skip)]
    pub substep: f64,
    /// Density multiplier; gravity is divided by the same factor. Set per
    /// training phase, not read from configuration files.
    #[serde(skip)]
    pub density_scale: f64,
    /// Reward per metre of middle-node progress.
    pub reward_scale: f64,
    /// Initial field for training episodes.
    pub reset_field: ResetField,
    pub element_count: usize,
    /// Nodes whose height and contact are observed; every other node if unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampled_nodes: Option<Vec<usize>>,
    /// Settling time on the ground before the first action, s.
    pub settle_seconds: f64,
    pub omega_scale: f64,
    pub height_scale: f64,
    /// Gravitational acceleration before density scaling, m/s².
    pub gravity: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            max_field_mt: 4.0,
            action_limit_mt: 0.3,
            action_rate_hz: 100.0,
            episode_seconds: 20.0,
            substep: 1e-4,
            density_scale: 1.0,
            reward_scale: 1000.0,
            reset_field: ResetField::Random,
            element_count: 20,
            sampled_nodes: None,
            settle_seconds: 0.3,
            omega_scale: 0.05,
            height_scale: 1000.0,
            gravity: STANDARD_GRAVITY,
        }
    }
}

impl EnvConfig {
    pub fn control_period(&self) -> f64 {
        1.0 / self.action_rate_hz
    }

    pub fn substeps_per_action(&self) -> usize {
        (self.control_period() / self.substep).round() as usize
    }

    pub fn episode_steps(&self) -> u64 {
        (self.episode_seconds * self.action_rate_hz).round() as u64
    }

    pub fn sampled_nodes(&self) -> Vec<usize> {
        match &self.sampled_nodes {
            Some(nodes) => nodes.clone(),
            None => (0..=self.element_count).step_by(2).collect(),
        }
    }

    pub fn observation_dim(&self) -> usize {
        3 * self.element_count + 2 * self.sampled_nodes().len() + 3
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("max_field_mt", self.max_field_mt),
            ("action_limit_mt", self.action_limit_mt),
            ("action_rate_hz", self.action_rate_hz),
            ("episode_seconds", self.episode_seconds),
            ("substep", self.substep),
            ("reward_scale", self.reward_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.density_scale >= 1.0) {
            return Err(Error::Config(format!("density scale must be >= 1, got {}", self.density_scale)));
        }
        let ratio = self.control_period() / self.substep;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio || ratio.round() < 1.0 {
            return Err(Error::Config(format!(
                "substep {} does not divide the control period {}",
                self.substep,
                self.control_period()
            )));
        }
        if self.element_count < 2 {
            return Err(Error::Config("element_count must be at least 2".into()));
        }
        let nodes = self.sampled_nodes();
        if nodes.is_empty() || nodes.iter().any(|&i| i > self.element_count) {
            return Err(Error::Config("sampled nodes must be non-empty and within the rod".into()));
        }
        if !(self.settle_seconds >= 0.0) {
            return Err(Error::Config("settle time must be non-negative".into()));
        }
        Ok(())
    }
}

/// Physical description of the robot and its surroundings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotConfig {
    pub material: MaterialParams,
    pub damping: DampingConfig,
    pub ground: GroundPlane,
    pub magnetization: ProfileSpec,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            material: MaterialParams::band_robot(),
            damping: DampingConfig::default(),
            ground: GroundPlane::default(),
            magnetization: ProfileSpec::Pattern1 { magnitude: ROBOT_MAGNETIZATION },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResetMode {
    /// Training episodes: initial field per `EnvConfig::reset_field`.
    Train,
    /// Waveform generation and evaluation: field starts from zero.
    Rollout,
}

/// Field increment in millitesla.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionIncrement {
    pub dbx: f64,
    pub dby: f64,
}

impl ActionIncrement {
    pub fn clipped(self, limit: f64) -> Self {
        Self { dbx: self.dbx.clamp(-limit, limit), dby: self.dby.clamp(-limit, limit) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Deref for Observation {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub truncated: bool,
}

/// Adds an increment (mT) to the field and projects the result radially
/// back onto the amplitude disc.
///
/// Near the cap a radial projection can move one axis by more than the
/// increment bound `limit_mt`; in that case the increment is shortened along
/// its own direction to end on the cap instead.
pub fn clamp_field(field: &FieldState, increment: ActionIncrement, limit_mt: f64) -> FieldState {
    let prev = field.b;
    let delta = Vec3::new(increment.dbx, increment.dby, 0.0) * 1e-3;
    let cap = field.max_amplitude;
    let mut next = *field;
    next.b = prev + delta;
    if next.b.norm() > cap {
        next.clamp();
        let step = next.b - prev;
        if step.x.abs().max(step.y.abs()) > limit_mt * 1e-3 && prev.norm() <= cap {
            // largest s in [0, 1] with |prev + s delta| = cap
            let a = delta.norm_squared();
            let b = prev.dot(&delta);
            let c = prev.norm_squared() - cap * cap;
            let s = ((-b + (b * b - a * c).max(0.0).sqrt()) / a).clamp(0.0, 1.0);
            next.b = prev + delta * s;
        }
    }
    // rescaling can land one ulp outside the disc
    while next.b.norm() > cap {
        next.b *= 1.0 - f64::EPSILON;
    }
    next
}

/// Uniform sample from the disc of radius `radius`.
pub fn sample_disc(radius: f64, rng: &mut SimRng) -> (f64, f64) {
    let r = radius * rng.random::<f64>().sqrt();
    let theta = std::f64::consts::TAU * rng.random::<f64>();
    (r * theta.cos(), r * theta.sin())
}

/// Anything the trainer can learn in: continuous actions bounded per axis
/// by `action_limit`, continuing task with time-limit truncation.
pub trait Environment {
    fn observation_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn action_limit(&self) -> f64;
    fn episode_steps(&self) -> u64;
    fn reset(&mut self, mode: ResetMode, rng: &mut SimRng) -> Result<Observation>;
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;
    /// Position of the tracked point whose progress is rewarded, m.
    fn progress_coordinate(&self) -> f64;
}

#[derive(Clone, Debug)]
pub struct MsrEnv {
    cfg: EnvConfig,
    robot: RobotConfig,
    rigidity: RigidityTable,
    profile: MagnetizationProfile,
    settled: RodState,
    rod: RodState,
    field: FieldState,
    gravity: f64,
    sampled: Vec<usize>,
    steps: u64,
}

impl MsrEnv {
    /// Builds the robot and lets it settle onto the ground once; every reset
    /// restarts from that settled state.
    pub fn new(cfg: EnvConfig, robot: RobotConfig) -> Result<Self> {
        cfg.validate()?;
        robot.ground.validate()?;
        let mut material = robot.material;
        material.density *= cfg.density_scale;
        let (mut rod, rigidity) = build_rod(&material, cfg.element_count)?;
        robot.damping.validate(rod.node_count())?;
        rod.translate(Vec3::new(0.0, robot.ground.height + 0.5 * material.height, 0.0));
        let profile = robot.magnetization.build(&rod)?;
        let field = FieldState::zero(cfg.max_field_mt * 1e-3);
        let gravity = cfg.gravity / cfg.density_scale;
        let sampled = cfg.sampled_nodes();

        let mut env =
            Self { cfg, robot, rigidity, profile, settled: rod.clone(), rod, field, gravity, sampled, steps: 0 };
        let settle_steps = (env.cfg.settle_seconds / env.cfg.substep).round() as usize;
        for _ in 0..settle_steps {
            env.substep()?;
        }
        env.rod.step_count = 0;
        env.settled = env.rod.clone();
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn robot(&self) -> &RobotConfig {
        &self.robot
    }

    pub fn rod(&self) -> &RodState {
        &self.rod
    }

    pub fn rigidity(&self) -> &RigidityTable {
        &self.rigidity
    }

    pub fn field(&self) -> &FieldState {
        &self.field
    }

    /// Effective (possibly scaled) gravity, m/s².
    pub fn gravity(&self) -> f64 {
        self.gravity
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn elapsed(&self) -> f64 {
        self.steps as f64 * self.cfg.control_period()
    }

    pub fn middle_node(&self) -> usize {
        self.cfg.element_count / 2
    }

    pub fn contact_indicators(&self) -> Vec<f64> {
        contact_indicators(&self.rod, &self.robot.ground)
    }

    pub fn reset(&mut self, mode: ResetMode, rng: &mut SimRng) -> Result<Observation> {
        self.rod = self.settled.clone();
        self.steps = 0;
        self.field = FieldState::zero(self.cfg.max_field_mt * 1e-3);
        if mode == ResetMode::Train && self.cfg.reset_field == ResetField::Random {
            let (bx, by) = sample_disc(self.field.max_amplitude, rng);
            self.field.b = Vec3::new(bx, by, 0.0);
            self.field.clamp();
        }
        Ok(self.observe())
    }

    /// Applies one increment and advances one control period.
    pub fn step_increment(&mut self, action: ActionIncrement) -> Result<StepOutcome> {
        let action = action.clipped(self.cfg.action_limit_mt);
        self.field = clamp_field(&self.field, action, self.cfg.action_limit_mt);
        let mid = self.middle_node();
        let before = self.rod.positions[mid].x;
        for _ in 0..self.cfg.substeps_per_action() {
            self.substep()?;
        }
        let after = self.rod.positions[mid].x;
        self.steps += 1;
        Ok(StepOutcome {
            observation: self.observe(),
            reward: self.cfg.reward_scale * (after - before),
            truncated: self.steps >= self.cfg.episode_steps(),
        })
    }

    fn substep(&mut self) -> Result<()> {
        let Self { rod, rigidity, robot, profile, field, gravity, cfg, .. } = self;
        let dt = cfg.substep;
        rod.step_with(rigidity, dt, |r, internal, loads| {
            add_damping_forces(r, &robot.damping, &mut loads.forces);
            add_magnetic_torques(r, profile, field, &mut loads.torques)?;
            add_ground_response(r, &robot.ground, *gravity, &internal.node_forces, &mut loads.forces, dt);
            Ok(())
        })
    }

    pub fn observe(&self) -> Observation {
        build_observation(&self.rod, &self.field, &self.robot.ground, &self.cfg, &self.sampled)
    }
}

/// Assembles the observation vector described in the module docs.
pub fn build_observation(
    rod: &RodState,
    field: &FieldState,
    ground: &GroundPlane,
    cfg: &EnvConfig,
    sampled: &[usize],
) -> Observation {
    let n = rod.element_count();
    let mut obs = Vec::with_capacity(3 * n + 2 * sampled.len() + 3);
    for angle in rod.element_angles() {
        obs.push(angle.sin());
        obs.push(angle.cos());
    }
    for w in rod.angular_velocities_lab() {
        obs.push(w.z * cfg.omega_scale);
    }
    for &i in sampled {
        obs.push((rod.positions[i].y - ground.height) * cfg.height_scale);
    }
    let indicators = contact_indicators(rod, ground);
    for &i in sampled {
        obs.push(indicators[i]);
    }
    let (angle, amplitude) = field_polar(field);
    obs.push(angle.sin());
    obs.push(angle.cos());
    obs.push(amplitude / field.max_amplitude);
    Observation(obs)
}

impl Environment for MsrEnv {
    fn observation_dim(&self) -> usize {
        self.cfg.observation_dim()
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn action_limit(&self) -> f64 {
        self.cfg.action_limit_mt
    }

    fn episode_steps(&self) -> u64 {
        self.cfg.episode_steps()
    }

    fn reset(&mut self, mode: ResetMode, rng: &mut SimRng) -> Result<Observation> {
        MsrEnv::reset(self, mode, rng)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        self.step_increment(ActionIncrement { dbx: action[0], dby: action[1] })
    }

    fn progress_coordinate(&self) -> f64 {
        self.rod.positions[self.middle_node()].x
    }
}
