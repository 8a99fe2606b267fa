//! Torque-controlled reaching arm seen by two orthogonal cameras.
//!
//! The arm has one base-yaw joint and a chain of pitch joints. A cube is
//! placed on the ground in front of the robot; the reward is the inverse of
//! the effector–cube distance, either measured in the world or as the sum of
//! per-camera pixel distances. Episodes last at most `max_steps` steps and end
//! early when the effector touches the cube.

mod kinematics;
mod render;

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kinematics::{distance, forward_kinematics, link_chain, wrap_angle, Point3};
pub use render::{
    render_scene, view_distance, Camera, Observation, RenderConfig, CHANNELS, CUBE_CHANNEL,
    EFFECTOR_CHANNEL, LINK_CHANNEL,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("step called on a finished episode")]
    EpisodeFinished,
    #[error("step called before reset")]
    NotReset,
    #[error("action has {got} components, arm has {expected} joints")]
    ActionDim { expected: usize, got: usize },
    #[error("action contains a non-finite torque")]
    NonFiniteAction,
    #[error("invalid environment config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    /// Inverse world-space distance.
    #[default]
    State,
    /// Inverse sum of width-normalised pixel distances in both views.
    Pixel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Planar link lengths in arm-lengths; they should sum to 1.
    pub link_lengths: Vec<f64>,
    /// Rest angles, yaw first. One more entry than `link_lengths`.
    pub rest_pose: Vec<f64>,
    pub reset_noise_deg: f64,
    pub dt: f64,
    pub torque_gain: f64,
    pub damping: f64,
    pub max_velocity: f64,
    pub max_steps: usize,
    pub touch_threshold: f64,
    pub reward_floor: f64,
    pub pixel_reward_floor: f64,
    pub cube_azimuth_deg: f64,
    pub cube_radius_min: f64,
    pub cube_radius_max: f64,
    pub reward_mode: RewardMode,
    pub render: RenderConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            link_lengths: vec![0.5, 0.5],
            rest_pose: vec![0.0, 1.2, -1.8],
            reset_noise_deg: 18.0,
            dt: 0.05,
            torque_gain: 8.0,
            damping: 2.0,
            max_velocity: 4.0,
            max_steps: 100,
            touch_threshold: 0.08,
            reward_floor: 0.05,
            pixel_reward_floor: 0.05,
            cube_azimuth_deg: 60.0,
            cube_radius_min: 0.4,
            cube_radius_max: 0.9,
            reward_mode: RewardMode::State,
            render: RenderConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn joint_count(&self) -> usize {
        self.link_lengths.len() + 1
    }

    pub fn arm_length(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Config(m.to_string()));
        if self.link_lengths.is_empty() || self.link_lengths.iter().any(|l| *l <= 0.0) {
            return bad("link lengths must be positive");
        }
        if self.rest_pose.len() != self.joint_count() {
            return bad("rest_pose needs one angle per joint");
        }
        if self.dt <= 0.0 || self.max_velocity <= 0.0 || self.damping < 0.0 {
            return bad("dt and max_velocity must be positive, damping non-negative");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        if self.reward_floor <= 0.0 || self.pixel_reward_floor <= 0.0 {
            return bad("reward floors must be positive");
        }
        if !(0.0 < self.cube_radius_min && self.cube_radius_min <= self.cube_radius_max)
            || self.cube_radius_max > self.arm_length()
        {
            return bad("cube radius range must lie within the arm's reach");
        }
        if self.render.image_size == 0 || self.render.view_extent <= 0.0 {
            return bad("render window must be non-empty");
        }
        Ok(())
    }
}

/// Joint torques, each clipped into `[−1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Action(Vec<f64>);

impl Action {
    pub fn new(torques: Vec<f64>) -> Self {
        Self(torques.into_iter().map(|t| t.clamp(-1.0, 1.0)).collect())
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmState {
    pub joint_angles: Vec<f64>,
    pub joint_velocities: Vec<f64>,
    pub cube_position: Point3,
    pub step_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub touched: bool,
    /// True effector–cube distance, for diagnostics only.
    pub distance: f64,
}

/// Inverse world-space effector–cube distance with floor `reward_floor`.
pub fn state_reward(config: &EnvConfig, state: &ArmState) -> f64 {
    let d = effector_distance(config, state);
    1.0 / (d + config.reward_floor)
}

/// Inverse of the summed width-normalised pixel distances in both views.
pub fn pixel_reward(config: &EnvConfig, state: &ArmState) -> f64 {
    let tip = forward_kinematics(&config.link_lengths, &state.joint_angles);
    let p = view_distance(&config.render, &Camera::FRONT, tip, state.cube_position)
        + view_distance(&config.render, &Camera::SIDE, tip, state.cube_position);
    1.0 / (p + config.pixel_reward_floor)
}

pub fn effector_distance(config: &EnvConfig, state: &ArmState) -> f64 {
    distance(
        forward_kinematics(&config.link_lengths, &state.joint_angles),
        state.cube_position,
    )
}

pub fn render_views(config: &EnvConfig, state: &ArmState) -> Observation {
    let chain = link_chain(&config.link_lengths, &state.joint_angles);
    render_scene(&config.render, &chain, state.cube_position)
}

/// Uniform draw in `[−half, half]` from one `f64` sample in `[0, 1)`.
fn symmetric(rng: &mut impl Rng, half: f64) -> f64 {
    (2.0 * rng.random::<f64>() - 1.0) * half
}

#[derive(Clone, Debug)]
pub struct ReachEnv {
    config: EnvConfig,
    state: Option<ArmState>,
    done: bool,
}

impl ReachEnv {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self {
            config,
            state: None,
            done: false,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> Option<&ArmState> {
        self.state.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Rest pose plus uniform joint noise, zero velocity, and a fresh cube in
    /// the frontal placement sector.
    pub fn reset(&mut self, rng: &mut impl Rng) -> Observation {
        let noise = self.config.reset_noise_deg.to_radians();
        let joint_angles = self
            .config
            .rest_pose
            .iter()
            .map(|rest| wrap_angle(rest + symmetric(rng, noise)))
            .collect();
        let azimuth = symmetric(rng, self.config.cube_azimuth_deg.to_radians());
        let radius = self.config.cube_radius_min
            + rng.random::<f64>() * (self.config.cube_radius_max - self.config.cube_radius_min);
        let state = ArmState {
            joint_angles,
            joint_velocities: vec![0.0; self.config.joint_count()],
            cube_position: [radius * azimuth.cos(), radius * azimuth.sin(), 0.0],
            step_index: 0,
        };
        self.set_state(state)
    }

    /// Installs an explicit state, e.g. for scripted tests.
    pub fn set_state(&mut self, state: ArmState) -> Observation {
        let obs = render_views(&self.config, &state);
        self.state = Some(state);
        self.done = false;
        obs
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        let cfg = &self.config;
        let state = self.state.as_mut().ok_or(EnvError::NotReset)?;
        if action.dim() != cfg.joint_count() {
            return Err(EnvError::ActionDim {
                expected: cfg.joint_count(),
                got: action.dim(),
            });
        }
        if action.as_slice().iter().any(|t| !t.is_finite()) {
            return Err(EnvError::NonFiniteAction);
        }
        for ((angle, vel), torque) in state
            .joint_angles
            .iter_mut()
            .zip(state.joint_velocities.iter_mut())
            .zip(action.as_slice())
        {
            let torque = torque.clamp(-1.0, 1.0);
            *vel += cfg.dt * (cfg.torque_gain * torque - cfg.damping * *vel);
            *vel = vel.clamp(-cfg.max_velocity, cfg.max_velocity);
            *angle = wrap_angle(*angle + cfg.dt * *vel);
        }
        state.step_index += 1;
        let distance = effector_distance(cfg, state);
        let touched = distance < cfg.touch_threshold;
        let reward = match cfg.reward_mode {
            RewardMode::State => state_reward(cfg, state),
            RewardMode::Pixel => pixel_reward(cfg, state),
        };
        self.done = touched || state.step_index >= cfg.max_steps;
        Ok(StepResult {
            observation: render_views(cfg, state),
            reward,
            done: self.done,
            touched,
            distance,
        })
    }
}

/// Reset joint offsets are drawn from `±reset_noise_deg`; this is the bound in radians.
pub fn reset_noise_bound(config: &EnvConfig) -> f64 {
    config.reset_noise_deg * PI / 180.0
}
