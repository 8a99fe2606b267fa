//! Roller, buffer and learner workers, the channels between them, and the
//! single-threaded alternating baseline.

mod channel;
mod clock;
mod metrics;
mod run;
mod workers;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::AdamConfig;
use crate::env::{EnvConfig, EnvError};
use crate::model::{ModelConfig, ModelError};
use crate::planner::{PlanError, PlannerConfig};
use crate::replay::ReplayError;

pub use channel::{latest_channel, stop_signal, Drained, LatestReceiver, LatestSender, StopHandle, StopSignal};
pub use clock::{Clock, ClockMode, VirtualClock, WallClock};
pub use metrics::{read_metrics_csv, write_metrics_csv, MetricsRow, RunMetrics, CSV_HEADER};
pub use run::{run, run_async, run_sync};
pub use workers::{
    buffer_loop, learner_loop, roller_loop, BufferReport, BufferSettings, Learner, LearnerReport,
    Roller, RollerReport,
};

pub const PARAMS_CHANNEL_CAPACITY: usize = 4;
pub const EPISODES_CHANNEL_CAPACITY: usize = 64;
pub const BATCHES_CHANNEL_CAPACITY: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("non-finite loss at update {update}: {detail}")]
    NonFiniteLoss { update: u64, detail: String },
    #[error("{worker} worker failed: {detail}")]
    Worker { worker: &'static str, detail: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sync,
    Async,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub budget_s: f64,
    /// Learner updates between episodes; sync only.
    #[serde(default)]
    pub collect_interval: Option<usize>,
    #[serde(default = "defaults::seed_episodes")]
    pub seed_episodes: usize,
    /// Emulated compute time added after every learner update.
    #[serde(default)]
    pub update_latency_ms: f64,
    /// Async learner pushes a snapshot every this many updates.
    #[serde(default = "defaults::snapshot_every")]
    pub snapshot_every: u64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::chunk_len")]
    pub chunk_len: usize,
    #[serde(default = "defaults::replay_capacity")]
    pub replay_capacity: usize,
    #[serde(default = "defaults::explore_std")]
    pub explore_std: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub clock: ClockMode,
    /// Test seam: the async learner never takes a batch.
    #[serde(default)]
    pub learner_frozen: bool,
}

mod defaults {
    pub fn seed_episodes() -> usize {
        5
    }
    pub fn snapshot_every() -> u64 {
        10
    }
    pub fn batch_size() -> usize {
        16
    }
    pub fn chunk_len() -> usize {
        25
    }
    pub fn replay_capacity() -> usize {
        1000
    }
    pub fn explore_std() -> f64 {
        0.3
    }
}

impl RunConfig {
    pub fn new(mode: Mode, budget_s: f64) -> Self {
        Self {
            mode,
            budget_s,
            collect_interval: (mode == Mode::Sync).then_some(10),
            seed_episodes: defaults::seed_episodes(),
            update_latency_ms: 0.0,
            snapshot_every: defaults::snapshot_every(),
            batch_size: defaults::batch_size(),
            chunk_len: defaults::chunk_len(),
            replay_capacity: defaults::replay_capacity(),
            explore_std: defaults::explore_std(),
            seed: 0,
            env: EnvConfig::default(),
            model: ModelConfig::default(),
            planner: PlannerConfig::default(),
            adam: AdamConfig::default(),
            clock: ClockMode::Wall,
            learner_frozen: false,
        }
    }

    /// Sets the image size on both the environment and the model.
    pub fn with_image_size(mut self, size: usize) -> Self {
        self.env.render.image_size = size;
        self.model.image_size = size;
        self
    }

    pub fn update_latency_s(&self) -> f64 {
        self.update_latency_ms / 1000.0
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(self.budget_s > 0.0 && self.budget_s.is_finite()) {
            return bad(format!("budget_s must be positive, got {}", self.budget_s));
        }
        match (self.mode, self.collect_interval) {
            (Mode::Sync, Some(c)) if c >= 1 => {}
            (Mode::Sync, _) => return bad("sync mode needs collect_interval ≥ 1".into()),
            (Mode::Async, Some(_)) => {
                return bad("collect_interval applies to sync mode only".into())
            }
            (Mode::Async, None) => {}
        }
        if self.mode == Mode::Async && self.clock != ClockMode::Wall {
            return bad("async runs need the wall clock".into());
        }
        if !(self.update_latency_ms >= 0.0 && self.update_latency_ms.is_finite()) {
            return bad("update_latency_ms must be non-negative".into());
        }
        if self.snapshot_every == 0 || self.batch_size == 0 || self.replay_capacity == 0 {
            return bad("snapshot_every, batch_size and replay_capacity must be positive".into());
        }
        if self.chunk_len < 2 || self.chunk_len > self.env.max_steps {
            return bad(format!(
                "chunk_len {} outside 2..={}",
                self.chunk_len, self.env.max_steps
            ));
        }
        if !(self.explore_std >= 0.0) {
            return bad("explore_std must be non-negative".into());
        }
        self.env.validate()?;
        self.model.validate()?;
        self.planner.validate()?;
        let joints = self.env.joint_count();
        if self.model.image_size != self.env.render.image_size {
            return bad(format!(
                "model image size {} but env renders {}",
                self.model.image_size, self.env.render.image_size
            ));
        }
        if self.model.action_dim != joints || self.planner.action_dim != joints {
            return bad(format!(
                "arm has {joints} joints; model expects {}, planner {}",
                self.model.action_dim, self.planner.action_dim
            ));
        }
        Ok(())
    }
}
