//! Asynchronous latent-planning agent for a simulated reaching arm.
//!
//! Modules from the bottom up: [`diff`] (reverse-mode autodiff and Adam),
//! [`env`] (the two-camera reaching task), [`model`] (latent dynamics),
//! [`planner`] (CEM in latent space), [`replay`] (episodic buffer), and
//! [`pipeline`] (roller, buffer and learner workers plus the synchronous
//! baseline).

pub mod diff;
pub mod env;
pub mod model;
pub mod pipeline;
pub mod planner;
pub mod replay;

pub use diff::{DiffError, Tensor};
pub use env::{Action, EnvConfig, Observation, ReachEnv};
pub use model::{LatentBelief, LatentModel, LossBreakdown, ModelConfig, ModelSnapshot};
pub use pipeline::{Mode, RunConfig, RunMetrics};
pub use replay::{ChunkBatch, EpisodeRecord, ReplayBuffer};
