//! Latent dynamics model.
//!
//! Two per-camera convolutional encoders feed one posterior head (late
//! fusion); a GRU carries the deterministic state, a prior head predicts the
//! stochastic state from it, and reward and per-camera decoder heads read the
//! concatenated `(h, s)` latent. Parameters live in one flat `f64` vector
//! described by a [`ParamLayout`].

mod graph;
mod infer;
mod layout;
mod loss;
mod snapshot;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diff::{DiffError, Tensor};

pub use graph::ModelGraph;
pub use layout::{ParamEntry, ParamLayout};
pub use loss::{loss_noise_len, LossBreakdown};
pub use snapshot::{
    read_checkpoint, read_checkpoint_file, write_checkpoint, write_checkpoint_file, ModelSnapshot,
    CHECKPOINT_HEADER_BYTES, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use layout::ParamIds;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input does not match the model: {0}")]
    Input(String),
    #[error("snapshot config hash {got:#018x} does not match model {expected:#018x}")]
    ConfigHash { expected: u64, got: u64 },
    #[error("snapshot holds {got} parameters, model needs {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("checkpoint: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for ModelError {
    fn from(e: std::io::Error) -> Self {
        ModelError::Io(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Side of each square camera view; must be divisible by 4.
    pub image_size: usize,
    pub action_dim: usize,
    /// Per-camera embedding width.
    pub embed_dim: usize,
    pub deterministic_dim: usize,
    pub stochastic_dim: usize,
    /// Width of the hidden layer of every two-layer head.
    pub hidden_dim: usize,
    /// Channels of the first conv layer; the second has twice as many.
    pub conv_depth: usize,
    pub min_stddev: f64,
    pub free_nats: f64,
    pub kl_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            action_dim: 3,
            embed_dim: 64,
            deterministic_dim: 64,
            stochastic_dim: 16,
            hidden_dim: 64,
            conv_depth: 8,
            min_stddev: 0.1,
            free_nats: 3.0,
            kl_scale: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            self.image_size,
            self.action_dim,
            self.embed_dim,
            self.deterministic_dim,
            self.stochastic_dim,
            self.hidden_dim,
            self.conv_depth,
        ];
        if dims.iter().any(|d| *d == 0) {
            return Err(ModelError::Config(
                "all dimensions must be at least 1".into(),
            ));
        }
        if self.image_size % 4 != 0 {
            return Err(ModelError::Config(format!(
                "image size {} not divisible by 4",
                self.image_size
            )));
        }
        if !(self.min_stddev > 0.0 && self.min_stddev.is_finite()) {
            return Err(ModelError::Config("min_stddev must be positive".into()));
        }
        if !(self.free_nats >= 0.0 && self.kl_scale >= 0.0) {
            return Err(ModelError::Config(
                "free_nats and kl_scale must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Values per camera view: `3 · N · N`.
    pub fn view_len(&self) -> usize {
        crate::env::CHANNELS * self.image_size * self.image_size
    }

    /// First 8 bytes of the SHA-256 of the JSON-serialised config, little-endian.
    pub fn config_hash(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("config serialises");
        let digest = Sha256::digest(&json);
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

/// Filtered latent state carried by the planner between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBelief {
    pub h: Tensor,
    pub s_mean: Tensor,
    pub s_std: Tensor,
    pub s_sample: Tensor,
}

impl LatentBelief {
    /// Chunk-start state: `h = 0`, `s = 0`, unit spread.
    pub fn initial(config: &ModelConfig) -> Self {
        let s = config.stochastic_dim;
        Self {
            h: Tensor::zeros([config.deterministic_dim]),
            s_mean: Tensor::zeros([s]),
            s_std: Tensor::new([s], vec![1.0; s]).expect("finite"),
            s_sample: Tensor::zeros([s]),
        }
    }
}

/// Parameters plus the config they were built for.
#[derive(Clone, Debug)]
pub struct LatentModel {
    config: ModelConfig,
    layout: Arc<ParamLayout>,
    params: Vec<f64>,
}

impl LatentModel {
    /// Weights `U(±√(1/fan_in))`, biases zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for entry in model.layout.entries() {
            if entry.is_bias {
                continue;
            }
            let bound = (1.0 / entry.fan_in as f64).sqrt();
            for p in &mut model.params[entry.range()] {
                *p = rng.random_range(-bound..=bound);
            }
        }
        Ok(model)
    }

    /// Every parameter zero.
    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Arc::new(ParamLayout::build(&config));
        let params = vec![0.0; layout.total()];
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), ModelError> {
        if params.len() != self.params.len() {
            return Err(ModelError::ParamCount {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn graph(&self) -> ModelGraph<'_> {
        ModelGraph::new(self)
    }

    pub(crate) fn ids(&self) -> &ParamIds {
        self.layout.ids()
    }

    pub fn snapshot(&self, version: u64) -> ModelSnapshot {
        ModelSnapshot::new(version, self.config.config_hash(), self.params.clone())
    }

    /// Materialises a model from `snapshot`; the config hash and length must match.
    pub fn load_snapshot(
        config: ModelConfig,
        snapshot: &ModelSnapshot,
    ) -> Result<Self, ModelError> {
        let mut model = Self::zeros(config)?;
        model.apply_snapshot(snapshot)?;
        Ok(model)
    }

    /// Overwrites the parameters in place from `snapshot`.
    pub fn apply_snapshot(&mut self, snapshot: &ModelSnapshot) -> Result<(), ModelError> {
        let expected = self.config.config_hash();
        if snapshot.config_hash() != expected {
            return Err(ModelError::ConfigHash {
                expected,
                got: snapshot.config_hash(),
            });
        }
        self.set_params(snapshot.params())
    }

    /// One filtering step: transition from `prev` under `action`, then the
    /// posterior given `obs`. `noise` holds `stochastic_dim` standard normals.
    pub fn filter_step(
        &self,
        prev: &LatentBelief,
        action: &[f64],
        obs: &crate::env::Observation,
        noise: &[f64],
    ) -> Result<LatentBelief, ModelError> {
        let mut g = self.graph();
        let row = |t: &Tensor| Tensor::new([1, t.len()], t.data().to_vec());
        let h = g.constant(row(&prev.h)?);
        let s = g.constant(row(&prev.s_sample)?);
        let a = g.constant(Tensor::new([1, action.len()], action.to_vec())?);
        let h = g.transition(h, s, a)?;
        let emb = g.encode(&[obs])?;
        let (mean, std) = g.posterior(h, emb)?;
        let sample = g.tape_mut().gaussian_sample(mean, std, noise)?;
        let flat = |g: &ModelGraph, v| Tensor::vector(g.value(v).data().to_vec());
        Ok(LatentBelief {
            h: flat(&g, h)?,
            s_mean: flat(&g, mean)?,
            s_std: flat(&g, std)?,
            s_sample: flat(&g, sample)?,
        })
    }

    /// Sum of predicted rewards along each action sequence, rolling the prior
    /// forward with its means. `sequences` is `candidates × horizon × action_dim`.
    pub fn evaluate_sequences(
        &self,
        belief: &LatentBelief,
        sequences: &[f64],
        candidates: usize,
        horizon: usize,
    ) -> Result<Vec<f64>, ModelError> {
        let a_dim = self.config.action_dim;
        if sequences.len() != candidates * horizon * a_dim || candidates == 0 {
            return Err(ModelError::Input(format!(
                "{} action values for {candidates}×{horizon}×{a_dim}",
                sequences.len()
            )));
        }
        let repeat = |t: &Tensor| -> Vec<f64> {
            (0..candidates)
                .flat_map(|_| t.data().iter().copied())
                .collect()
        };
        let mut returns = vec![0.0; candidates];
        let fill = |k: usize, buf: &mut Vec<f64>| {
            buf.clear();
            for c in 0..candidates {
                let src = (c * horizon + k) * a_dim;
                buf.extend_from_slice(&sequences[src..src + a_dim]);
            }
        };
        infer::prior_rollout(
            self,
            &repeat(&belief.h),
            &repeat(&belief.s_sample),
            horizon,
            fill,
            &mut returns,
        );
        if returns.iter().any(|r| !r.is_finite()) {
            return Err(ModelError::Diff(DiffError::NonFinite {
                op: "evaluate_sequences",
            }));
        }
        Ok(returns)
    }
}
