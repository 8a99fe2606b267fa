use super::graph::split_views;
use super::{ModelConfig, ModelError, ModelGraph};
use crate::diff::{Tensor, Var};
use crate::env::Observation;
use crate::replay::ChunkBatch;

/// Scalar parts of one training loss evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon_front: f64,
    pub recon_side: f64,
    pub reward_mse: f64,
    /// Mean KL per step before the free-nats hinge.
    pub kl: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.total,
            self.recon_front,
            self.recon_side,
            self.reward_mse,
            self.kl,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Standard normals consumed by [`ModelGraph::loss`]: one posterior draw per
/// chunk step, laid out step-major as `[L][B][S]`.
pub fn loss_noise_len(config: &ModelConfig, batch_size: usize, chunk_len: usize) -> usize {
    batch_size * chunk_len * config.stochastic_dim
}

impl ModelGraph<'_> {
    /// Records the training loss for `batch` and returns it with its parts.
    ///
    /// Every chunk starts from `h = 0`, `s = 0`. Step `t` transitions with the
    /// chunk's action `t`, filters the observation that action produced, and
    /// scores the reconstruction, the reward received, and
    /// `KL(posterior ‖ prior)`. Reconstruction is `½·SSE` per view; all terms
    /// are averaged over batch and time, and the KL is hinged at `free_nats`.
    pub fn loss(
        &mut self,
        batch: &ChunkBatch,
        noise: &[f64],
    ) -> Result<(Var, LossBreakdown), ModelError> {
        let cfg = self.model().config().clone();
        let b = batch.batch_size();
        let l = batch.chunk_len().ok_or_else(|| {
            ModelError::Input("batch is empty or has chunks of different lengths".into())
        })?;
        if l < 2 {
            return Err(ModelError::Input(format!(
                "chunk length {l} is shorter than 2 steps"
            )));
        }
        let (hd, sd, ad, e2) = (
            cfg.deterministic_dim,
            cfg.stochastic_dim,
            cfg.action_dim,
            2 * cfg.embed_dim,
        );
        if noise.len() != loss_noise_len(&cfg, b, l) {
            return Err(ModelError::Input(format!(
                "{} noise values, loss needs {}",
                noise.len(),
                loss_noise_len(&cfg, b, l)
            )));
        }
        if let Some(a) = batch
            .chunks
            .iter()
            .flat_map(|c| &c.actions)
            .find(|a| a.dim() != ad)
        {
            return Err(ModelError::Input(format!(
                "action of dim {}, model expects {ad}",
                a.dim()
            )));
        }
        let rows = b * l;

        // Rows are ordered (chunk, step) everywhere below.
        let obs: Vec<&Observation> = batch
            .chunks
            .iter()
            .flat_map(|c| c.observations.iter())
            .collect();
        let (front_in, side_in) = self.observation_input(&obs)?;
        let emb = self.encode_views(front_in, side_in)?;
        let emb = self.tape_mut().reshape(emb, [b, l * e2])?;

        let mut h = self.constant(Tensor::zeros([b, hd]));
        let mut s = self.constant(Tensor::zeros([b, sd]));
        let (mut hs, mut ss, mut qm, mut qs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for t in 0..l {
            let actions: Vec<f64> = batch
                .chunks
                .iter()
                .flat_map(|c| c.actions[t].as_slice().iter().copied())
                .collect();
            let a = self.constant(Tensor::new([b, ad], actions)?);
            h = self.transition(h, s, a)?;
            let emb_t = self.tape_mut().slice_cols(emb, t * e2, e2)?;
            let (mean, std) = self.posterior(h, emb_t)?;
            s = self
                .tape_mut()
                .gaussian_sample(mean, std, &noise[t * b * sd..(t + 1) * b * sd])?;
            hs.push(h);
            ss.push(s);
            qm.push(mean);
            qs.push(std);
        }
        let tape = self.tape_mut();
        let mut stack = |parts: &[Var], width: usize| -> Result<Var, ModelError> {
            let joined = tape.concat(parts)?;
            Ok(tape.reshape(joined, [rows, width])?)
        };
        let h_all = stack(&hs, hd)?;
        let s_all = stack(&ss, sd)?;
        let qm_all = stack(&qm, sd)?;
        let qs_all = stack(&qs, sd)?;

        let (pm, ps) = self.prior(h_all)?;
        let kl_rows = self.tape_mut().gaussian_kl(qm_all, qs_all, pm, ps)?;
        let kl = self.tape_mut().mean_all(kl_rows)?;

        let latent = self.tape_mut().concat(&[h_all, s_all])?;
        let reward = self.reward_from_latent(latent)?;
        let targets: Vec<f64> = batch
            .chunks
            .iter()
            .flat_map(|c| c.rewards.iter().copied())
            .collect();
        let targets = self.constant(Tensor::new([rows], targets)?);
        let reward_err = self.tape_mut().sub(reward, targets)?;
        let reward_err = self.tape_mut().square(reward_err)?;
        let reward_mse = self.tape_mut().mean_all(reward_err)?;

        let (front, side) = self.decode_latent(latent)?;
        let (mut front_t, mut side_t) = (Vec::new(), Vec::new());
        for o in &obs {
            split_views(o, &mut front_t, &mut side_t);
        }
        let view = cfg.view_len();
        let mut recon = |pred: Var, target: Vec<f64>| -> Result<Var, ModelError> {
            let target = self.constant(Tensor::new([rows, view], target)?);
            let tape = self.tape_mut();
            let err = tape.sub(pred, target)?;
            let err = tape.square(err)?;
            let sse = tape.sum_all(err)?;
            Ok(tape.scale(sse, 0.5 / rows as f64)?)
        };
        let recon_front = recon(front, front_t)?;
        let recon_side = recon(side, side_t)?;

        let tape = self.tape_mut();
        let mut total = tape.add(recon_front, recon_side)?;
        total = tape.add(total, reward_mse)?;
        let kl_value = tape.value(kl).item()?;
        if kl_value > cfg.free_nats {
            let excess = tape.offset(kl, -cfg.free_nats)?;
            let hinged = tape.scale(excess, cfg.kl_scale)?;
            total = tape.add(total, hinged)?;
        }
        let item = |v: Var| tape.value(v).item();
        let breakdown = LossBreakdown {
            total: item(total)?,
            recon_front: item(recon_front)?,
            recon_side: item(recon_side)?,
            reward_mse: item(reward_mse)?,
            kl: kl_value,
        };
        Ok((total, breakdown))
    }
}
