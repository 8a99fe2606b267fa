use super::layout::{ConvEncoder, Dense, Mlp};
use super::{LatentModel, ModelError};
use crate::diff::{gru_cell_step, GruParams, ParamId, Tape, Tensor, Var};
use crate::env::{Observation, CHANNELS};

/// A tape bound to one model. Parameters are registered on first use, so a
/// graph that never touches a head leaves it off the tape.
pub struct ModelGraph<'m> {
    model: &'m LatentModel,
    tape: Tape,
    vars: Vec<Option<Var>>,
}

/// Pixel bytes to network inputs in `[0, 1]`; background is 0.
pub fn pixel_input(p: u8) -> f64 {
    f64::from(p) / 255.0
}

/// Splits each observation into front and side halves, each `3 × N × N`,
/// appended to `front` and `side` in channel-major order.
pub(crate) fn split_views(obs: &Observation, front: &mut Vec<f64>, side: &mut Vec<f64>) {
    let n = obs.height();
    let px = obs.pixels();
    for c in 0..CHANNELS {
        for r in 0..n {
            let row = &px[(c * n + r) * 2 * n..(c * n + r + 1) * 2 * n];
            front.extend(row[..n].iter().map(|p| pixel_input(*p)));
            side.extend(row[n..].iter().map(|p| pixel_input(*p)));
        }
    }
}

impl<'m> ModelGraph<'m> {
    pub fn new(model: &'m LatentModel) -> Self {
        Self {
            model,
            tape: Tape::new(),
            vars: vec![None; model.layout().entries().len()],
        }
    }

    pub fn model(&self) -> &LatentModel {
        self.model
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn tape_mut(&mut self) -> &mut Tape {
        &mut self.tape
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    fn param(&mut self, id: ParamId) -> Result<Var, ModelError> {
        if let Some(v) = self.vars[id.0] {
            return Ok(v);
        }
        let entry = self.model.layout().entry(id);
        let value = Tensor::new(
            entry.shape.clone(),
            self.model.params()[entry.range()].to_vec(),
        )?;
        let v = self.tape.param(id, value)?;
        self.vars[id.0] = Some(v);
        Ok(v)
    }

    fn dense(&mut self, d: Dense, x: Var) -> Result<Var, ModelError> {
        let (w, b) = (self.param(d.w)?, self.param(d.b)?);
        Ok(self.tape.linear(x, w, b)?)
    }

    fn mlp(&mut self, m: Mlp, x: Var) -> Result<Var, ModelError> {
        let hidden = self.dense(m.l1, x)?;
        let hidden = self.tape.elu(hidden)?;
        self.dense(m.l2, hidden)
    }

    fn conv(&mut self, d: Dense, x: Var) -> Result<Var, ModelError> {
        let (w, b) = (self.param(d.w)?, self.param(d.b)?);
        let y = self.tape.conv2d(x, w, b, 2, 1)?;
        Ok(self.tape.elu(y)?)
    }

    fn encode_view(&mut self, enc: ConvEncoder, x: Var) -> Result<Var, ModelError> {
        let y = self.conv(enc.conv1, x)?;
        let y = self.conv(enc.conv2, y)?;
        let shape = self.value(y).shape().to_vec();
        let y = self
            .tape
            .reshape(y, [shape[0], shape[1] * shape[2] * shape[3]])?;
        self.dense(enc.fc, y)
    }

    /// Front and side view inputs, each `[B, 3, N, N]`.
    pub fn observation_input(&mut self, obs: &[&Observation]) -> Result<(Var, Var), ModelError> {
        let n = self.model.config().image_size;
        if obs.is_empty() {
            return Err(ModelError::Input("no observations".into()));
        }
        if let Some(o) = obs.iter().find(|o| o.height() != n) {
            return Err(ModelError::Input(format!(
                "observation is {}×{}, model expects {n}×{}",
                o.height(),
                o.width(),
                2 * n
            )));
        }
        let (mut front, mut side) = (Vec::new(), Vec::new());
        for o in obs {
            split_views(o, &mut front, &mut side);
        }
        let shape = [obs.len(), CHANNELS, n, n];
        Ok((
            self.constant(Tensor::new(shape, front)?),
            self.constant(Tensor::new(shape, side)?),
        ))
    }

    /// Per-camera embeddings concatenated front first: `[B, 2·embed_dim]`.
    pub fn encode_views(&mut self, front: Var, side: Var) -> Result<Var, ModelError> {
        let ids = self.model.ids().encoders;
        let f = self.encode_view(ids[0], front)?;
        let s = self.encode_view(ids[1], side)?;
        Ok(self.tape.concat(&[f, s])?)
    }

    pub fn encode(&mut self, obs: &[&Observation]) -> Result<Var, ModelError> {
        let (front, side) = self.observation_input(obs)?;
        self.encode_views(front, side)
    }

    /// Splits a head output `[.., 2S]` into mean and `softplus(raw) + min_stddev`.
    fn gaussian_head(&mut self, out: Var) -> Result<(Var, Var), ModelError> {
        let s = self.model.config().stochastic_dim;
        let mean = self.tape.slice_cols(out, 0, s)?;
        let raw = self.tape.slice_cols(out, s, s)?;
        let std = self.tape.softplus(raw)?;
        let std = self.tape.offset(std, self.model.config().min_stddev)?;
        Ok((mean, std))
    }

    pub fn posterior(&mut self, h: Var, embedding: Var) -> Result<(Var, Var), ModelError> {
        let x = self.tape.concat(&[h, embedding])?;
        let out = self.mlp(self.model.ids().posterior, x)?;
        self.gaussian_head(out)
    }

    /// `h' = GRU(h, elu(linear(concat(s, a))))`.
    pub fn transition(&mut self, h: Var, s: Var, action: Var) -> Result<Var, ModelError> {
        let ids = *self.model.ids();
        let x = self.tape.concat(&[s, action])?;
        let x = self.dense(ids.transition_in, x)?;
        let x = self.tape.elu(x)?;
        let p = GruParams {
            w_input: self.param(ids.gru.w_input)?,
            w_hidden: self.param(ids.gru.w_hidden)?,
            b_input: self.param(ids.gru.b_input)?,
            b_hidden: self.param(ids.gru.b_hidden)?,
        };
        Ok(gru_cell_step(&mut self.tape, h, x, &p)?)
    }

    pub fn prior(&mut self, h: Var) -> Result<(Var, Var), ModelError> {
        let out = self.mlp(self.model.ids().prior, h)?;
        self.gaussian_head(out)
    }

    pub fn transition_prior(
        &mut self,
        h: Var,
        s: Var,
        action: Var,
    ) -> Result<(Var, Var, Var), ModelError> {
        let h = self.transition(h, s, action)?;
        let (mean, std) = self.prior(h)?;
        Ok((h, mean, std))
    }

    pub(crate) fn reward_from_latent(&mut self, latent: Var) -> Result<Var, ModelError> {
        let r = self.mlp(self.model.ids().reward, latent)?;
        let rows = self.value(r).rows();
        Ok(self.tape.reshape(r, [rows])?)
    }

    /// Predicted reward per row, shape `[B]`.
    pub fn predict_reward(&mut self, h: Var, s: Var) -> Result<Var, ModelError> {
        let latent = self.tape.concat(&[h, s])?;
        self.reward_from_latent(latent)
    }

    pub(crate) fn decode_latent(&mut self, latent: Var) -> Result<(Var, Var), ModelError> {
        let ids = self.model.ids().decoders;
        Ok((self.mlp(ids[0], latent)?, self.mlp(ids[1], latent)?))
    }

    /// Front and side reconstructions, each `[B, 3·N·N]` in channel-major order.
    pub fn decode(&mut self, h: Var, s: Var) -> Result<(Var, Var), ModelError> {
        let latent = self.tape.concat(&[h, s])?;
        self.decode_latent(latent)
    }

    /// Gradient of `loss` laid out like the model's flat parameter vector.
    pub fn flat_gradients(&self, loss: Var) -> Result<Vec<f64>, ModelError> {
        let grads = self.tape.backward(loss)?;
        let layout = self.model.layout();
        let mut flat = vec![0.0; layout.total()];
        for (id, g) in grads.iter() {
            flat[layout.entry(id).range()].copy_from_slice(g.data());
        }
        Ok(flat)
    }
}
