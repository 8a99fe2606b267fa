//! Tape-free forward passes for the planner's prior rollouts.
//!
//! Same arithmetic as the recorded graph, without per-op allocation or
//! bookkeeping. Buffers are reused across rollout steps.

use super::layout::{Dense, Mlp};
use super::LatentModel;
use crate::diff::gemm::{gemm, MatRef};
use crate::diff::tape::sigmoid;

fn elu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        v.exp_m1()
    }
}

struct Rows<'a> {
    model: &'a LatentModel,
    rows: usize,
}

impl Rows<'_> {
    fn weights(&self, d: Dense) -> (&[f64], &[f64], usize, usize) {
        let layout = self.model.layout();
        let (w, b) = (layout.entry(d.w), layout.entry(d.b));
        let p = self.model.params();
        (&p[w.range()], &p[b.range()], w.shape[0], w.shape[1])
    }

    /// `out = x · Wᵀ + b` for `x: [rows, in]`.
    fn dense(&self, d: Dense, x: &[f64], out: &mut Vec<f64>) {
        let (w, b, o, i) = self.weights(d);
        out.clear();
        for _ in 0..self.rows {
            out.extend_from_slice(b);
        }
        gemm(
            MatRef::new(x, self.rows, i),
            MatRef::new(w, o, i).t(),
            1.0,
            out,
        );
    }

    fn mlp(&self, m: Mlp, x: &[f64], hidden: &mut Vec<f64>, out: &mut Vec<f64>) {
        self.dense(m.l1, x, hidden);
        hidden.iter_mut().for_each(|v| *v = elu(*v));
        self.dense(m.l2, hidden, out);
    }
}

fn interleave(a: &[f64], aw: usize, b: &[f64], bw: usize, rows: usize, out: &mut Vec<f64>) {
    out.clear();
    for r in 0..rows {
        out.extend_from_slice(&a[r * aw..(r + 1) * aw]);
        out.extend_from_slice(&b[r * bw..(r + 1) * bw]);
    }
}

/// Adds per-step predicted rewards of a prior-mean rollout into `returns`.
/// `h`, `s` are `[rows, H]`, `[rows, S]`; `actions(k, buf)` fills step `k`'s
/// `[rows, A]` actions.
pub(crate) fn prior_rollout(
    model: &LatentModel,
    h0: &[f64],
    s0: &[f64],
    horizon: usize,
    mut actions: impl FnMut(usize, &mut Vec<f64>),
    returns: &mut [f64],
) {
    let cfg = model.config();
    let rows = returns.len();
    let (hd, sd, ad) = (cfg.deterministic_dim, cfg.stochastic_dim, cfg.action_dim);
    let ids = *model.ids();
    let net = Rows { model, rows };
    let layout = model.layout();
    let p = model.params();
    let w_i = &p[layout.entry(ids.gru.w_input).range()];
    let w_h = &p[layout.entry(ids.gru.w_hidden).range()];
    let b_i = &p[layout.entry(ids.gru.b_input).range()];
    let b_h = &p[layout.entry(ids.gru.b_hidden).range()];
    let xin_w = layout.entry(ids.gru.w_input).shape[1];

    let (mut h, mut s) = (h0.to_vec(), s0.to_vec());
    let (mut a, mut cat, mut x) = (Vec::new(), Vec::new(), Vec::new());
    let (mut gi, mut gh) = (vec![0.0; rows * 3 * hd], vec![0.0; rows * 3 * hd]);
    let (mut hidden, mut out) = (Vec::new(), Vec::new());
    for k in 0..horizon {
        actions(k, &mut a);
        interleave(&s, sd, &a, ad, rows, &mut cat);
        net.dense(ids.transition_in, &cat, &mut x);
        x.iter_mut().for_each(|v| *v = elu(*v));

        for r in 0..rows {
            gi[r * 3 * hd..(r + 1) * 3 * hd].copy_from_slice(b_i);
            gh[r * 3 * hd..(r + 1) * 3 * hd].copy_from_slice(b_h);
        }
        gemm(
            MatRef::new(&x, rows, xin_w),
            MatRef::new(w_i, 3 * hd, xin_w).t(),
            1.0,
            &mut gi,
        );
        gemm(
            MatRef::new(&h, rows, hd),
            MatRef::new(w_h, 3 * hd, hd).t(),
            1.0,
            &mut gh,
        );
        for r in 0..rows {
            let (gi, gh) = (&gi[r * 3 * hd..], &gh[r * 3 * hd..]);
            for j in 0..hd {
                let rg = sigmoid(gi[j] + gh[j]);
                let z = sigmoid(gi[hd + j] + gh[hd + j]);
                let n = (gi[2 * hd + j] + rg * gh[2 * hd + j]).tanh();
                let hv = &mut h[r * hd + j];
                *hv = n + z * (*hv - n);
            }
        }

        net.mlp(ids.prior, &h, &mut hidden, &mut out);
        for r in 0..rows {
            s[r * sd..(r + 1) * sd].copy_from_slice(&out[r * 2 * sd..r * 2 * sd + sd]);
        }
        interleave(&h, hd, &s, sd, rows, &mut cat);
        net.mlp(ids.reward, &cat, &mut hidden, &mut out);
        for (acc, v) in returns.iter_mut().zip(&out) {
            *acc += v;
        }
    }
}
