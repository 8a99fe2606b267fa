//! Cross-entropy-method planning over action sequences.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Action, Observation};
use crate::model::{LatentBelief, LatentModel, ModelError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("invalid planner config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("scorer returned {got} values for {expected} candidates")]
    ScoreCount { expected: usize, got: usize },
    #[error("scorer returned a non-finite return")]
    NonFiniteScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub iterations: usize,
    pub candidates: usize,
    pub elites: usize,
    pub action_dim: usize,
    pub action_low: f64,
    pub action_high: f64,
    pub initial_std: f64,
    pub min_std: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 12,
            iterations: 10,
            candidates: 100,
            elites: 10,
            action_dim: 3,
            action_low: -1.0,
            action_high: 1.0,
            initial_std: 1.0,
            min_std: 0.05,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: &str| Err(PlanError::Config(m.into()));
        if self.horizon == 0 || self.iterations == 0 || self.action_dim == 0 {
            return bad("horizon, iterations and action_dim must be at least 1");
        }
        if self.elites == 0 || self.elites > self.candidates {
            return bad("need 1 ≤ elites ≤ candidates");
        }
        if !(self.action_low < self.action_high) {
            return bad("action_low must be below action_high");
        }
        if !(self.initial_std > 0.0 && self.min_std >= 0.0) {
            return bad("initial_std must be positive and min_std non-negative");
        }
        Ok(())
    }

    /// Values in one sequence: `horizon · action_dim`.
    pub fn sequence_len(&self) -> usize {
        self.horizon * self.action_dim
    }
}

/// Scores candidate action sequences, laid out `candidates × horizon × action_dim`.
pub trait SequenceScorer {
    fn score(
        &mut self,
        sequences: &[f64],
        candidates: usize,
        horizon: usize,
    ) -> Result<Vec<f64>, PlanError>;
}

impl<F> SequenceScorer for F
where
    F: FnMut(&[f64], usize, usize) -> Vec<f64>,
{
    fn score(
        &mut self,
        sequences: &[f64],
        candidates: usize,
        horizon: usize,
    ) -> Result<Vec<f64>, PlanError> {
        Ok(self(sequences, candidates, horizon))
    }
}

/// Scores sequences by rolling the model's prior from a belief.
pub struct LatentScorer<'a> {
    pub model: &'a LatentModel,
    pub belief: &'a LatentBelief,
}

impl SequenceScorer for LatentScorer<'_> {
    fn score(
        &mut self,
        sequences: &[f64],
        candidates: usize,
        horizon: usize,
    ) -> Result<Vec<f64>, PlanError> {
        Ok(self
            .model
            .evaluate_sequences(self.belief, sequences, candidates, horizon)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanResult {
    /// First step of the returned plan.
    pub action: Action,
    /// Return of the returned plan under the scorer.
    pub predicted_return: f64,
    /// Final proposal, `horizon × action_dim`.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Best elite return after each iteration.
    pub elite_best: Vec<f64>,
}

fn scored(
    scorer: &mut impl SequenceScorer,
    seqs: &[f64],
    n: usize,
    horizon: usize,
) -> Result<Vec<f64>, PlanError> {
    let s = scorer.score(seqs, n, horizon)?;
    if s.len() != n {
        return Err(PlanError::ScoreCount {
            expected: n,
            got: s.len(),
        });
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(PlanError::NonFiniteScore);
    }
    Ok(s)
}

/// CEM over sequences from `N(0, initial_std²)`.
///
/// Candidates are drawn in antithetic pairs and clipped to the bounds. From
/// the second iteration on, the best sequence seen so far replaces the last
/// candidate, so with a deterministic scorer the best elite never gets worse.
/// Elites are the top `elites` returns plus anything tied with the cut-off.
/// The result is the better of the final clipped mean and that incumbent.
pub fn plan(
    scorer: &mut impl SequenceScorer,
    config: &PlannerConfig,
    rng: &mut impl Rng,
) -> Result<PlanResult, PlanError> {
    config.validate()?;
    let (n, len) = (config.candidates, config.sequence_len());
    let clip = |v: f64| v.clamp(config.action_low, config.action_high);
    let mut mean = vec![0.0; len];
    let mut std = vec![config.initial_std; len];
    let mut seqs = vec![0.0; n * len];
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut elite_best = Vec::with_capacity(config.iterations);
    let mut order: Vec<usize> = (0..n).collect();

    for _ in 0..config.iterations {
        let mut c = 0;
        while c < n {
            let eps: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
            for sign in [1.0, -1.0] {
                if c == n {
                    break;
                }
                for j in 0..len {
                    seqs[c * len + j] = clip(mean[j] + sign * std[j] * eps[j]);
                }
                c += 1;
            }
        }
        if let Some((_, best)) = &incumbent {
            seqs[(n - 1) * len..].copy_from_slice(best);
        }
        let scores = scored(scorer, &seqs, n, config.horizon)?;

        order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)));
        let cutoff = scores[order[config.elites - 1]];
        let elite: Vec<usize> = order
            .iter()
            .copied()
            .take_while(|i| scores[*i] >= cutoff)
            .collect();

        let top = order[0];
        if incumbent.as_ref().is_none_or(|(s, _)| scores[top] > *s) {
            incumbent = Some((scores[top], seqs[top * len..(top + 1) * len].to_vec()));
        }
        elite_best.push(scores[top]);

        let k = elite.len() as f64;
        for j in 0..len {
            let m = elite.iter().map(|i| seqs[i * len + j]).sum::<f64>() / k;
            let var = elite
                .iter()
                .map(|i| (seqs[i * len + j] - m).powi(2))
                .sum::<f64>()
                / k;
            mean[j] = m;
            std[j] = var.sqrt().max(config.min_std);
        }
    }

    let final_mean: Vec<f64> = mean.iter().map(|v| clip(*v)).collect();
    let mean_return = scored(scorer, &final_mean, 1, config.horizon)?[0];
    let (predicted_return, chosen) = match incumbent {
        Some((s, best)) if s > mean_return => (s, best),
        _ => (mean_return, final_mean),
    };
    Ok(PlanResult {
        action: Action::new(chosen[..config.action_dim].to_vec()),
        predicted_return,
        mean,
        std,
        elite_best,
    })
}

/// Plans from `belief` with the model's prior as the scorer.
pub fn plan_latent(
    model: &LatentModel,
    belief: &LatentBelief,
    config: &PlannerConfig,
    rng: &mut impl Rng,
) -> Result<PlanResult, PlanError> {
    plan(&mut LatentScorer { model, belief }, config, rng)
}

/// One control step: filter `obs` into the belief, plan, then add
/// `N(0, explore_std²)` exploration noise and clip.
pub fn act(
    model: &LatentModel,
    obs: &Observation,
    prev_belief: &LatentBelief,
    prev_action: &Action,
    explore_std: f64,
    config: &PlannerConfig,
    rng: &mut impl Rng,
) -> Result<(Action, LatentBelief), PlanError> {
    let noise: Vec<f64> = (0..model.config().stochastic_dim)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let belief = model.filter_step(prev_belief, prev_action.as_slice(), obs, &noise)?;
    let result = plan_latent(model, &belief, config, rng)?;
    let action = if explore_std > 0.0 {
        let noisy = result
            .action
            .as_slice()
            .iter()
            .map(|a| {
                let e: f64 = rng.sample(StandardNormal);
                (a + explore_std * e).clamp(config.action_low, config.action_high)
            })
            .collect();
        Action::new(noisy)
    } else {
        result.action
    };
    Ok((action, belief))
}
