use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use crossbeam_channel::{Receiver, Select, Sender, TryRecvError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::channel::{LatestReceiver, LatestSender, StopSignal};
use super::clock::{Clock, Costs};
use super::metrics::MetricsRow;
use super::{PipelineError, RunConfig};
use crate::diff::{Adam, DiffError};
use crate::env::{Action, ReachEnv};
use crate::model::{
    loss_noise_len, LatentBelief, LatentModel, LossBreakdown, ModelError, ModelSnapshot,
};
use crate::planner::{act, PlannerConfig};
use crate::replay::{ChunkBatch, EpisodeRecord, ReplayBuffer};

const ROLLER_STREAM: u64 = 1;
const LEARNER_STREAM: u64 = 2;
pub(crate) const BUFFER_STREAM: u64 = 3;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs episodes in the environment with its own copy of the model.
pub struct Roller {
    env: ReachEnv,
    model: LatentModel,
    version: u64,
    planner: PlannerConfig,
    explore_std: f64,
    seed_episodes: usize,
    seed: u64,
    rng: ChaCha8Rng,
    episodes: u64,
    total_steps: u64,
    costs: Costs,
}

impl Roller {
    pub fn new(config: &RunConfig) -> Result<Self, PipelineError> {
        Ok(Self {
            env: ReachEnv::new(config.env.clone())?,
            model: LatentModel::new(config.model.clone(), config.seed)?,
            version: 0,
            planner: config.planner.clone(),
            explore_std: config.explore_std,
            seed_episodes: config.seed_episodes,
            seed: config.seed,
            rng: stream_rng(config.seed, ROLLER_STREAM),
            episodes: 0,
            total_steps: 0,
            costs: config.clock.costs(),
        })
    }

    pub fn model(&self) -> &LatentModel {
        &self.model
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn adopt(&mut self, snapshot: &ModelSnapshot) -> Result<(), PipelineError> {
        self.model.apply_snapshot(snapshot)?;
        self.version = snapshot.version();
        Ok(())
    }

    /// Runs one episode. The first `seed_episodes` use uniform random torques
    /// and report version 0; later ones plan with the current model.
    pub fn collect(
        &mut self,
        clock: &mut impl Clock,
    ) -> Result<(EpisodeRecord, u64), PipelineError> {
        let random = (self.episodes as usize) < self.seed_episodes;
        let version = if random { 0 } else { self.version };
        let dim = self.env.config().joint_count();
        let mut obs = self.env.reset(&mut self.rng);
        let mut belief = LatentBelief::initial(self.model.config());
        let mut prev = Action::zeros(dim);
        let (mut observations, mut actions, mut rewards, mut dones) =
            (vec![obs.clone()], Vec::new(), Vec::new(), Vec::new());
        loop {
            let action = if random {
                Action::new((0..dim).map(|_| self.rng.random_range(-1.0..=1.0)).collect())
            } else {
                let (a, b) = act(
                    &self.model,
                    &obs,
                    &belief,
                    &prev,
                    self.explore_std,
                    &self.planner,
                    &mut self.rng,
                )?;
                clock.charge(self.costs.plan_s);
                belief = b;
                a
            };
            let step = self.env.step(&action)?;
            clock.charge(self.costs.step_s);
            obs = step.observation;
            observations.push(obs.clone());
            actions.push(action.clone());
            rewards.push(step.reward);
            dones.push(step.done);
            prev = action;
            if step.done {
                break;
            }
        }
        let id = self.episodes;
        self.episodes += 1;
        self.total_steps += actions.len() as u64;
        let record = EpisodeRecord::new(
            id,
            self.seed,
            clock.now(),
            observations,
            actions,
            rewards,
            dones,
        )?;
        Ok((record, version))
    }

    pub(crate) fn row(&self, episode: &EpisodeRecord, version: u64, updates: u64) -> MetricsRow {
        let r = episode.rewards();
        MetricsRow {
            wall_clock_s: episode.timestamp(),
            total_env_steps: self.total_steps,
            episode_reward: r.iter().sum::<f64>() / r.len() as f64,
            updates,
            model_version: version,
        }
    }
}

/// Owns the training copy of the model and its optimizer.
pub struct Learner {
    model: LatentModel,
    adam: Adam,
    rng: ChaCha8Rng,
    updates: u64,
    version: u64,
}

impl Learner {
    pub fn new(config: &RunConfig) -> Result<Self, PipelineError> {
        let model = LatentModel::new(config.model.clone(), config.seed)?;
        let adam = Adam::new(config.adam.clone(), model.param_count());
        Ok(Self {
            model,
            adam,
            rng: stream_rng(config.seed, LEARNER_STREAM),
            updates: 0,
            version: 0,
        })
    }

    pub fn model(&self) -> &LatentModel {
        &self.model
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// One Adam step on `batch`. A non-finite loss or gradient is fatal.
    pub fn update(&mut self, batch: &ChunkBatch) -> Result<LossBreakdown, PipelineError> {
        let len = batch.chunk_len().unwrap_or(0);
        let noise: Vec<f64> = (0..loss_noise_len(self.model.config(), batch.batch_size(), len))
            .map(|_| self.rng.sample(StandardNormal))
            .collect();
        let fatal = |detail: String| PipelineError::NonFiniteLoss {
            update: self.updates,
            detail,
        };
        let mut graph = self.model.graph();
        let (loss, parts) = graph.loss(batch, &noise).map_err(|e| match e {
            ModelError::Diff(d @ DiffError::NonFinite { .. }) => {
                let norm = self.model.params().iter().map(|p| p * p).sum::<f64>().sqrt();
                fatal(format!("{d}; parameter norm {norm:e}"))
            }
            other => other.into(),
        })?;
        if !parts.is_finite() {
            return Err(fatal(format!("{parts:?}")));
        }
        let grads = graph.flat_gradients(loss)?;
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            let name = self
                .model
                .layout()
                .entries()
                .iter()
                .find(|e| e.range().contains(&i))
                .map_or("?", |e| e.name.as_str());
            return Err(fatal(format!("gradient of {name}[{i}] is {}; {parts:?}", grads[i])));
        }
        self.adam
            .step(self.model.params_mut(), &grads)
            .map_err(|e| fatal(e.to_string()))?;
        self.updates += 1;
        Ok(parts)
    }

    /// Snapshot of the current parameters under the next version number.
    pub fn next_snapshot(&mut self) -> ModelSnapshot {
        self.version += 1;
        self.model.snapshot(self.version)
    }
}

pub struct RollerReport {
    pub rows: Vec<MetricsRow>,
    pub produced: Vec<u64>,
    pub starts: Vec<f64>,
    pub roller: Roller,
}

/// Collects episodes until the budget elapses or `stop` is raised, adopting
/// the newest queued snapshot at every episode boundary.
#[allow(clippy::too_many_arguments)]
pub fn roller_loop(
    mut roller: Roller,
    mut clock: impl Clock,
    budget_s: f64,
    params_in: &LatestReceiver<ModelSnapshot>,
    episodes_out: &Sender<EpisodeRecord>,
    stop: &StopSignal,
    updates: &AtomicU64,
) -> Result<RollerReport, PipelineError> {
    let (mut rows, mut produced, mut starts) = (Vec::new(), Vec::new(), Vec::new());
    loop {
        if stop.is_raised() || clock.now() >= budget_s {
            break;
        }
        let drained = params_in.drain_latest();
        if let Some(snap) = drained.latest {
            roller.adopt(&snap)?;
        }
        if drained.closed {
            break;
        }
        let start = clock.now();
        let (episode, version) = roller.collect(&mut clock)?;
        rows.push(roller.row(&episode, version, updates.load(Ordering::SeqCst)));
        starts.push(start);
        produced.push(episode.id());
        if episodes_out.send(episode).is_err() {
            return Err(PipelineError::Worker {
                worker: "buffer",
                detail: "episode channel closed early".into(),
            });
        }
    }
    Ok(RollerReport {
        rows,
        produced,
        starts,
        roller,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BufferSettings {
    pub batch_size: usize,
    pub chunk_len: usize,
    /// Episodes of at least `chunk_len` steps needed before sampling starts.
    pub min_episodes: usize,
}

pub struct BufferReport {
    pub replay: ReplayBuffer,
    pub ingested: Vec<u64>,
    /// For each batch sent: episodes ingested so far, and the batch's sources.
    pub sent: Vec<(usize, Vec<u64>)>,
}

/// Ingests episodes and keeps the learner supplied with batches. Pending
/// episodes always go in before the next sample. Exits once the roller has
/// hung up and its queue is empty.
pub fn buffer_loop(
    episodes_in: &Receiver<EpisodeRecord>,
    batches_out: Sender<ChunkBatch>,
    replay: ReplayBuffer,
    settings: BufferSettings,
    mut rng: impl Rng,
    stop: &StopSignal,
) -> Result<BufferReport, PipelineError> {
    let mut report = BufferReport {
        replay,
        ingested: Vec::new(),
        sent: Vec::new(),
    };
    let mut batches_out = Some(batches_out);
    let ingest = |report: &mut BufferReport, ep: EpisodeRecord| -> Result<(), PipelineError> {
        report.ingested.push(ep.id());
        report.replay.append(ep)?;
        Ok(())
    };
    loop {
        loop {
            match episodes_in.try_recv() {
                Ok(ep) => ingest(&mut report, ep)?,
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => return Ok(report),
            }
        }
        let ready = report.replay.eligible_count(settings.chunk_len) >= settings.min_episodes.max(1);
        let out = match &batches_out {
            Some(out) if ready && !stop.is_raised() => out,
            _ => {
                // Nothing to send: wait for the next episode or shutdown.
                let mut sel = Select::new();
                let ep_idx = sel.recv(episodes_in);
                let stop_idx = (!stop.is_raised()).then(|| sel.recv(stop.receiver()));
                let op = sel.select();
                if op.index() == ep_idx {
                    match op.recv(episodes_in) {
                        Ok(ep) => ingest(&mut report, ep)?,
                        Err(_) => return Ok(report),
                    }
                } else {
                    debug_assert_eq!(Some(op.index()), stop_idx);
                    let _ = op.recv(stop.receiver());
                    batches_out = None;
                }
                continue;
            }
        };
        let batch =
            report
                .replay
                .sample_chunks(settings.batch_size, settings.chunk_len, &mut rng)?;
        let sources = batch.chunks.iter().map(|c| c.episode_id).collect();
        let known = report.ingested.len();
        let mut batch = Some(batch);
        while let Some(b) = batch.take() {
            let mut sel = Select::new();
            let send_idx = sel.send(out);
            let ep_idx = sel.recv(episodes_in);
            let stop_idx = sel.recv(stop.receiver());
            let op = sel.select();
            match op.index() {
                i if i == send_idx => {
                    if op.send(out, b).is_ok() {
                        report.sent.push((known, sources));
                    } else {
                        batches_out = None;
                    }
                    break;
                }
                i if i == ep_idx => match op.recv(episodes_in) {
                    Ok(ep) => {
                        ingest(&mut report, ep)?;
                        batch = Some(b);
                    }
                    Err(_) => return Ok(report),
                },
                i => {
                    debug_assert_eq!(i, stop_idx);
                    let _ = op.recv(stop.receiver());
                    batches_out = None;
                    break;
                }
            }
        }
    }
}

pub struct LearnerReport {
    pub learner: Learner,
    pub snapshots: Vec<(f64, u64)>,
    pub last_loss: Option<LossBreakdown>,
}

/// Trains on incoming batches until the budget elapses or `stop` is raised.
/// Every `snapshot_every` updates the parameters go to the roller.
#[allow(clippy::too_many_arguments)]
pub fn learner_loop(
    mut learner: Learner,
    clock: impl Clock,
    budget_s: f64,
    update_latency_s: f64,
    snapshot_every: u64,
    batches_in: Receiver<ChunkBatch>,
    params_out: &LatestSender<ModelSnapshot>,
    stop: &StopSignal,
    updates: &AtomicU64,
    frozen: bool,
) -> Result<LearnerReport, PipelineError> {
    let (mut snapshots, mut last_loss) = (Vec::new(), None);
    loop {
        let left = budget_s - clock.now();
        if left <= 0.0 || stop.is_raised() {
            break;
        }
        if frozen {
            stop.wait(left);
            continue;
        }
        let mut sel = Select::new();
        let batch_idx = sel.recv(&batches_in);
        sel.recv(stop.receiver());
        let op = match sel.select_timeout(Duration::from_secs_f64(left)) {
            Ok(op) => op,
            Err(_) => break,
        };
        if op.index() != batch_idx {
            let _ = op.recv(stop.receiver());
            break;
        }
        let batch = match op.recv(&batches_in) {
            Ok(b) => b,
            Err(_) => break,
        };
        last_loss = Some(learner.update(&batch)?);
        updates.store(learner.updates(), Ordering::SeqCst);
        if stop.wait(update_latency_s) {
            break;
        }
        if learner.updates() % snapshot_every == 0 {
            let snap = learner.next_snapshot();
            snapshots.push((clock.now(), snap.version()));
            params_out.push(snap);
        }
    }
    while batches_in.try_recv().is_ok() {}
    Ok(LearnerReport {
        learner,
        snapshots,
        last_loss,
    })
}
