use std::sync::atomic::AtomicU64;
use std::thread;
use std::time::Duration;

use crossbeam_channel::{bounded, Sender};

use super::channel::{latest_channel, stop_signal};
use super::clock::{Clock, ClockMode, VirtualClock, WallClock};
use super::metrics::RunMetrics;
use super::workers::{
    buffer_loop, learner_loop, roller_loop, stream_rng, BufferSettings, Learner, Roller,
    BUFFER_STREAM,
};
use super::{
    Mode, PipelineError, RunConfig, BATCHES_CHANNEL_CAPACITY, EPISODES_CHANNEL_CAPACITY,
    PARAMS_CHANNEL_CAPACITY,
};
use crate::replay::ReplayBuffer;

pub fn run(config: &RunConfig) -> Result<RunMetrics, PipelineError> {
    match config.mode {
        Mode::Sync => run_sync(config),
        Mode::Async => run_async(config),
    }
}

/// Alternates one episode with `collect_interval` learner updates on a
/// single thread. With a virtual clock the result depends only on the config.
pub fn run_sync(config: &RunConfig) -> Result<RunMetrics, PipelineError> {
    config.validate()?;
    if config.mode != Mode::Sync {
        return Err(PipelineError::Config("run_sync needs mode sync".into()));
    }
    match config.clock {
        ClockMode::Wall => sync_loop(config, WallClock::start()),
        ClockMode::Virtual { .. } => sync_loop(config, VirtualClock::new()),
    }
}

fn sync_loop(config: &RunConfig, mut clock: impl Clock) -> Result<RunMetrics, PipelineError> {
    let updates_per_cycle = config.collect_interval.expect("validated");
    let update_cost = config.clock.costs().update_s;
    let mut roller = Roller::new(config)?;
    let mut learner = Learner::new(config)?;
    let mut replay = ReplayBuffer::new(config.replay_capacity);
    let mut rng = stream_rng(config.seed, BUFFER_STREAM);
    let mut metrics = RunMetrics::default();

    while clock.now() < config.budget_s {
        let start = clock.now();
        let (episode, version) = roller.collect(&mut clock)?;
        metrics
            .rows
            .push(roller.row(&episode, version, learner.updates()));
        metrics.episode_starts.push(start);
        metrics.episodes_produced.push(episode.id());
        metrics.episodes_ingested.push(episode.id());
        replay.append(episode)?;

        if replay.eligible_count(config.chunk_len) < config.seed_episodes.max(1) {
            continue;
        }
        for _ in 0..updates_per_cycle {
            if clock.now() >= config.budget_s {
                break;
            }
            let batch = replay.sample_chunks(config.batch_size, config.chunk_len, &mut rng)?;
            metrics.last_loss = Some(learner.update(&batch)?);
            clock.charge(update_cost);
            clock.sleep(config.update_latency_s());
        }
        let snap = learner.next_snapshot();
        metrics.snapshots.push((clock.now(), snap.version()));
        roller.adopt(&snap)?;
    }
    metrics.total_env_steps = roller.total_steps();
    metrics.total_updates = learner.updates();
    Ok(metrics)
}

/// Sends the worker's name when dropped, including during a panic unwind.
struct Finished(&'static str, Sender<&'static str>);

impl Drop for Finished {
    fn drop(&mut self) {
        let _ = self.1.send(self.0);
    }
}

fn joined<T>(
    worker: &'static str,
    r: thread::Result<Result<T, PipelineError>>,
) -> Result<T, PipelineError> {
    match r {
        Ok(inner) => inner,
        Err(panic) => {
            let detail = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panicked".into());
            Err(PipelineError::Worker { worker, detail })
        }
    }
}

/// Roller, buffer and learner on their own threads, joined by the three
/// channels. Stops at the budget, or as soon as any worker exits early.
pub fn run_async(config: &RunConfig) -> Result<RunMetrics, PipelineError> {
    config.validate()?;
    if config.mode != Mode::Async {
        return Err(PipelineError::Config("run_async needs mode async".into()));
    }
    let roller = Roller::new(config)?;
    let learner = Learner::new(config)?;
    let replay = ReplayBuffer::new(config.replay_capacity);
    let settings = BufferSettings {
        batch_size: config.batch_size,
        chunk_len: config.chunk_len,
        min_episodes: config.seed_episodes,
    };

    let (params_tx, params_rx) = latest_channel(PARAMS_CHANNEL_CAPACITY);
    let (episodes_tx, episodes_rx) = bounded(EPISODES_CHANNEL_CAPACITY);
    let (batches_tx, batches_rx) = bounded(BATCHES_CHANNEL_CAPACITY);
    let (done_tx, done_rx) = bounded(3);
    let (stop_handle, stop) = stop_signal();
    let updates = AtomicU64::new(0);
    let clock = WallClock::start();
    let budget = config.budget_s;

    thread::scope(|s| {
        let roller_h = {
            let (stop, updates, params_rx) = (stop.clone(), &updates, params_rx);
            let done = Finished("roller", done_tx.clone());
            thread::Builder::new()
                .name("roller".into())
                .spawn_scoped(s, move || {
                    let _done = done;
                    // Dropping the sender on exit tells the buffer to drain.
                    let episodes_tx = episodes_tx;
                    roller_loop(roller, clock, budget, &params_rx, &episodes_tx, &stop, updates)
                })
                .expect("spawn roller")
        };
        let buffer_h = {
            let stop = stop.clone();
            let done = Finished("buffer", done_tx.clone());
            let rng = stream_rng(config.seed, BUFFER_STREAM);
            thread::Builder::new()
                .name("buffer".into())
                .spawn_scoped(s, move || {
                    let _done = done;
                    buffer_loop(&episodes_rx, batches_tx, replay, settings, rng, &stop)
                })
                .expect("spawn buffer")
        };
        let learner_h = {
            let (stop, updates) = (stop.clone(), &updates);
            let done = Finished("learner", done_tx);
            let (latency, every, frozen) = (
                config.update_latency_s(),
                config.snapshot_every,
                config.learner_frozen,
            );
            thread::Builder::new()
                .name("learner".into())
                .spawn_scoped(s, move || {
                    let _done = done;
                    learner_loop(
                        learner, clock, budget, latency, every, batches_rx, &params_tx, &stop,
                        updates, frozen,
                    )
                })
                .expect("spawn learner")
        };

        // Any worker finishing before the budget is a failure or an early
        // hang-up; either way everyone stops.
        let left = (budget - clock.now()).max(0.0);
        let _ = done_rx.recv_timeout(Duration::from_secs_f64(left));
        stop_handle.raise();

        let roller_r = joined("roller", roller_h.join());
        let buffer_r = joined("buffer", buffer_h.join());
        let learner_r = joined("learner", learner_h.join());
        let (roller_r, buffer_r, learner_r) = (roller_r?, buffer_r?, learner_r?);
        Ok(RunMetrics {
            rows: roller_r.rows,
            total_env_steps: roller_r.roller.total_steps(),
            total_updates: learner_r.learner.updates(),
            episodes_produced: roller_r.produced,
            episodes_ingested: buffer_r.ingested,
            episode_starts: roller_r.starts,
            snapshots: learner_r.snapshots,
            last_loss: learner_r.last_loss,
        })
    })
}
