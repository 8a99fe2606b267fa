//! Acceptance run: one PASS/FAIL line per criterion C1–C8.
//!
//! `ACCEPTANCE_ONLY=C2,C7` restricts the run to the listed criteria.
//! C3 and C4 are wall-clock experiments (about 30 and 90 minutes) and must
//! not share the CPU with other work.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::bounded;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roboplanet::diff::{finite_diff_check, AdamConfig, DiffError};
use roboplanet::env::{reset_noise_bound, Action, EnvConfig, Observation, ReachEnv, RewardMode};
use roboplanet::model::{
    loss_noise_len, read_checkpoint, write_checkpoint, LatentModel, LossBreakdown, ModelConfig,
    ModelError,
};
use roboplanet::pipeline::{
    buffer_loop, latest_channel, read_metrics_csv, run_async, run_sync, stop_signal,
    write_metrics_csv, BufferSettings, ClockMode, Learner, MetricsRow, RunConfig, RunMetrics,
    StopHandle, BATCHES_CHANNEL_CAPACITY, CSV_HEADER, PARAMS_CHANNEL_CAPACITY,
};
use roboplanet::planner::{plan, PlannerConfig};
use roboplanet::replay::{read_episode, write_episode, ChunkBatch, EpisodeRecord, ReplayBuffer};
use roboplanet::Mode;
use roboplanet_cli::experiment::{load_rows, run_experiment};
use roboplanet_cli::report::{bin_metrics, bin_points, BinnedSeries};
use roboplanet_cli::spec::{ExperimentSpec, RunSpec, Settings};
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Verdict = Result<String, String>;

fn check(cond: bool, detail: String) -> Verdict {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- helpers

fn env_config(image_size: usize) -> EnvConfig {
    let mut cfg = EnvConfig::default();
    cfg.render.image_size = image_size;
    cfg
}

fn random_episode(cfg: &EnvConfig, id: u64, seed: u64, max_steps: usize) -> EpisodeRecord {
    let mut env = ReachEnv::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut observations = vec![env.reset(&mut rng)];
    let (mut actions, mut rewards, mut dones) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..max_steps {
        let a = Action::new(
            (0..cfg.joint_count())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        );
        let r = env.step(&a).unwrap();
        observations.push(r.observation);
        actions.push(a);
        rewards.push(r.reward);
        dones.push(r.done);
        if r.done {
            break;
        }
    }
    EpisodeRecord::new(id, seed, 0.0, observations, actions, rewards, dones).unwrap()
}

fn normals(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| rng.sample(rand_distr::StandardNormal))
        .collect()
}

fn loss_of(
    model: &LatentModel,
    batch: &ChunkBatch,
    noise: &[f64],
) -> Result<(LossBreakdown, Vec<f64>), ModelError> {
    let mut g = model.graph();
    let (v, b) = g.loss(batch, noise)?;
    Ok((b, g.flat_gradients(v)?))
}

fn to_diff(e: ModelError) -> DiffError {
    match e {
        ModelError::Diff(d) => d,
        other => DiffError::Contract {
            op: "model",
            detail: other.to_string(),
        },
    }
}

/// Model, planner and batch settings used for the wall-clock experiments.
/// Sized so that a planner-driven episode takes about a second on one core.
fn desk_settings() -> Settings {
    Settings {
        image_size: Some(16),
        batch_size: Some(8),
        model: Some(desk_model()),
        planner: Some(PlannerConfig {
            candidates: 50,
            iterations: 5,
            elites: 5,
            ..PlannerConfig::default()
        }),
        adam: Some(AdamConfig {
            learning_rate: 3e-3,
            ..AdamConfig::default()
        }),
        ..Settings::default()
    }
}

fn desk_model() -> ModelConfig {
    ModelConfig {
        image_size: 16,
        embed_dim: 24,
        deterministic_dim: 24,
        stochastic_dim: 6,
        hidden_dim: 24,
        conv_depth: 4,
        // With free nats on a 6-dim stochastic state the prior ignores actions.
        free_nats: 0.0,
        ..ModelConfig::default()
    }
}

fn out_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name)
}

// ---------------------------------------------------------------- C1

fn c1() -> Verdict {
    let mcfg = ModelConfig {
        image_size: 8,
        action_dim: 3,
        embed_dim: 8,
        deterministic_dim: 8,
        stochastic_dim: 4,
        hidden_dim: 8,
        conv_depth: 2,
        min_stddev: 0.1,
        free_nats: 0.0,
        kl_scale: 1.0,
    };
    let model = LatentModel::new(mcfg.clone(), 0).map_err(|e| e.to_string())?;
    let ep = random_episode(&env_config(8), 0, 0, 8);
    let batch = ChunkBatch {
        chunks: vec![ep.chunk(ep.len() - 3, 3).expect("episode long enough")],
    };
    let noise = normals(loss_noise_len(&mcfg, 1, 3), 0);
    let (_, grads) = loss_of(&model, &batch, &noise).map_err(|e| e.to_string())?;
    let f = |p: &[f64]| -> Result<f64, DiffError> {
        let mut m = model.clone();
        m.set_params(p).map_err(to_diff)?;
        loss_of(&m, &batch, &noise)
            .map(|r| r.0.total)
            .map_err(to_diff)
    };
    let err = finite_diff_check(f, model.params(), &grads, 1e-5).map_err(|e| e.to_string())?;
    check(
        err < 1e-4,
        format!("max rel err {err:.3e} over {} params (need < 1e-4)", model.param_count()),
    )
}

// ---------------------------------------------------------------- C2

fn c2() -> Verdict {
    // Discretized MDP: three states, the continuous action selects one of
    // three choices by thirds of [−1, 1].
    let choice = |a: f64| ((a + 1.0) * 1.5).floor().clamp(0.0, 2.0) as usize;
    let mut hits = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let rewards: Vec<[[f64; 3]; 3]> = (0..3)
            .map(|_| {
                let mut t = [[0.0; 3]; 3];
                for row in &mut t {
                    for v in row.iter_mut() {
                        *v = rng.random::<f64>();
                    }
                }
                t
            })
            .collect();
        let rollout = |cs: [usize; 3]| {
            let mut s = 0;
            let mut total = 0.0;
            for (k, c) in cs.iter().enumerate() {
                total += rewards[k][s][*c];
                s = (s + c + 1) % 3;
            }
            total
        };
        let mut best = f64::NEG_INFINITY;
        for c0 in 0..3 {
            for c1 in 0..3 {
                for c2 in 0..3 {
                    best = best.max(rollout([c0, c1, c2]));
                }
            }
        }
        let cfg = PlannerConfig {
            horizon: 3,
            action_dim: 1,
            ..PlannerConfig::default()
        };
        let mut scorer = |seqs: &[f64], n: usize, h: usize| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let s = &seqs[i * h..(i + 1) * h];
                    rollout([choice(s[0]), choice(s[1]), choice(s[2])])
                })
                .collect()
        };
        let r = plan(&mut scorer, &cfg, &mut rng).map_err(|e| e.to_string())?;
        if r.predicted_return >= 0.95 * best {
            hits += 1;
        }
    }

    let cfg = PlannerConfig {
        action_dim: 3,
        ..PlannerConfig::default()
    };
    let n = cfg.sequence_len();
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let mut scorer = |seqs: &[f64], c: usize, _h: usize| -> Vec<f64> {
            (0..c)
                .map(|i| -seqs[i * n..i * n + 3].iter().map(|v| (v - 0.3).powi(2)).sum::<f64>())
                .collect()
        };
        let r = plan(&mut scorer, &cfg, &mut ChaCha8Rng::seed_from_u64(seed))
            .map_err(|e| e.to_string())?;
        for a in r.action.as_slice() {
            worst = worst.max((a - 0.3).abs());
        }
    }
    check(
        hits >= 95 && worst < 0.05,
        format!("{hits}/100 trials within 5% of the optimum; quadratic |a − 0.3| ≤ {worst:.4}"),
    )
}

// ---------------------------------------------------------------- C3

fn c3() -> Verdict {
    let seeds = vec![0, 1, 2];
    let run = |mode: Mode, c: Option<usize>| RunSpec {
        mode,
        collect_interval: c,
        seeds: seeds.clone(),
        budget_s: 300.0,
        update_latency_ms: 100.0,
        reward_mode: RewardMode::State,
    };
    let spec = ExperimentSpec {
        runs: vec![run(Mode::Sync, Some(10)), run(Mode::Async, None)],
        out: out_dir("c3"),
        bins: 10,
        settings: desk_settings(),
        parallel_runs: false,
    };
    let report = run_experiment(&spec).map_err(|e| e.to_string())?;
    if let Some(f) = report.failed().next() {
        return Err(format!("{} seed {} failed: {:?}", f.label, f.seed, f.error));
    }
    let steps = |label: &str| -> Vec<u64> {
        report
            .manifest
            .runs
            .iter()
            .filter(|r| r.label == label)
            .map(|r| r.total_env_steps)
            .collect()
    };
    let (sync, asyn) = (steps("CI10"), steps("Robo-PlaNet"));
    let total = |v: &[u64]| v.iter().sum::<u64>() as f64;
    let ratio = total(&asyn) / total(&sync);
    check(
        ratio >= 1.5,
        format!("async/sync env steps {ratio:.2} (async {asyn:?}, sync {sync:?}; need ≥ 1.5)"),
    )
}

// ---------------------------------------------------------------- C4

fn c4() -> Verdict {
    let budget = 900.0;
    let seeds = vec![0, 1, 2];
    let run = |mode: Mode, c: Option<usize>| RunSpec {
        mode,
        collect_interval: c,
        seeds: seeds.clone(),
        budget_s: budget,
        update_latency_ms: 100.0,
        reward_mode: RewardMode::State,
    };
    let spec = ExperimentSpec {
        runs: vec![run(Mode::Sync, Some(10)), run(Mode::Async, None)],
        out: out_dir("c4"),
        bins: 10,
        settings: desk_settings(),
        parallel_runs: false,
    };
    let report = run_experiment(&spec).map_err(|e| e.to_string())?;
    if let Some(f) = report.failed().next() {
        return Err(format!("{} seed {} failed: {:?}", f.label, f.seed, f.error));
    }
    let series = |label: &str| -> &BinnedSeries {
        report.series.iter().find(|s| s.label == label).expect("label present")
    };
    let (sync, asyn) = (series("CI10"), series("Robo-PlaNet"));
    let (Some(sync_final), Some(async_final)) = (sync.final_mean(), asyn.final_mean()) else {
        return Err("a final bin is empty".into());
    };
    // First bin, ending no later than 70% of the budget, whose mean reaches
    // the synchronous final level.
    let reached = asyn
        .bins
        .iter()
        .find(|b| b.mean.is_some_and(|m| m >= sync_final))
        .map(|b| b.hi);
    let fmt = |s: &BinnedSeries| {
        s.bins
            .iter()
            .map(|b| b.mean.map_or("-".into(), |m| format!("{m:.3}")))
            .collect::<Vec<_>>()
            .join(" ")
    };
    check(
        async_final >= sync_final && reached.is_some_and(|t| t <= 0.7 * budget),
        format!(
            "final-bin mean async {async_final:.4} vs sync {sync_final:.4}; async reaches it by {} s \
             (need ≤ {} s); async bins [{}], sync bins [{}]",
            reached.map_or("never".into(), |t| format!("{t:.0}")),
            0.7 * budget,
            fmt(asyn),
            fmt(sync)
        ),
    )
}

// ---------------------------------------------------------------- C5

fn c5() -> Verdict {
    let mcfg = desk_model();
    let env = env_config(mcfg.image_size);
    let episodes: Vec<EpisodeRecord> = (0..10).map(|i| random_episode(&env, i, 500 + i, 100)).collect();
    let mut replay = ReplayBuffer::new(10);
    for ep in &episodes {
        replay.append(ep.clone()).map_err(|e| e.to_string())?;
    }
    let mut cfg = RunConfig::new(Mode::Sync, 1.0).with_image_size(mcfg.image_size);
    cfg.model = mcfg.clone();
    cfg.batch_size = 8;
    let l = cfg.chunk_len;

    // Fixed evaluation set: three chunks per episode, fixed posterior noise.
    let eval = ChunkBatch {
        chunks: episodes
            .iter()
            .flat_map(|ep| {
                let last = ep.len() - l;
                [0, last / 2, last].map(|o| ep.chunk(o, l).expect("in bounds"))
            })
            .collect(),
    };
    let noise = normals(loss_noise_len(&mcfg, eval.batch_size(), l), 9);
    let evaluate = |m: &LatentModel| -> Result<LossBreakdown, String> {
        m.graph().loss(&eval, &noise).map(|r| r.1).map_err(|e| e.to_string())
    };

    let mut learner = Learner::new(&cfg).map_err(|e| e.to_string())?;
    let before = evaluate(learner.model())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        let batch = replay
            .sample_chunks(cfg.batch_size, l, &mut rng)
            .map_err(|e| e.to_string())?;
        learner.update(&batch).map_err(|e| e.to_string())?;
    }
    let after = evaluate(learner.model())?;
    let loss_ratio = after.total / before.total;
    let reward_ratio = after.reward_mse / before.reward_mse;
    check(
        loss_ratio < 0.2 && reward_ratio < 0.1,
        format!(
            "total loss {:.3} → {:.3} ({:.1}%, need < 20%); reward MSE {:.4} → {:.5} ({:.1}%, need < 10%)",
            before.total,
            after.total,
            100.0 * loss_ratio,
            before.reward_mse,
            after.reward_mse,
            100.0 * reward_ratio
        ),
    )
}

// ---------------------------------------------------------------- C6

fn token(id: u64) -> EpisodeRecord {
    let obs = (0..3)
        .map(|_| Observation::from_pixels(1, vec![id as u8; 6]).unwrap())
        .collect();
    EpisodeRecord::new(id, 0, 0.0, obs, vec![Action::zeros(1); 2], vec![0.0; 2], vec![false, true])
        .unwrap()
}

fn take_latest_scripts() -> Result<(), String> {
    use roboplanet::model::ModelSnapshot;
    for script in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(script);
        let (tx, rx) = latest_channel(PARAMS_CHANNEL_CAPACITY);
        let (mut next, mut held) = (1u64, 0u64);
        for _ in 0..rng.random_range(1..40) {
            if rng.random_bool(0.6) {
                for _ in 0..rng.random_range(1..8) {
                    tx.push(ModelSnapshot::new(next, 0, vec![]));
                    next += 1;
                    if tx.len() > PARAMS_CHANNEL_CAPACITY {
                        return Err(format!("script {script}: channel over capacity"));
                    }
                }
            } else {
                if let Some(s) = rx.drain_latest().latest {
                    held = s.version();
                }
                if !rx.is_empty() || held != next - 1 {
                    return Err(format!("script {script}: held {held}, newest {}", next - 1));
                }
            }
        }
    }
    Ok(())
}

fn lossless_interleavings() -> Result<(), String> {
    for trial in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let n = rng.random_range(1..40);
        let (ep_tx, ep_rx) = bounded(rng.random_range(1..6));
        let (batch_tx, batch_rx) = bounded(BATCHES_CHANNEL_CAPACITY);
        let (handle, stop) = stop_signal();
        let stop_after = rng.random_range(0..n + 5);
        let settings = BufferSettings {
            batch_size: 3,
            chunk_len: 2,
            min_episodes: rng.random_range(1..4),
        };
        let report = thread::scope(|s| {
            let buffer = s.spawn(|| {
                buffer_loop(
                    &ep_rx,
                    batch_tx,
                    ReplayBuffer::new(1000),
                    settings,
                    ChaCha8Rng::seed_from_u64(trial),
                    &stop,
                )
            });
            s.spawn(move || while batch_rx.recv_timeout(Duration::from_millis(20)).is_ok() {});
            let mut handle = Some(handle);
            for id in 0..n {
                if id == stop_after {
                    handle.take().map(StopHandle::raise);
                }
                ep_tx.send(token(id)).unwrap();
                if rng.random_bool(0.3) {
                    thread::yield_now();
                }
            }
            drop(ep_tx);
            drop(handle);
            buffer.join().unwrap()
        })
        .map_err(|e| e.to_string())?;
        let mut counts = BTreeMap::new();
        for id in &report.ingested {
            *counts.entry(*id).or_insert(0) += 1;
        }
        if counts.len() != n as usize || counts.values().any(|c| *c != 1) {
            return Err(format!("trial {trial}: ingested {:?} of {n}", report.ingested));
        }
    }
    Ok(())
}

fn tiny_run(mode: Mode, budget_s: f64) -> RunConfig {
    let mut cfg = RunConfig::new(mode, budget_s).with_image_size(8);
    cfg.model = ModelConfig {
        image_size: 8,
        embed_dim: 8,
        deterministic_dim: 8,
        stochastic_dim: 4,
        hidden_dim: 8,
        conv_depth: 2,
        ..ModelConfig::default()
    };
    cfg.planner = PlannerConfig {
        candidates: 20,
        elites: 4,
        iterations: 3,
        horizon: 5,
        ..PlannerConfig::default()
    };
    cfg.batch_size = 4;
    cfg.chunk_len = 5;
    cfg.seed_episodes = 2;
    cfg
}

fn causal_versions() -> Result<(), String> {
    let mut cfg = tiny_run(Mode::Async, 5.0);
    cfg.update_latency_ms = 20.0;
    cfg.snapshot_every = 2;
    let m = run_async(&cfg).map_err(|e| e.to_string())?;
    if m.episodes_produced != m.episodes_ingested {
        return Err("episodes lost between roller and buffer".into());
    }
    if !m.snapshots.iter().any(|s| s.1 > 0) || !m.rows.iter().any(|r| r.model_version > 0) {
        return Err("no snapshot reached the roller".into());
    }
    for w in m.rows.windows(2) {
        if w[1].model_version < w[0].model_version {
            return Err("model version went backwards".into());
        }
    }
    for (row, start) in m.rows.iter().zip(&m.episode_starts) {
        let pushed = m
            .snapshots
            .iter()
            .filter(|(t, _)| t <= start)
            .map(|(_, v)| *v)
            .max()
            .unwrap_or(0);
        if row.model_version > pushed {
            return Err(format!("version {} used before it was pushed", row.model_version));
        }
    }
    Ok(())
}

fn sync_determinism() -> Result<(), String> {
    let mut cfg = tiny_run(Mode::Sync, 30.0);
    cfg.clock = ClockMode::Virtual {
        step_s: 0.01,
        plan_s: 0.02,
        update_s: 0.05,
    };
    cfg.update_latency_ms = 100.0;
    let csv = |m: &RunMetrics| {
        let mut out = Vec::new();
        m.write_csv(&mut out).unwrap();
        out
    };
    let a = run_sync(&cfg).map_err(|e| e.to_string())?;
    let b = run_sync(&cfg).map_err(|e| e.to_string())?;
    if a.total_updates == 0 || csv(&a) != csv(&b) || a != b {
        return Err("two identical sync runs differ".into());
    }
    Ok(())
}

fn replay_chi_square() -> Result<(), String> {
    let cfg = env_config(8);
    let l = 25;
    let mut replay = ReplayBuffer::new(10);
    let lens = [30, 40, 50, 60, 70];
    for (i, len) in lens.iter().enumerate() {
        let mut env = cfg.clone();
        env.touch_threshold = 0.0;
        replay
            .append(random_episode(&env, i as u64, i as u64, *len))
            .map_err(|e| e.to_string())?;
    }
    let mut cells: BTreeMap<(u64, usize), u64> = BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let draws = 100_000;
    for _ in 0..draws / 100 {
        let b = replay.sample_chunks(100, l, &mut rng).map_err(|e| e.to_string())?;
        for c in &b.chunks {
            *cells.entry((c.episode_id, c.offset)).or_insert(0) += 1;
        }
    }
    let mut stat = 0.0;
    let mut k = 0;
    for (i, len) in lens.iter().enumerate() {
        let offsets = len - l + 1;
        let expected = draws as f64 / lens.len() as f64 / offsets as f64;
        for o in 0..offsets {
            let got = *cells.get(&(i as u64, o)).unwrap_or(&0) as f64;
            stat += (got - expected).powi(2) / expected;
            k += 1;
        }
    }
    let critical = ChiSquared::new((k - 1) as f64).unwrap().inverse_cdf(0.99);
    if stat < critical {
        Ok(())
    } else {
        Err(format!("chi-square {stat:.1} ≥ {critical:.1} over {k} cells"))
    }
}

fn c6() -> Verdict {
    let parts: [(&str, fn() -> Result<(), String>); 5] = [
        ("take-latest drain", take_latest_scripts),
        ("lossless ×1000", lossless_interleavings),
        ("causal versions", causal_versions),
        ("sync determinism", sync_determinism),
        ("replay chi-square", replay_chi_square),
    ];
    let mut failures = Vec::new();
    for (name, f) in parts {
        if let Err(e) = f() {
            failures.push(format!("{name}: {e}"));
        }
    }
    let names: Vec<&str> = parts.iter().map(|p| p.0).collect();
    if failures.is_empty() {
        Ok(format!("all of [{}] hold", names.join(", ")))
    } else {
        Err(failures.join("; "))
    }
}

// ---------------------------------------------------------------- C7

fn c7() -> Verdict {
    let model = LatentModel::new(desk_model(), 4).map_err(|e| e.to_string())?;
    let snap = model.snapshot(12);
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &snap).map_err(|e| e.to_string())?;
    let back = read_checkpoint(&mut bytes.as_slice()).map_err(|e| e.to_string())?;
    let bits = |p: &[f64]| p.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    if back != snap || bits(back.params()) != bits(snap.params()) {
        return Err("checkpoint changed in a round trip".into());
    }

    let ep = random_episode(&env_config(16), 3, 3, 100);
    let mut bytes = Vec::new();
    write_episode(&mut bytes, &ep).map_err(|e| e.to_string())?;
    let back = read_episode(&mut bytes.as_slice()).map_err(|e| e.to_string())?;
    let mut again = Vec::new();
    write_episode(&mut again, &back).map_err(|e| e.to_string())?;
    if back != ep || again != bytes {
        return Err("episode changed in a round trip".into());
    }

    let rows = vec![
        MetricsRow {
            wall_clock_s: 0.1 + 0.2,
            total_env_steps: 100,
            episode_reward: 1.0 / 3.0,
            updates: 0,
            model_version: 0,
        },
        MetricsRow {
            wall_clock_s: 12.5,
            total_env_steps: 163,
            episode_reward: 2.0,
            updates: 40,
            model_version: 4,
        },
    ];
    let mut csv = Vec::new();
    write_metrics_csv(&mut csv, &rows).map_err(|e| e.to_string())?;
    let want = format!("{CSV_HEADER}\n0.30000000000000004,100,0.3333333333333333,0,0\n12.5,163,2.0,40,4\n");
    if csv != want.as_bytes() || read_metrics_csv(csv.as_slice()).map_err(|e| e.to_string())? != rows {
        return Err(format!("metrics CSV mismatch: {}", String::from_utf8_lossy(&csv)));
    }

    // 25 points, 6 bins of 20 s over 120 s, grouped by hand.
    let points = [
        (0.0, 1.0), (5.0, 2.0), (10.0, 3.0), (19.999, 6.0),
        (20.0, 10.0), (25.0, 10.0), (30.0, 10.0), (35.0, 10.0), (39.0, 10.0),
        (40.0, -1.0), (41.0, 1.0), (42.0, -1.0), (43.0, 1.0), (44.0, -1.0), (45.0, 1.0),
        (60.0, 2.0), (79.5, 4.0),
        (80.0, 0.0), (85.0, 0.0), (90.0, 0.0), (95.0, 0.0), (99.0, 5.0), (99.999, 7.0),
        (120.5, 100.0), (-1.0, 100.0),
    ];
    let expected = [
        (4, Some(3.0), Some(3.5f64.sqrt())),
        (5, Some(10.0), Some(0.0)),
        (6, Some(0.0), Some(1.0)),
        (2, Some(3.0), Some(1.0)),
        (6, Some(2.0), Some((50.0f64 / 6.0).sqrt())),
        (0, None, None),
    ];
    let bins = bin_points(points, 6, 120.0).map_err(|e| e.to_string())?;
    let got: Vec<_> = bins.iter().map(|b| (b.count, b.mean, b.std)).collect();
    if got != expected {
        return Err(format!("binning {got:?}"));
    }

    // Binning through the CSV path agrees with binning the raw points.
    let dir = out_dir("c7");
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let rows: Vec<MetricsRow> = points
        .iter()
        .enumerate()
        .map(|(i, (t, r))| MetricsRow {
            wall_clock_s: *t,
            total_env_steps: i as u64,
            episode_reward: *r,
            updates: 0,
            model_version: 0,
        })
        .collect();
    let path = dir.join("points.csv");
    let mut f = std::fs::File::create(&path).map_err(|e| e.to_string())?;
    write_metrics_csv(&mut f, &rows).map_err(|e| e.to_string())?;
    drop(f);
    let loaded = load_rows(&path).map_err(|e| e.to_string())?;
    let series = bin_metrics([loaded.as_slice()], 6, 120.0, "x").map_err(|e| e.to_string())?;
    check(
        series.bins == bins,
        "checkpoint, episode and metrics round trips bitwise; 25-point binning oracle exact".into(),
    )
}

// ---------------------------------------------------------------- C8

fn c8() -> Verdict {
    let cfg = EnvConfig::default();
    let bound = reset_noise_bound(&cfg);
    let mut env = ReachEnv::new(cfg.clone()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut widest = 0.0f64;
    for _ in 0..10_000 {
        let obs = env.reset(&mut rng);
        if (obs.width(), obs.height()) != (128, 64) {
            return Err(format!("observation {}×{}", obs.width(), obs.height()));
        }
        let s = env.state().expect("reset");
        for (a, rest) in s.joint_angles.iter().zip(&cfg.rest_pose) {
            widest = widest.max((a - rest).abs());
        }
    }
    if widest > bound + 1e-12 || (bound - 18f64.to_radians()).abs() > 1e-15 {
        return Err(format!("reset offset {widest} beyond ±18°"));
    }

    // Without touch termination every episode lasts exactly 100 steps.
    let mut free = ReachEnv::new(EnvConfig {
        touch_threshold: 0.0,
        ..cfg.clone()
    })
    .map_err(|e| e.to_string())?;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        free.reset(&mut rng);
        let mut steps = 0;
        loop {
            steps += 1;
            let a = Action::new((0..3).map(|_| rng.random_range(-1.0..1.0)).collect());
            if free.step(&a).map_err(|e| e.to_string())?.done {
                break;
            }
            if steps > 100 {
                return Err("episode ran past 100 steps".into());
            }
        }
        if steps != 100 {
            return Err(format!("episode ended after {steps} steps without touching"));
        }
    }

    // Drive the arm onto the cube: the episode ends early on touch.
    let mut env = ReachEnv::new(cfg.clone()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    env.reset(&mut rng);
    let mut state = env.state().unwrap().clone();
    let target = state.cube_position;
    // Search the joint space for a pose whose effector is on the cube.
    let mut best = (f64::INFINITY, state.joint_angles.clone());
    let mut search = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200_000 {
        let q: Vec<f64> = (0..3).map(|_| search.random_range(-3.1..3.1)).collect();
        let p = roboplanet::env::forward_kinematics(&cfg.link_lengths, &q);
        let d = roboplanet::env::distance(p, target);
        if d < best.0 {
            best = (d, q);
        }
    }
    state.joint_angles = best.1;
    state.joint_velocities = vec![0.0; 3];
    env.set_state(state);
    let r = env.step(&Action::zeros(3)).map_err(|e| e.to_string())?;
    check(
        r.touched && r.done && env.state().unwrap().step_index < 100,
        format!(
            "reset within ±{:.1}° (widest {:.2}°), 100-step cap, 128×64 observation, touch ends \
             the episode (distance {:.3})",
            bound.to_degrees(),
            widest.to_degrees(),
            r.distance
        ),
    )
}

// ---------------------------------------------------------------- main

fn main() -> ExitCode {
    let only: Option<Vec<String>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').map(|s| s.trim().to_uppercase()).collect());
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("C8", c8),
        ("C7", c7),
        ("C1", c1),
        ("C2", c2),
        ("C6", c6),
        ("C5", c5),
        ("C3", c3),
        ("C4", c4),
    ];
    let mut results = BTreeMap::new();
    for (id, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.iter().any(|x| x == id)) {
            continue;
        }
        let t = Instant::now();
        let verdict = f();
        let secs = t.elapsed().as_secs_f64();
        let line = match &verdict {
            Ok(d) => format!("{id} PASS ({secs:.0} s) {d}"),
            Err(d) => format!("{id} FAIL ({secs:.0} s) {d}"),
        };
        println!("{line}");
        results.insert(id, verdict.is_ok());
    }
    if results.values().all(|ok| *ok) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
