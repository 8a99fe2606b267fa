mod common;

use std::collections::BTreeMap;
use std::sync::atomic::AtomicU64;
use std::thread;
use std::time::Duration;

use common::*;
use crossbeam_channel::bounded;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roboplanet::env::{Action, Observation};
use roboplanet::model::ModelSnapshot;
use roboplanet::pipeline::*;
use roboplanet::planner::PlannerConfig;
use roboplanet::replay::{EpisodeRecord, ReplayBuffer};

/// Small, fast configuration: 8×8 views, tiny model, short chunks.
fn tiny(mode: Mode, budget_s: f64) -> RunConfig {
    let mut cfg = RunConfig::new(mode, budget_s).with_image_size(8);
    cfg.model = small_model_config(8);
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

fn virtual_clock() -> ClockMode {
    ClockMode::Virtual {
        step_s: 0.01,
        plan_s: 0.02,
        update_s: 0.05,
    }
}

fn snapshot(version: u64) -> ModelSnapshot {
    ModelSnapshot::new(version, 0, vec![version as f64])
}

fn check_rows(m: &RunMetrics) {
    for w in m.rows.windows(2) {
        assert!(w[1].wall_clock_s > w[0].wall_clock_s);
        assert!(w[1].total_env_steps > w[0].total_env_steps);
        assert!(w[1].model_version >= w[0].model_version);
        assert!(w[1].updates >= w[0].updates);
    }
    assert_eq!(m.rows.last().map_or(0, |r| r.total_env_steps), m.total_env_steps);
}

#[derive(Clone, Debug)]
enum Op {
    Push(usize),
    Drain,
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn drain_empties_and_keeps_newest(
        ops in prop::collection::vec(
            prop_oneof![(1usize..8).prop_map(Op::Push), Just(Op::Drain)],
            1..40,
        ),
    ) {
        let (tx, rx) = latest_channel(PARAMS_CHANNEL_CAPACITY);
        let mut next = 1u64;
        let mut held = 0u64;
        for op in ops {
            match op {
                Op::Push(k) => {
                    for _ in 0..k {
                        tx.push(snapshot(next));
                        next += 1;
                        prop_assert!(tx.len() <= PARAMS_CHANNEL_CAPACITY);
                    }
                }
                Op::Drain => {
                    if let Some(s) = rx.drain_latest().latest {
                        held = s.version();
                    }
                    prop_assert!(rx.is_empty());
                    prop_assert_eq!(held, next - 1);
                }
            }
        }
    }
}

#[test]
fn concurrent_drains_never_go_backwards() {
    for seed in 0..20 {
        let (tx, rx) = latest_channel(PARAMS_CHANNEL_CAPACITY);
        let n = 500;
        let writer = thread::spawn(move || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for v in 1..=n {
                tx.push(snapshot(v));
                if rng.random_bool(0.1) {
                    thread::yield_now();
                }
            }
        });
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let mut held = 0;
        loop {
            let d = rx.drain_latest();
            if let Some(s) = d.latest {
                assert!(s.version() > held);
                held = s.version();
            }
            if d.closed {
                break;
            }
            if rng.random_bool(0.3) {
                thread::yield_now();
            }
        }
        writer.join().unwrap();
        assert_eq!(held, n);
    }
}

#[test]
fn roller_adopts_only_the_newest_queued_snapshot() {
    let cfg = {
        let mut c = tiny(Mode::Async, 0.3);
        c.seed_episodes = 1000;
        c
    };
    let roller = Roller::new(&cfg).unwrap();
    let model = roller.model().clone();
    let (params_tx, params_rx) = latest_channel(PARAMS_CHANNEL_CAPACITY);
    for v in 1..=3 {
        params_tx.push(model.snapshot(v));
    }
    let (ep_tx, ep_rx) = bounded(1000);
    let (_handle, stop) = stop_signal();
    let updates = AtomicU64::new(0);
    let report = roller_loop(
        roller,
        WallClock::start(),
        cfg.budget_s,
        &params_rx,
        &ep_tx,
        &stop,
        &updates,
    )
    .unwrap();
    assert!(!report.rows.is_empty());
    assert_eq!(report.roller.version(), 3);
    assert!(params_rx.is_empty());
    assert_eq!(ep_rx.len(), report.rows.len());
}

#[test]
fn seed_episodes_are_random_then_planner_driven() {
    let mut cfg = tiny(Mode::Sync, 40.0);
    cfg.seed_episodes = 5;
    cfg.env.touch_threshold = 0.0;
    cfg.clock = virtual_clock();
    let m = run_sync(&cfg).unwrap();
    assert!(m.rows.len() > 6);
    assert!(m.rows[..5].iter().all(|r| r.model_version == 0 && r.updates == 0));
    assert_eq!(m.rows[5].model_version, 1);
    assert_eq!(m.rows[5].updates, 10);
    // Random episodes cost no planner time on the virtual clock.
    let d0 = m.rows[0].wall_clock_s;
    assert!((d0 - 100.0 * 0.01).abs() < 1e-9);
    check_rows(&m);
}

#[test]
fn sync_runs_are_bitwise_reproducible() {
    let mut cfg = tiny(Mode::Sync, 30.0);
    cfg.clock = virtual_clock();
    cfg.update_latency_ms = 100.0;
    let csv = |m: &RunMetrics| {
        let mut out = Vec::new();
        m.write_csv(&mut out).unwrap();
        out
    };
    let a = run_sync(&cfg).unwrap();
    let b = run_sync(&cfg).unwrap();
    assert!(a.total_updates > 0);
    assert_eq!(csv(&a), csv(&b));
    assert_eq!(a, b);
    cfg.seed = 1;
    assert_ne!(csv(&run_sync(&cfg).unwrap()), csv(&a));
}

#[test]
fn sync_cycle_includes_all_update_latency() {
    let mut cfg = tiny(Mode::Sync, 5.0);
    cfg.update_latency_ms = 100.0;
    cfg.collect_interval = Some(10);
    let m = run_sync(&cfg).unwrap();
    assert!(m.total_updates >= 10);
    // Once training has started, the next episode begins ≥ 10 × 100 ms after
    // the previous one ended.
    let trained: Vec<usize> = (0..m.rows.len() - 1)
        .filter(|i| m.rows[i + 1].updates >= m.rows[*i].updates + 10)
        .collect();
    assert!(!trained.is_empty());
    for i in trained {
        let gap = m.episode_starts[i + 1] - m.rows[i].wall_clock_s;
        assert!(gap >= 1.0, "gap {gap}");
    }
    check_rows(&m);
}

#[test]
fn async_run_is_lossless_and_ordered() {
    let mut cfg = tiny(Mode::Async, 3.0);
    cfg.update_latency_ms = 20.0;
    cfg.snapshot_every = 2;
    let m = run_async(&cfg).unwrap();
    assert!(m.rows.len() >= 5, "{} episodes", m.rows.len());
    assert_eq!(m.episodes_produced, m.episodes_ingested);
    assert!(m.total_updates > 0);
    assert!(m.last_loss.unwrap().is_finite());
    check_rows(&m);
    // Versions used never run ahead of what was pushed before the episode began.
    for (row, start) in m.rows.iter().zip(&m.episode_starts) {
        let pushed = m
            .snapshots
            .iter()
            .filter(|(t, _)| t <= start)
            .map(|(_, v)| *v)
            .max()
            .unwrap_or(0);
        assert!(row.model_version <= pushed);
    }
    assert!(m.snapshots.windows(2).all(|w| w[1].1 > w[0].1));
}

#[test]
fn learner_latency_bounds_update_count() {
    let mut cfg = tiny(Mode::Async, 5.0);
    cfg.update_latency_ms = 50.0;
    let m = run_async(&cfg).unwrap();
    assert!(m.total_updates <= 100, "{}", m.total_updates);
    assert!(m.total_updates > 0);
}

#[test]
fn rollouts_continue_while_learner_sleeps() {
    let steps = |latency| {
        let mut cfg = tiny(Mode::Async, 4.0);
        cfg.update_latency_ms = latency;
        run_async(&cfg).unwrap().total_env_steps as f64
    };
    let (busy, idle) = (steps(0.0), steps(200.0));
    assert!(idle >= 0.9 * busy, "latency 200 ms: {idle} steps, latency 0: {busy}");
}

#[test]
fn async_outpaces_sync_under_latency() {
    let rate = |mode| {
        let mut cfg = tiny(mode, 6.0);
        cfg.update_latency_ms = 100.0;
        if mode == Mode::Async {
            cfg.collect_interval = None;
        }
        let m = run(&cfg).unwrap();
        m.total_env_steps as f64 / m.rows.last().unwrap().wall_clock_s
    };
    let (sync, asynch) = (rate(Mode::Sync), rate(Mode::Async));
    assert!(sync < asynch, "sync {sync:.1} steps/s, async {asynch:.1}");
}

#[test]
fn frozen_learner_leaves_roller_at_nominal_rate() {
    let mut cfg = tiny(Mode::Async, 3.0);
    cfg.learner_frozen = true;
    // Alternate the two measurements and compare medians, so a slow spell on
    // the host does not land on one side only.
    let (mut frozen, mut alone) = (vec![], vec![]);
    for _ in 0..3 {
        let m = run_async(&cfg).unwrap();
        assert_eq!(m.total_updates, 0);
        frozen.push(m.total_env_steps as f64);

        // The same roller alone on this thread for the same budget.
        let mut roller = Roller::new(&cfg).unwrap();
        let mut clock = WallClock::start();
        while clock.now() < cfg.budget_s {
            roller.collect(&mut clock).unwrap();
        }
        alone.push(roller.total_steps() as f64);
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[1]
    };
    let (got, want) = (median(&mut frozen), median(&mut alone));
    assert!((got - want).abs() <= 0.1 * want, "frozen {frozen:?}, alone {alone:?}");
}

#[test]
fn diverging_learner_surfaces_an_error() {
    let mut cfg = tiny(Mode::Async, 20.0);
    cfg.adam.learning_rate = 1e300;
    cfg.adam.clip_norm = None;
    let t = std::time::Instant::now();
    let err = run_async(&cfg).unwrap_err();
    assert!(matches!(err, PipelineError::NonFiniteLoss { .. }), "{err}");
    assert!(t.elapsed().as_secs_f64() < 15.0);
}

#[test]
fn config_validation() {
    let ok = tiny(Mode::Sync, 1.0);
    assert!(ok.validate().is_ok());
    let mut c = ok.clone();
    c.collect_interval = None;
    assert!(c.validate().is_err());
    let mut c = tiny(Mode::Async, 1.0);
    c.collect_interval = Some(7);
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.budget_s = 0.0;
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.model.image_size = 16;
    assert!(c.validate().is_err());
    let mut c = tiny(Mode::Async, 1.0);
    c.clock = virtual_clock();
    assert!(c.validate().is_err());
    let mut c = ok;
    c.chunk_len = 1;
    assert!(c.validate().is_err());
}

#[test]
fn learner_overfits_a_repeated_batch() {
    let cfg = tiny(Mode::Sync, 1.0);
    let mut learner = Learner::new(&cfg).unwrap();
    let batch = chunk_batch(8, 4, 5, 3);
    let losses: Vec<f64> = (0..50)
        .map(|_| learner.update(&batch).unwrap().total)
        .collect();
    let windows: Vec<f64> = losses.chunks(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    assert!(windows.windows(2).all(|w| w[1] < w[0]), "{windows:?}");
    assert_eq!(learner.updates(), 50);
    let s = learner.next_snapshot();
    assert_eq!((s.version(), learner.next_snapshot().version()), (1, 2));
}

#[test]
fn metrics_csv_round_trips() {
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
    let mut bytes = Vec::new();
    write_metrics_csv(&mut bytes, &rows).unwrap();
    let text = String::from_utf8(bytes.clone()).unwrap();
    assert_eq!(
        text,
        format!("{CSV_HEADER}\n0.30000000000000004,100,0.3333333333333333,0,0\n12.5,163,2.0,40,4\n")
    );
    assert_eq!(read_metrics_csv(bytes.as_slice()).unwrap(), rows);
    assert!(read_metrics_csv("a,b\n1,2\n".as_bytes()).is_err());
}

/// Two-step episode tagged with `id` in its pixels.
fn token(id: u64) -> EpisodeRecord {
    let obs = (0..3)
        .map(|_| Observation::from_pixels(1, vec![id as u8; 6]).unwrap())
        .collect();
    EpisodeRecord::new(
        id,
        0,
        0.0,
        obs,
        vec![Action::zeros(1); 2],
        vec![0.0; 2],
        vec![false, true],
    )
    .unwrap()
}

#[test]
fn buffer_is_lossless_under_random_interleavings() {
    for trial in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let n = rng.random_range(1..40);
        let ep_cap = rng.random_range(1..6);
        let consumer_pause = rng.random_range(0..3);
        let stop_after = rng.random_range(0..n + 5);
        let (ep_tx, ep_rx) = bounded(ep_cap);
        let (batch_tx, batch_rx) = bounded(BATCHES_CHANNEL_CAPACITY);
        let (handle, stop) = stop_signal();
        let settings = BufferSettings {
            batch_size: 3,
            chunk_len: 2,
            min_episodes: rng.random_range(1..4),
        };

        let (report, received) = thread::scope(|s| {
            let buffer = s.spawn(|| {
                buffer_loop(
                    &ep_rx,
                    batch_tx,
                    ReplayBuffer::new(1000),
                    settings,
                    ChaCha8Rng::seed_from_u64(trial),
                    &stop,
                )
                .unwrap()
            });
            let consumer = s.spawn(move || {
                let mut got = 0;
                let mut prng = ChaCha8Rng::seed_from_u64(trial + 7);
                while let Ok(b) = batch_rx.recv_timeout(Duration::from_millis(20)) {
                    assert_eq!(b.batch_size(), 3);
                    got += 1;
                    for _ in 0..prng.random_range(0..=consumer_pause) {
                        thread::yield_now();
                    }
                }
                got
            });
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
            (buffer.join().unwrap(), consumer.join().unwrap())
        });

        let mut counts = BTreeMap::new();
        for id in &report.ingested {
            *counts.entry(*id).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), n as usize, "trial {trial}");
        assert!(counts.values().all(|c| *c == 1));
        assert_eq!(report.replay.len(), n as usize);
        assert!(received <= report.sent.len());
        for (known, sources) in &report.sent {
            assert!(*known >= settings.min_episodes);
            for id in sources {
                assert!(report.ingested[..*known].contains(id), "trial {trial}");
            }
        }
    }
}

#[test]
fn buffer_sends_nothing_before_ready() {
    let (ep_tx, ep_rx) = bounded(64);
    let (batch_tx, batch_rx) = bounded(BATCHES_CHANNEL_CAPACITY);
    let (_handle, stop) = stop_signal();
    let settings = BufferSettings {
        batch_size: 2,
        chunk_len: 3,
        min_episodes: 2,
    };
    // Two-step episodes are never long enough for chunks of three.
    for id in 0..10 {
        ep_tx.send(token(id)).unwrap();
    }
    drop(ep_tx);
    let report = buffer_loop(
        &ep_rx,
        batch_tx,
        ReplayBuffer::new(100),
        settings,
        ChaCha8Rng::seed_from_u64(0),
        &stop,
    )
    .unwrap();
    assert_eq!(report.ingested.len(), 10);
    assert!(report.sent.is_empty());
    assert!(batch_rx.try_recv().is_err());
}

#[test]
fn batches_in_flight_never_exceed_capacity() {
    let (ep_tx, ep_rx) = bounded(64);
    let (batch_tx, batch_rx) = bounded(BATCHES_CHANNEL_CAPACITY);
    let (handle, stop) = stop_signal();
    let settings = BufferSettings {
        batch_size: 2,
        chunk_len: 2,
        min_episodes: 1,
    };
    for id in 0..10 {
        ep_tx.send(token(id)).unwrap();
    }
    thread::scope(|s| {
        let buffer = s.spawn(|| {
            buffer_loop(
                &ep_rx,
                batch_tx,
                ReplayBuffer::new(100),
                settings,
                ChaCha8Rng::seed_from_u64(1),
                &stop,
            )
            .unwrap()
        });
        for _ in 0..50 {
            assert!(batch_rx.len() <= BATCHES_CHANNEL_CAPACITY);
            thread::sleep(Duration::from_millis(1));
        }
        assert_eq!(batch_rx.len(), BATCHES_CHANNEL_CAPACITY);
        handle.raise();
        drop(ep_tx);
        let report = buffer.join().unwrap();
        assert_eq!(report.ingested.len(), 10);
        assert_eq!(report.sent.len(), BATCHES_CHANNEL_CAPACITY);
    });
}
