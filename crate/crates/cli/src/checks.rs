//! Quick self-checks behind `roboplanet check`. The full suites live in the
//! crates' test targets; these are the ones cheap enough to run anywhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roboplanet::env::{reset_noise_bound, Action, EnvConfig, ReachEnv};
use roboplanet::pipeline::{latest_channel, read_metrics_csv, write_metrics_csv, MetricsRow};
use roboplanet::planner::{plan, PlannerConfig};

use crate::report::{bin_index, bin_points};

pub struct Check {
    pub name: &'static str,
    pub run: fn() -> Result<(), String>,
}

pub const CHECKS: &[Check] = &[
    Check { name: "env-reset-within-18deg", run: env_reset_bound },
    Check { name: "env-100-step-cap", run: env_step_cap },
    Check { name: "env-observation-128x64", run: env_observation_shape },
    Check { name: "planner-quadratic-optimum", run: planner_quadratic },
    Check { name: "params-take-latest", run: take_latest },
    Check { name: "binning-right-open", run: binning_edges },
    Check { name: "metrics-csv-round-trip", run: csv_round_trip },
];

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn env_reset_bound() -> Result<(), String> {
    let cfg = EnvConfig::default();
    let bound = reset_noise_bound(&cfg);
    let mut env = ReachEnv::new(cfg.clone()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..1000 {
        env.reset(&mut rng);
        let s = env.state().expect("reset");
        for (a, rest) in s.joint_angles.iter().zip(&cfg.rest_pose) {
            ensure((a - rest).abs() <= bound + 1e-12, || {
                format!("offset {} beyond {bound}", a - rest)
            })?;
        }
    }
    Ok(())
}

fn env_step_cap() -> Result<(), String> {
    let cfg = EnvConfig {
        touch_threshold: 0.0,
        ..EnvConfig::default()
    };
    let dim = cfg.joint_count();
    let mut env = ReachEnv::new(cfg).map_err(|e| e.to_string())?;
    env.reset(&mut ChaCha8Rng::seed_from_u64(1));
    let mut steps = 0;
    loop {
        steps += 1;
        if env.step(&Action::zeros(dim)).map_err(|e| e.to_string())?.done {
            break;
        }
        ensure(steps < 1000, || "episode never ended".into())?;
    }
    ensure(steps == 100, || format!("episode ended after {steps} steps"))
}

fn env_observation_shape() -> Result<(), String> {
    let mut env = ReachEnv::new(EnvConfig::default()).map_err(|e| e.to_string())?;
    let obs = env.reset(&mut ChaCha8Rng::seed_from_u64(2));
    ensure(obs.width() == 128 && obs.height() == 64, || {
        format!("observation is {}×{}", obs.width(), obs.height())
    })
}

fn planner_quadratic() -> Result<(), String> {
    let cfg = PlannerConfig {
        action_dim: 1,
        ..PlannerConfig::default()
    };
    let n = cfg.sequence_len();
    let mut scorer = |seqs: &[f64], c: usize, _h: usize| -> Vec<f64> {
        (0..c).map(|i| -(seqs[i * n] - 0.3).powi(2)).collect()
    };
    let r = plan(&mut scorer, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).map_err(|e| e.to_string())?;
    let a = r.action.as_slice()[0];
    ensure((a - 0.3).abs() < 0.05, || format!("first action {a}"))
}

fn take_latest() -> Result<(), String> {
    let (tx, rx) = latest_channel(4);
    for v in 1..=3u64 {
        tx.push(v);
    }
    let d = rx.drain_latest();
    ensure(d.latest == Some(3) && d.discarded == 2 && rx.is_empty(), || {
        format!("drained {:?}, discarded {}", d.latest, d.discarded)
    })
}

fn binning_edges() -> Result<(), String> {
    let cases = [(0.0, 0), (9.999, 0), (10.0, 1), (90.0, 9), (100.0, 9)];
    for (t, want) in cases {
        ensure(bin_index(t, 10, 100.0) == Some(want), || {
            format!("t={t} went to {:?}", bin_index(t, 10, 100.0))
        })?;
    }
    let bins = bin_points([(5.0, 2.0), (6.0, 4.0)], 10, 100.0).map_err(|e| e.to_string())?;
    ensure(
        bins[0].mean == Some(3.0) && bins[0].std == Some(1.0) && bins[1].mean.is_none(),
        || format!("{:?}", &bins[..2]),
    )
}

fn csv_round_trip() -> Result<(), String> {
    let rows = vec![
        MetricsRow {
            wall_clock_s: 1.25,
            total_env_steps: 100,
            episode_reward: 0.1 + 0.2,
            updates: 0,
            model_version: 0,
        },
        MetricsRow {
            wall_clock_s: 2.5,
            total_env_steps: 163,
            episode_reward: 1.0 / 3.0,
            updates: 40,
            model_version: 4,
        },
    ];
    let mut bytes = Vec::new();
    write_metrics_csv(&mut bytes, &rows).map_err(|e| e.to_string())?;
    let back = read_metrics_csv(bytes.as_slice()).map_err(|e| e.to_string())?;
    ensure(back == rows, || format!("{back:?}"))
}

/// Runs every check, printing one line each. Returns the number of failures.
pub fn run_checks() -> usize {
    let mut failed = 0;
    for c in CHECKS {
        match (c.run)() {
            Ok(()) => println!("PASS {}", c.name),
            Err(e) => {
                failed += 1;
                println!("FAIL {}: {e}", c.name);
            }
        }
    }
    failed
}
