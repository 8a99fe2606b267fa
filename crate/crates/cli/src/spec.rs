use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use roboplanet::diff::AdamConfig;
use roboplanet::env::{EnvConfig, RewardMode};
use roboplanet::model::ModelConfig;
use roboplanet::pipeline::{ClockMode, Mode, RunConfig};
use roboplanet::planner::PlannerConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_BINS: usize = 10;
pub const DEFAULT_COLLECT_INTERVAL: usize = 10;

/// One line of an experiment: a mode and its knobs, repeated over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collect_interval: Option<usize>,
    pub seeds: Vec<u64>,
    pub budget_s: f64,
    #[serde(default)]
    pub update_latency_ms: f64,
    #[serde(default)]
    pub reward_mode: RewardMode,
}

impl RunSpec {
    /// Plot label: `CI05`/`CI10`/`CI20` for sync runs, `Robo-PlaNet` for async.
    pub fn label(&self) -> String {
        match (self.mode, self.collect_interval) {
            (Mode::Async, _) => "Robo-PlaNet".into(),
            (Mode::Sync, c) => format!("CI{:02}", c.unwrap_or(DEFAULT_COLLECT_INTERVAL)),
        }
    }
}

/// Everything shared by all runs of an experiment besides the per-run knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Settings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed_episodes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chunk_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replay_capacity: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explore_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub env: Option<EnvConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub planner: Option<PlannerConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adam: Option<AdamConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clock: Option<ClockMode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub runs: Vec<RunSpec>,
    pub out: PathBuf,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub settings: Settings,
    /// Run the (run, seed) pairs concurrently. Only for invariant checks:
    /// wall-clock comparisons must not share cores.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub parallel_runs: bool,
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

/// Values given on the command line; each one overrides the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub collect_interval: Option<usize>,
    pub seeds: Vec<u64>,
    pub budget_s: Option<f64>,
    pub update_latency_ms: Option<f64>,
    pub reward_mode: Option<RewardMode>,
    pub bins: Option<usize>,
    pub out: Option<PathBuf>,
    pub parallel_runs: bool,
}

fn usage(key: &str, detail: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{key}: {detail}"))
}

/// Reads the spec from `file` (if any) and applies `args` on top. Without a
/// file the flags must describe a single run.
pub fn parse_config(args: &Overrides, file: Option<&Path>) -> Result<ExperimentSpec, CliError> {
    let mut spec = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage("config", format!("{}: {e}", path.display())))?;
            serde_json::from_str::<ExperimentSpec>(&text)
                .map_err(|e| usage("config", format!("{}: {e}", path.display())))?
        }
        None => {
            let mode = args.mode.ok_or_else(|| usage("--mode", "required"))?;
            let budget_s = args.budget_s.ok_or_else(|| usage("--budget-s", "required"))?;
            ExperimentSpec {
                runs: vec![RunSpec {
                    mode,
                    collect_interval: None,
                    seeds: vec![0],
                    budget_s,
                    update_latency_ms: 0.0,
                    reward_mode: RewardMode::State,
                }],
                out: PathBuf::from("out"),
                bins: DEFAULT_BINS,
                settings: Settings::default(),
                parallel_runs: false,
            }
        }
    };
    for run in &mut spec.runs {
        if let Some(m) = args.mode {
            run.mode = m;
        }
        if let Some(c) = args.collect_interval {
            run.collect_interval = Some(c);
        }
        if !args.seeds.is_empty() {
            run.seeds = args.seeds.clone();
        }
        if let Some(b) = args.budget_s {
            run.budget_s = b;
        }
        if let Some(l) = args.update_latency_ms {
            run.update_latency_ms = l;
        }
        if let Some(r) = args.reward_mode {
            run.reward_mode = r;
        }
        if run.mode == Mode::Sync && run.collect_interval.is_none() {
            run.collect_interval = Some(DEFAULT_COLLECT_INTERVAL);
        }
    }
    if let Some(b) = args.bins {
        spec.bins = b;
    }
    if let Some(o) = &args.out {
        spec.out = o.clone();
    }
    spec.parallel_runs |= args.parallel_runs;
    validate(&spec)?;
    Ok(spec)
}

pub fn validate(spec: &ExperimentSpec) -> Result<(), CliError> {
    if spec.runs.is_empty() {
        return Err(usage("runs", "at least one run is needed"));
    }
    if spec.bins < 1 {
        return Err(usage("--bins", "must be at least 1"));
    }
    let mut labels = BTreeSet::new();
    for run in &spec.runs {
        if !(run.budget_s > 0.0 && run.budget_s.is_finite()) {
            return Err(usage("--budget-s", format!("must be positive, got {}", run.budget_s)));
        }
        if !(run.update_latency_ms >= 0.0 && run.update_latency_ms.is_finite()) {
            return Err(usage("--update-latency-ms", "must be non-negative"));
        }
        match (run.mode, run.collect_interval) {
            (Mode::Async, Some(_)) => {
                return Err(usage("--collect-interval", "only applies to --mode sync"))
            }
            (Mode::Sync, Some(0)) => return Err(usage("--collect-interval", "must be positive")),
            _ => {}
        }
        if run.seeds.is_empty() {
            return Err(usage("--seed", "each run needs at least one seed"));
        }
        let distinct: BTreeSet<_> = run.seeds.iter().collect();
        if distinct.len() != run.seeds.len() {
            return Err(usage("--seed", "seeds must be distinct within a run"));
        }
        if !labels.insert(run.label()) {
            return Err(usage("runs", format!("two runs share the label {}", run.label())));
        }
        for seed in &run.seeds {
            run_config(spec, run, *seed)
                .validate()
                .map_err(|e| usage("settings", e))?;
        }
    }
    Ok(())
}

/// Full pipeline configuration for one (run, seed).
pub fn run_config(spec: &ExperimentSpec, run: &RunSpec, seed: u64) -> RunConfig {
    let s = &spec.settings;
    let mut cfg = RunConfig::new(run.mode, run.budget_s);
    if let Some(env) = &s.env {
        cfg.env = env.clone();
    }
    if let Some(model) = &s.model {
        cfg.model = model.clone();
    }
    if let Some(size) = s.image_size {
        cfg = cfg.with_image_size(size);
    }
    if let Some(p) = &s.planner {
        cfg.planner = p.clone();
    }
    if let Some(a) = &s.adam {
        cfg.adam = a.clone();
    }
    if let Some(c) = s.clock {
        cfg.clock = c;
    }
    cfg.seed_episodes = s.seed_episodes.unwrap_or(cfg.seed_episodes);
    cfg.snapshot_every = s.snapshot_every.unwrap_or(cfg.snapshot_every);
    cfg.batch_size = s.batch_size.unwrap_or(cfg.batch_size);
    cfg.chunk_len = s.chunk_len.unwrap_or(cfg.chunk_len);
    cfg.replay_capacity = s.replay_capacity.unwrap_or(cfg.replay_capacity);
    cfg.explore_std = s.explore_std.unwrap_or(cfg.explore_std);
    cfg.collect_interval = match run.mode {
        Mode::Sync => Some(run.collect_interval.unwrap_or(DEFAULT_COLLECT_INTERVAL)),
        Mode::Async => None,
    };
    cfg.update_latency_ms = run.update_latency_ms;
    cfg.env.reward_mode = run.reward_mode;
    cfg.seed = seed;
    cfg
}
