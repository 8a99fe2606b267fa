use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use roboplanet::env::RewardMode;
use roboplanet::Mode;
use roboplanet_cli::experiment::{replot_dir, run_experiment, ExperimentReport};
use roboplanet_cli::spec::{parse_config, Overrides};
use roboplanet_cli::{checks, CliError};

#[derive(Parser)]
#[command(name = "roboplanet", version, about = "Sync and async latent-planning runs on the reaching task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One run, configured by flags (and optionally a config file).
    Run(RunArgs),
    /// Every run of a JSON spec file, then summary and plot.
    Sweep(SweepArgs),
    /// Re-bin and re-plot an output directory from its CSVs.
    Plot(PlotArgs),
    /// Quick oracle and invariant checks.
    Check,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sync,
    Async,
}

#[derive(Clone, Copy, ValueEnum)]
enum RewardArg {
    State,
    Pixel,
}

#[derive(Args)]
struct Flags {
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    collect_interval: Option<usize>,
    /// Repeat for several seeds.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long)]
    budget_s: Option<f64>,
    #[arg(long)]
    update_latency_ms: Option<f64>,
    #[arg(long, value_enum)]
    reward_mode: Option<RewardArg>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run (run, seed) pairs concurrently; not for wall-clock comparisons.
    #[arg(long)]
    parallel_runs: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Args)]
struct SweepArgs {
    spec: PathBuf,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Args)]
struct PlotArgs {
    /// Output directory of an earlier run or sweep.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    bins: Option<usize>,
}

impl Flags {
    fn overrides(&self) -> Overrides {
        Overrides {
            mode: self.mode.map(|m| match m {
                ModeArg::Sync => Mode::Sync,
                ModeArg::Async => Mode::Async,
            }),
            collect_interval: self.collect_interval,
            seeds: self.seeds.clone(),
            budget_s: self.budget_s,
            update_latency_ms: self.update_latency_ms,
            reward_mode: self.reward_mode.map(|r| match r {
                RewardArg::State => RewardMode::State,
                RewardArg::Pixel => RewardMode::Pixel,
            }),
            bins: self.bins,
            out: self.out.clone(),
            parallel_runs: self.parallel_runs,
        }
    }
}

fn finish(report: ExperimentReport) -> Result<(), CliError> {
    for s in &report.series {
        let last = s
            .final_mean()
            .map(|m| format!("{m:.4}"))
            .unwrap_or_else(|| "empty".into());
        println!("{}: final-bin mean reward {last}", s.label);
    }
    println!("wrote {}", report.out.display());
    let failed: Vec<String> = report
        .failed()
        .map(|r| format!("{} seed {}: {}", r.label, r.seed, r.error.as_deref().unwrap_or("?")))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Run(failed.join("; ")))
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(a) => {
            let spec = parse_config(&a.flags.overrides(), a.config.as_deref())?;
            if spec.runs.len() != 1 {
                return Err(CliError::Usage("run: config has several runs; use sweep".into()));
            }
            finish(run_experiment(&spec)?)
        }
        Command::Sweep(a) => finish(run_experiment(&parse_config(
            &a.flags.overrides(),
            Some(&a.spec),
        )?)?),
        Command::Plot(a) => finish(replot_dir(&a.out, a.bins)?),
        Command::Check => match checks::run_checks() {
            0 => Ok(()),
            n => Err(CliError::Run(format!("{n} check(s) failed"))),
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
