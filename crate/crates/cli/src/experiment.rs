//! Runs every (run, seed) of a spec and writes its artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use roboplanet::pipeline::{self, read_metrics_csv, MetricsRow, RunMetrics};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::report::{bin_metrics, render_plot, summary_csv, BinnedSeries};
use crate::spec::{run_config, ExperimentSpec};
use crate::{io_err, CliError};

pub const CONFIG_FILE: &str = "config.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const PLOT_FILE: &str = "plot.svg";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub label: String,
    pub seed: u64,
    pub csv: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub episodes: usize,
    pub total_env_steps: u64,
    pub total_updates: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub runs: Vec<RunOutcome>,
    /// File name → sha256 hex of its bytes.
    pub files: BTreeMap<String, String>,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub out: PathBuf,
    pub manifest: Manifest,
    pub series: Vec<BinnedSeries>,
}

impl ExperimentReport {
    pub fn failed(&self) -> impl Iterator<Item = &RunOutcome> {
        self.manifest.runs.iter().filter(|r| !r.ok)
    }
}

pub fn csv_name(label: &str, seed: u64) -> String {
    format!("{label}_seed{seed}.csv")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

struct Job {
    label: String,
    seed: u64,
    config: roboplanet::RunConfig,
}

fn jobs(spec: &ExperimentSpec) -> Vec<Job> {
    spec.runs
        .iter()
        .flat_map(|run| {
            run.seeds.iter().map(move |&seed| Job {
                label: run.label(),
                seed,
                config: run_config(spec, run, seed),
            })
        })
        .collect()
}

fn execute(job: &Job) -> Result<RunMetrics, String> {
    eprintln!("[{} seed {}] start ({} s)", job.label, job.seed, job.config.budget_s);
    let r = pipeline::run(&job.config).map_err(|e| e.to_string());
    match &r {
        Ok(m) => eprintln!(
            "[{} seed {}] done: {} episodes, {} env steps, {} updates",
            job.label,
            job.seed,
            m.rows.len(),
            m.total_env_steps,
            m.total_updates
        ),
        Err(e) => eprintln!("[{} seed {}] failed: {e}", job.label, job.seed),
    }
    r
}

/// Executes the spec and writes, under `spec.out`: the resolved config, one
/// metrics CSV per (run, seed), the binned summary, the plot and a manifest.
/// A failed run is recorded in the manifest and does not stop the others.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport, CliError> {
    crate::spec::validate(spec)?;
    let out = spec.out.clone();
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    let resolved = serde_json::to_string_pretty(spec).expect("spec serializes");
    write(&out.join(CONFIG_FILE), format!("{resolved}\n").as_bytes())?;

    let jobs = jobs(spec);
    let results: Vec<Result<RunMetrics, String>> = if spec.parallel_runs {
        std::thread::scope(|s| {
            let handles: Vec<_> = jobs.iter().map(|j| s.spawn(move || execute(j))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err("run panicked".into())))
                .collect()
        })
    } else {
        jobs.iter().map(execute).collect()
    };

    let mut runs = Vec::new();
    for (job, result) in jobs.iter().zip(results) {
        let csv = csv_name(&job.label, job.seed);
        let outcome = match result {
            Ok(m) => {
                let mut bytes = Vec::new();
                m.write_csv(&mut bytes)
                    .map_err(|e| CliError::Io(format!("{csv}: {e}")))?;
                write(&out.join(&csv), &bytes)?;
                RunOutcome {
                    label: job.label.clone(),
                    seed: job.seed,
                    csv,
                    ok: true,
                    error: None,
                    episodes: m.rows.len(),
                    total_env_steps: m.total_env_steps,
                    total_updates: m.total_updates,
                }
            }
            Err(e) => RunOutcome {
                label: job.label.clone(),
                seed: job.seed,
                csv,
                ok: false,
                error: Some(e),
                episodes: 0,
                total_env_steps: 0,
                total_updates: 0,
            },
        };
        runs.push(outcome);
    }

    let series = replot(spec, &out, &runs)?;
    let manifest = write_manifest(&out, runs)?;
    Ok(ExperimentReport {
        out,
        manifest,
        series,
    })
}

/// Re-reads the per-run CSVs of successful runs and writes summary and plot.
fn replot(
    spec: &ExperimentSpec,
    out: &Path,
    runs: &[RunOutcome],
) -> Result<Vec<BinnedSeries>, CliError> {
    let mut series = Vec::new();
    for run in &spec.runs {
        let label = run.label();
        let mut per_seed = Vec::new();
        for r in runs.iter().filter(|r| r.label == label && r.ok) {
            per_seed.push(load_rows(&out.join(&r.csv))?);
        }
        series.push(bin_metrics(
            per_seed.iter().map(Vec::as_slice),
            spec.bins,
            run.budget_s,
            &label,
        )?);
    }
    write(&out.join(SUMMARY_FILE), summary_csv(&series).as_bytes())?;
    write(&out.join(PLOT_FILE), render_plot(&series)?.as_bytes())?;
    Ok(series)
}

pub fn load_rows(path: &Path) -> Result<Vec<MetricsRow>, CliError> {
    let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_metrics_csv(f).map_err(|e| io_err(path, e))
}

fn write_manifest(out: &Path, runs: Vec<RunOutcome>) -> Result<Manifest, CliError> {
    let mut names: Vec<String> = vec![CONFIG_FILE.into(), SUMMARY_FILE.into(), PLOT_FILE.into()];
    names.extend(runs.iter().filter(|r| r.ok).map(|r| r.csv.clone()));
    let mut files = BTreeMap::new();
    for name in names {
        let path = out.join(&name);
        let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
        files.insert(name, sha256_hex(&bytes));
    }
    let manifest = Manifest { runs, files };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(&out.join(MANIFEST_FILE), format!("{text}\n").as_bytes())?;
    Ok(manifest)
}

/// Rebuilds summary, plot and manifest of an existing output directory from
/// its resolved config and CSVs, optionally with a different bin count.
pub fn replot_dir(out: &Path, bins: Option<usize>) -> Result<ExperimentReport, CliError> {
    let cfg_path = out.join(CONFIG_FILE);
    let text = fs::read_to_string(&cfg_path).map_err(|e| io_err(&cfg_path, e))?;
    let mut spec: ExperimentSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", cfg_path.display())))?;
    if let Some(b) = bins {
        spec.bins = b;
    }
    spec.out = out.to_path_buf();
    crate::spec::validate(&spec)?;

    let man_path = out.join(MANIFEST_FILE);
    let runs = match fs::read_to_string(&man_path) {
        Ok(t) => {
            serde_json::from_str::<Manifest>(&t)
                .map_err(|e| io_err(&man_path, e))?
                .runs
        }
        // No manifest: take whichever CSVs exist.
        Err(_) => jobs(&spec)
            .iter()
            .map(|j| {
                let csv = csv_name(&j.label, j.seed);
                let ok = out.join(&csv).exists();
                RunOutcome {
                    label: j.label.clone(),
                    seed: j.seed,
                    csv,
                    ok,
                    error: (!ok).then(|| "metrics file missing".into()),
                    episodes: 0,
                    total_env_steps: 0,
                    total_updates: 0,
                }
            })
            .collect(),
    };
    let series = replot(&spec, out, &runs)?;
    let manifest = write_manifest(out, runs)?;
    Ok(ExperimentReport {
        out: out.to_path_buf(),
        manifest,
        series,
    })
}
