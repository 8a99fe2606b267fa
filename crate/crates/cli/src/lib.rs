//! Experiment runner for the reaching agent: config parsing, sync/async runs
//! over seeds, wall-clock binning, CSV and SVG output.

pub mod checks;
pub mod experiment;
pub mod report;
pub mod spec;

use thiserror::Error;

pub use experiment::{run_experiment, ExperimentReport, Manifest, RunOutcome};
pub use report::{bin_metrics, emit_plot, Bin, BinnedSeries};
pub use spec::{parse_config, ExperimentSpec, Overrides, RunSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("run failed: {0}")]
    Run(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Run(_) | CliError::Io(_) => 2,
        }
    }
}

pub(crate) fn io_err(path: &std::path::Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}
