use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::model::LossBreakdown;

pub const CSV_HEADER: &str = "wall_clock_s,total_env_steps,episode_reward,updates,model_version";

/// One finished episode as seen by the roller.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub wall_clock_s: f64,
    pub total_env_steps: u64,
    /// Mean per-step reward of the episode.
    pub episode_reward: f64,
    /// Learner updates completed when the episode finished.
    pub updates: u64,
    /// Snapshot version that drove the episode; 0 for the initial model.
    pub model_version: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub rows: Vec<MetricsRow>,
    pub total_env_steps: u64,
    pub total_updates: u64,
    /// Episode ids in the order the roller produced them.
    pub episodes_produced: Vec<u64>,
    /// Episode ids in the order the replay buffer ingested them.
    pub episodes_ingested: Vec<u64>,
    /// Wall-clock start of every episode, aligned with `rows`.
    pub episode_starts: Vec<f64>,
    /// `(time, version)` of each snapshot handed to the roller, stamped just
    /// before the hand-off.
    pub snapshots: Vec<(f64, u64)>,
    pub last_loss: Option<LossBreakdown>,
}

impl RunMetrics {
    pub fn write_csv(&self, w: impl Write) -> Result<(), csv::Error> {
        write_metrics_csv(w, &self.rows)
    }
}

pub fn write_metrics_csv(w: impl Write, rows: &[MetricsRow]) -> Result<(), csv::Error> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .has_headers(false)
        .from_writer(w);
    out.write_record(CSV_HEADER.split(','))?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_metrics_csv(r: impl Read) -> Result<Vec<MetricsRow>, csv::Error> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != CSV_HEADER {
        return Err(csv::Error::from(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("unexpected metrics header {:?}", header.join(",")),
        )));
    }
    rdr.deserialize().collect()
}
