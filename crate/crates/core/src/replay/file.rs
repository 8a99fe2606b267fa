//! Episode file: a fixed header followed by packed little-endian arrays.
//!
//! ```text
//! magic "RPEP" | version u32 | T u64 | C u64 | H u64 | W u64 | action_dim u64
//! | id u64 | seed u64 | timestamp f64
//! | pixels u8[(T+1)·C·H·W] | actions f64[T·action_dim] | rewards f64[T] | dones u8[T]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EpisodeRecord, ReplayError, MAX_EPISODE_LEN};
use crate::env::{Action, Observation, CHANNELS};

pub const EPISODE_MAGIC: [u8; 4] = *b"RPEP";
pub const EPISODE_FORMAT_VERSION: u32 = 1;

pub fn write_episode(w: &mut impl Write, ep: &EpisodeRecord) -> Result<(), ReplayError> {
    let first = &ep.observations()[0];
    w.write_all(&EPISODE_MAGIC)?;
    w.write_all(&EPISODE_FORMAT_VERSION.to_le_bytes())?;
    for v in [
        ep.len(),
        first.channels(),
        first.height(),
        first.width(),
        ep.action_dim(),
    ] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    w.write_all(&ep.id().to_le_bytes())?;
    w.write_all(&ep.seed().to_le_bytes())?;
    w.write_all(&ep.timestamp().to_le_bytes())?;
    for o in ep.observations() {
        w.write_all(o.pixels())?;
    }
    for a in ep.actions() {
        for v in a.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for r in ep.rewards() {
        w.write_all(&r.to_le_bytes())?;
    }
    let dones: Vec<u8> = ep.dones().iter().map(|d| u8::from(*d)).collect();
    w.write_all(&dones)?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64, ReplayError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64, ReplayError> {
    Ok(f64::from_bits(read_u64(r)?))
}

pub fn read_episode(r: &mut impl Read) -> Result<EpisodeRecord, ReplayError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != EPISODE_MAGIC {
        return Err(ReplayError::Format(format!("bad magic {magic:?}")));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != EPISODE_FORMAT_VERSION {
        return Err(ReplayError::Format(format!(
            "unsupported version {version}"
        )));
    }
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = usize::try_from(read_u64(r)?)
            .map_err(|_| ReplayError::Format("dimension overflow".into()))?;
    }
    let [t, c, h, w, action_dim] = dims;
    if t == 0
        || t > MAX_EPISODE_LEN
        || c != CHANNELS
        || w != 2 * h
        || h == 0
        || action_dim == 0
        || action_dim > 64
    {
        return Err(ReplayError::Format(format!(
            "implausible header T={t} C={c} H={h} W={w} A={action_dim}"
        )));
    }
    let id = read_u64(r)?;
    let seed = read_u64(r)?;
    let timestamp = read_f64(r)?;
    let mut observations = Vec::with_capacity(t + 1);
    for _ in 0..=t {
        let mut px = vec![0u8; c * h * w];
        r.read_exact(&mut px)?;
        observations.push(Observation::from_pixels(h, px).expect("length checked"));
    }
    let mut actions = Vec::with_capacity(t);
    for _ in 0..t {
        let a = (0..action_dim)
            .map(|_| read_f64(r))
            .collect::<Result<Vec<_>, _>>()?;
        actions.push(Action::new(a));
    }
    let rewards = (0..t).map(|_| read_f64(r)).collect::<Result<Vec<_>, _>>()?;
    let mut dones = vec![0u8; t];
    r.read_exact(&mut dones)?;
    if dones.iter().any(|d| *d > 1) {
        return Err(ReplayError::Format("done flag not 0/1".into()));
    }
    EpisodeRecord::new(
        id,
        seed,
        timestamp,
        observations,
        actions,
        rewards,
        dones.into_iter().map(|d| d == 1).collect(),
    )
}

pub fn write_episode_file(path: &Path, ep: &EpisodeRecord) -> Result<(), ReplayError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_episode(&mut w, ep)?;
    w.flush()?;
    Ok(())
}

pub fn read_episode_file(path: &Path) -> Result<EpisodeRecord, ReplayError> {
    read_episode(&mut BufReader::new(File::open(path)?))
}
