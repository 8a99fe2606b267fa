//! Episodic replay: complete episodes in, fixed-length chunks out.

mod file;

use std::collections::VecDeque;

use rand::Rng;
use thiserror::Error;

use crate::env::{Action, Observation};

pub use file::{
    read_episode, read_episode_file, write_episode, write_episode_file, EPISODE_FORMAT_VERSION,
    EPISODE_MAGIC,
};

/// Longest episode a record may hold.
pub const MAX_EPISODE_LEN: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("malformed episode: {0}")]
    Malformed(String),
    #[error("no episode with at least {chunk_len} steps yet")]
    NotReady { chunk_len: usize },
    #[error("invalid sampling request: {0}")]
    BadRequest(String),
    #[error("episode file: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for ReplayError {
    fn from(e: std::io::Error) -> Self {
        ReplayError::Io(e.to_string())
    }
}

/// One finished episode: `T + 1` observations, `T` actions, rewards and done flags.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    id: u64,
    seed: u64,
    timestamp: f64,
    observations: Vec<Observation>,
    actions: Vec<Action>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
}

impl EpisodeRecord {
    pub fn new(
        id: u64,
        seed: u64,
        timestamp: f64,
        observations: Vec<Observation>,
        actions: Vec<Action>,
        rewards: Vec<f64>,
        dones: Vec<bool>,
    ) -> Result<Self, ReplayError> {
        let t = actions.len();
        let bad = |m: String| Err(ReplayError::Malformed(m));
        if t == 0 || t > MAX_EPISODE_LEN {
            return bad(format!("length {t} outside 1..={MAX_EPISODE_LEN}"));
        }
        if observations.len() != t + 1 || rewards.len() != t || dones.len() != t {
            return bad(format!(
                "{} observations, {t} actions, {} rewards, {} done flags",
                observations.len(),
                rewards.len(),
                dones.len()
            ));
        }
        if rewards.iter().any(|r| !r.is_finite()) || !timestamp.is_finite() {
            return bad("non-finite reward or timestamp".into());
        }
        let size = observations[0].height();
        if observations.iter().any(|o| o.height() != size) {
            return bad("observations differ in size".into());
        }
        let dim = actions[0].dim();
        if actions
            .iter()
            .any(|a| a.dim() != dim || a.as_slice().iter().any(|v| !v.is_finite()))
        {
            return bad("actions differ in dimension or are non-finite".into());
        }
        Ok(Self {
            id,
            seed,
            timestamp,
            observations,
            actions,
            rewards,
            dones,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Wall-clock seconds since run start at which the episode finished.
    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    /// Number of steps `T`.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn dones(&self) -> &[bool] {
        &self.dones
    }

    pub fn action_dim(&self) -> usize {
        self.actions[0].dim()
    }

    pub fn image_size(&self) -> usize {
        self.observations[0].height()
    }

    /// Chunk of `len` steps starting at `offset`; step `k` is
    /// `(obs[offset+k+1], action[offset+k], reward[offset+k])`.
    pub fn chunk(&self, offset: usize, len: usize) -> Option<Chunk> {
        if len == 0 || offset + len > self.len() {
            return None;
        }
        Some(Chunk {
            episode_id: self.id,
            offset,
            observations: self.observations[offset + 1..offset + len + 1].to_vec(),
            actions: self.actions[offset..offset + len].to_vec(),
            rewards: self.rewards[offset..offset + len].to_vec(),
        })
    }
}

/// Consecutive steps cut from one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Chunk {
    pub episode_id: u64,
    pub offset: usize,
    /// Observation reached after each step's action.
    pub observations: Vec<Observation>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
}

impl Chunk {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChunkBatch {
    pub chunks: Vec<Chunk>,
}

impl ChunkBatch {
    pub fn batch_size(&self) -> usize {
        self.chunks.len()
    }

    /// Shared chunk length, or `None` if the batch is empty or ragged.
    pub fn chunk_len(&self) -> Option<usize> {
        let l = self.chunks.first()?.len();
        self.chunks.iter().all(|c| c.len() == l).then_some(l)
    }
}

/// FIFO store of complete episodes.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<EpisodeRecord>,
    steps: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            episodes: VecDeque::new(),
            steps: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn total_steps(&self) -> usize {
        self.steps
    }

    pub fn episodes(&self) -> impl Iterator<Item = &EpisodeRecord> {
        self.episodes.iter()
    }

    pub fn get(&self, id: u64) -> Option<&EpisodeRecord> {
        self.episodes.iter().find(|e| e.id == id)
    }

    /// Stores `episode`, evicting the oldest ones beyond capacity.
    pub fn append(&mut self, episode: EpisodeRecord) -> Result<(), ReplayError> {
        if let Some(first) = self.episodes.front() {
            if first.image_size() != episode.image_size()
                || first.action_dim() != episode.action_dim()
            {
                return Err(ReplayError::Malformed(format!(
                    "episode {} has image size {} / action dim {}, buffer holds {} / {}",
                    episode.id,
                    episode.image_size(),
                    episode.action_dim(),
                    first.image_size(),
                    first.action_dim()
                )));
            }
        }
        self.steps += episode.len();
        self.episodes.push_back(episode);
        while self.episodes.len() > self.capacity {
            let old = self.episodes.pop_front().expect("non-empty");
            self.steps -= old.len();
        }
        Ok(())
    }

    pub fn eligible_count(&self, chunk_len: usize) -> usize {
        self.episodes
            .iter()
            .filter(|e| e.len() >= chunk_len)
            .count()
    }

    /// `batch_size` independent chunks: episode uniform among those with at
    /// least `chunk_len` steps, then offset uniform in `[0, T − L]`.
    pub fn sample_chunks(
        &self,
        batch_size: usize,
        chunk_len: usize,
        rng: &mut impl Rng,
    ) -> Result<ChunkBatch, ReplayError> {
        if batch_size == 0 || chunk_len == 0 {
            return Err(ReplayError::BadRequest(format!(
                "batch {batch_size}, length {chunk_len}"
            )));
        }
        let eligible: Vec<&EpisodeRecord> = self
            .episodes
            .iter()
            .filter(|e| e.len() >= chunk_len)
            .collect();
        if eligible.is_empty() {
            return Err(ReplayError::NotReady { chunk_len });
        }
        let chunks = (0..batch_size)
            .map(|_| {
                let ep = eligible[rng.random_range(0..eligible.len())];
                let offset = rng.random_range(0..=ep.len() - chunk_len);
                ep.chunk(offset, chunk_len).expect("offset within bounds")
            })
            .collect();
        Ok(ChunkBatch { chunks })
    }
}
