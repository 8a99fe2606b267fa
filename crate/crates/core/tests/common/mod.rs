#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roboplanet::env::{Action, EnvConfig, ReachEnv};
use roboplanet::model::ModelConfig;
use roboplanet::replay::{ChunkBatch, EpisodeRecord};

pub fn env_config(image_size: usize) -> EnvConfig {
    let mut cfg = EnvConfig::default();
    cfg.render.image_size = image_size;
    cfg
}

/// Uniform-random-torque episode, at most `max_steps` long.
pub fn random_episode(cfg: &EnvConfig, id: u64, seed: u64, max_steps: usize) -> EpisodeRecord {
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

/// `batch` chunks of length `len` cut from fresh random episodes.
pub fn chunk_batch(image_size: usize, batch: usize, len: usize, seed: u64) -> ChunkBatch {
    let cfg = env_config(image_size);
    let chunks = (0..batch)
        .map(|b| {
            let mut k = 0;
            loop {
                let ep = random_episode(&cfg, b as u64, seed * 1000 + b as u64 * 17 + k, len + 5);
                if let Some(c) = ep.chunk(ep.len() - len.min(ep.len()), len) {
                    break c;
                }
                k += 1;
            }
        })
        .collect();
    ChunkBatch { chunks }
}

pub fn normals(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| rng.sample(rand_distr::StandardNormal))
        .collect()
}

pub fn small_model_config(image_size: usize) -> ModelConfig {
    ModelConfig {
        image_size,
        action_dim: 3,
        embed_dim: 8,
        deterministic_dim: 8,
        stochastic_dim: 4,
        hidden_dim: 8,
        conv_depth: 2,
        min_stddev: 0.1,
        free_nats: 0.0,
        kl_scale: 1.0,
    }
}
