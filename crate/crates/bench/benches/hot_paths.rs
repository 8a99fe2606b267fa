use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roboplanet::env::{Action, EnvConfig, ReachEnv};
use roboplanet::model::{loss_noise_len, LatentBelief, LatentModel, ModelConfig};
use roboplanet::planner::{plan_latent, PlannerConfig};
use roboplanet::replay::{EpisodeRecord, ReplayBuffer};

const IMAGE: usize = 16;

fn model_config() -> ModelConfig {
    ModelConfig {
        image_size: IMAGE,
        embed_dim: 24,
        deterministic_dim: 24,
        stochastic_dim: 6,
        hidden_dim: 24,
        conv_depth: 4,
        ..ModelConfig::default()
    }
}

fn env_config() -> EnvConfig {
    let mut cfg = EnvConfig::default();
    cfg.render.image_size = IMAGE;
    cfg
}

fn episode(id: u64) -> EpisodeRecord {
    let cfg = EnvConfig {
        touch_threshold: 0.0,
        ..env_config()
    };
    let mut env = ReachEnv::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(id);
    let mut obs = vec![env.reset(&mut rng)];
    let (mut acts, mut rews, mut dones) = (vec![], vec![], vec![]);
    loop {
        let a = Action::new((0..3).map(|_| rng.random_range(-1.0..1.0)).collect());
        let r = env.step(&a).unwrap();
        obs.push(r.observation);
        acts.push(a);
        rews.push(r.reward);
        dones.push(r.done);
        if r.done {
            break;
        }
    }
    EpisodeRecord::new(id, id, 0.0, obs, acts, rews, dones).unwrap()
}

fn env_step(c: &mut Criterion) {
    let mut env = ReachEnv::new(env_config()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    env.reset(&mut rng);
    c.bench_function("env_step_16px", |b| {
        b.iter(|| {
            if env.is_done() {
                env.reset(&mut rng);
            }
            env.step(&Action::new(vec![0.3, -0.2, 0.1])).unwrap()
        })
    });
}

fn replay_sample(c: &mut Criterion) {
    let mut replay = ReplayBuffer::new(100);
    for id in 0..20 {
        replay.append(episode(id)).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    c.bench_function("replay_sample_b8_l25", |b| {
        b.iter(|| replay.sample_chunks(8, 25, &mut rng).unwrap())
    });
}

fn loss_and_gradient(c: &mut Criterion) {
    let cfg = model_config();
    let model = LatentModel::new(cfg.clone(), 0).unwrap();
    let mut replay = ReplayBuffer::new(10);
    for id in 0..5 {
        replay.append(episode(id)).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let noise: Vec<f64> = (0..loss_noise_len(&cfg, 8, 25))
        .map(|_| rng.sample(rand_distr::StandardNormal))
        .collect();
    c.bench_function("loss_and_gradient_b8_l25", |b| {
        b.iter_batched(
            || replay.sample_chunks(8, 25, &mut rng).unwrap(),
            |batch| {
                let mut g = model.graph();
                let (v, _) = g.loss(&batch, &noise).unwrap();
                g.flat_gradients(v).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

fn cem_plan(c: &mut Criterion) {
    let cfg = model_config();
    let model = LatentModel::new(cfg.clone(), 0).unwrap();
    let belief = LatentBelief::initial(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut group = c.benchmark_group("cem_plan");
    for (n, iters, elites) in [(100, 10, 10), (50, 5, 5)] {
        let pc = PlannerConfig {
            candidates: n,
            iterations: iters,
            elites,
            ..PlannerConfig::default()
        };
        group.bench_function(format!("{n}x{iters}"), |b| {
            b.iter(|| plan_latent(&model, &belief, &pc, &mut rng).unwrap())
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = env_step, replay_sample, loss_and_gradient, cem_plan
}
criterion_main!(benches);
