use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use curio_bench::visited_states;
use curio_core::env::{DialogueEnv, World};
use curio_core::features::{Featurizer, InputMode};
use curio_core::nn::Mlp;
use curio_core::rng::rng_for;
use ndarray::Array2;
use rand::Rng;

fn mlp(c: &mut Criterion) {
    let mut rng = rng_for(0, "bench-mlp", 0);
    let actor = Mlp::new(&[333, 100, 87], &mut rng).unwrap();
    let x = Array2::from_shape_fn((32, 333), |_| rng.random_range(0.0..1.0));
    let grad = Array2::from_shape_fn((32, 87), |_| rng.random_range(-1.0..1.0));
    c.bench_function("actor forward, batch 32", |b| b.iter(|| actor.predict(black_box(x.view())).unwrap()));
    c.bench_function("actor forward+backward, batch 32", |b| {
        b.iter(|| {
            let (_, tape) = actor.forward(black_box(x.view())).unwrap();
            actor.backward(&tape, grad.view()).unwrap()
        })
    });
    let rnd = Mlp::new(&[256, 524, 256], &mut rng).unwrap();
    let u = Array2::from_shape_fn((32, 256), |_| rng.random_range(0.0..1.0));
    c.bench_function("rnd predictor forward, batch 32", |b| b.iter(|| rnd.predict(black_box(u.view())).unwrap()));
}

fn environment(c: &mut Criterion) {
    let world = World::standard().unwrap();
    let states = visited_states(&world, 64, 0).unwrap();
    let featurizer = Featurizer::standard(world.clone()).unwrap();
    c.bench_function("encode_state", |b| {
        b.iter(|| {
            for (s, _) in &states {
                black_box(world.layout.encode_state(s).unwrap());
            }
        })
    });
    c.bench_function("utterance exchange encoding", |b| {
        b.iter(|| {
            for (s, _) in &states {
                black_box(featurizer.last_exchange(InputMode::Utt, s).unwrap());
            }
        })
    });
    let acts = states[3].1.clone();
    c.bench_function("env reset+step", |b| {
        b.iter_batched(
            || DialogueEnv::new(world.clone()),
            |mut env| {
                env.reset(7).unwrap();
                env.step(black_box(&acts)).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, mlp, environment);
criterion_main!(benches);
