use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use honestcalib::config::Hyperparams;
use honestcalib::metrics::rank_auc;
use honestcalib::mining::mine_triplets;
use honestcalib::synth::{generate, SynthConfig};
use honestcalib::training::{gradients, TrainState};
use honestcalib::transport::{solve_emd, TokenBag, WeightedToken};

fn bag(n: usize, dim: usize, shift: f64) -> TokenBag {
    TokenBag::new((0..n).map(|i| WeightedToken {
        token: format!("t{i}"),
        weight: 1.0 + (i % 3) as f64,
        embedding: (0..dim).map(|d| ((i * 7 + d * 3) % 11) as f64 * 0.1 + shift).collect(),
    }))
    .unwrap()
}

fn transport(c: &mut Criterion) {
    for n in [8, 32, 64] {
        let (a, b) = (bag(n, 16, 0.0), bag(n, 16, 0.05));
        c.bench_function(&format!("solve_emd {n}x{n}"), |bench| {
            bench.iter(|| solve_emd(black_box(&a), black_box(&b)).unwrap())
        });
    }
}

fn ranking(c: &mut Criterion) {
    let correct: Vec<f64> = (0..5000).map(|i| ((i * 37) % 1000) as f64 / 1000.0).collect();
    let wrong: Vec<f64> = (0..2000).map(|i| ((i * 53) % 700) as f64 / 1000.0).collect();
    c.bench_function("rank_auc 7000", |b| {
        b.iter(|| rank_auc(black_box(&correct), black_box(&wrong)).unwrap())
    });
}

fn training_step(c: &mut Criterion) {
    let records = generate(&SynthConfig {
        n_records: 32,
        ..SynthConfig::default()
    })
    .unwrap();
    let params = Hyperparams::default();
    let triplets = mine_triplets(&records, &params, 1).unwrap();
    let state = TrainState::init(16, params.projection_dim, 0);
    c.bench_function("mine_triplets batch 32", |b| {
        b.iter(|| mine_triplets(black_box(&records), &params, 1).unwrap())
    });
    c.bench_function("gradients batch 32", |b| {
        b.iter(|| gradients(black_box(&records), black_box(&triplets), &params, &state).unwrap())
    });
}

criterion_group!(benches, transport, ranking, training_step);
criterion_main!(benches);
