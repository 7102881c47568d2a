use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dsg_core::graph::pairwise_distance_sample;
use dsg_core::{
    evaluate, generate_synthetic, hamming_distance, kmeans, CodeSet, EvalConfig, HashModel, HashModelConfig,
    LabelSet, SynthSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_codes(n: usize, code_len: usize, seed: u64) -> CodeSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signs: Vec<f64> = (0..n * code_len).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    CodeSet::from_signs((0..n).map(|i| format!("{seed}-{i}")).collect(), code_len, &signs).unwrap()
}

fn synth(dim: usize) -> SynthSpec {
    SynthSpec { num_clusters: 10, points_per_cluster: 100, dim, center_scale: 1.0, noise_scale: 0.05, seed: 0 }
}

fn hamming(c: &mut Criterion) {
    let mut group = c.benchmark_group("hamming");
    for code_len in [16, 64, 128] {
        let codes = random_codes(2, code_len, 1);
        group.bench_with_input(BenchmarkId::from_parameter(code_len), &codes, |b, codes| {
            b.iter(|| hamming_distance(black_box(codes.code(0)), black_box(codes.code(1)), code_len).unwrap())
        });
    }
    group.finish();
}

fn eval(c: &mut Criterion) {
    let db = random_codes(10_000, 64, 2);
    let q = random_codes(100, 64, 3);
    let labels = |codes: &CodeSet| {
        LabelSet::new(codes.ids().to_vec(), (0..codes.len()).map(|i| vec![(i % 10) as u32]).collect()).unwrap()
    };
    let (ql, dl) = (labels(&q), labels(&db));
    let config = EvalConfig::default();
    c.bench_function("evaluate 100 x 10000, 64 bits", |b| {
        b.iter(|| evaluate(black_box(&q), black_box(&db), &ql, &dl, &config).unwrap())
    });
}

fn gradient(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch_gradient");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (in_dim, code_len) in [(128, 16), (4096, 64)] {
        let mut config = HashModelConfig::new(in_dim, code_len);
        config.seed = 5;
        let model = HashModel::init(config).unwrap();
        let m = 24;
        let x: Vec<f64> = (0..m * in_dim).map(|_| rng.random_range(-0.1..0.1)).collect();
        let s: Vec<f64> = (0..m * m).map(|k| if k % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let w = vec![0.5; m * m];
        group.bench_function(format!("{in_dim}->{code_len}, m={m}"), |b| {
            b.iter(|| model.batch_gradient(black_box(&x), &s, &w).unwrap())
        });
    }
    group.finish();
}

fn clustering(c: &mut Criterion) {
    let (features, _) = generate_synthetic(&synth(128)).unwrap();
    let mut group = c.benchmark_group("kmeans");
    group.sample_size(10);
    group.bench_function("1000 x 128, k=10", |b| b.iter(|| kmeans(black_box(&features), 10, 0, 300).unwrap()));
    group.finish();
}

fn distances(c: &mut Criterion) {
    let (features, _) = generate_synthetic(&synth(128)).unwrap();
    let mut group = c.benchmark_group("pairwise_distance_sample");
    group.sample_size(10);
    group.bench_function("all pairs of 1000 x 128", |b| {
        b.iter(|| pairwise_distance_sample(black_box(&features), 10_000_000, 0))
    });
    group.bench_function("100k sampled pairs", |b| b.iter(|| pairwise_distance_sample(black_box(&features), 100_000, 0)));
    group.finish();
}

criterion_group!(benches, hamming, eval, gradient, clustering, distances);
criterion_main!(benches);
