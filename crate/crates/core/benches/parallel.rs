//! Sequential (one-thread pool) versus parallel (default pool) timings of the
//! heaviest kernels.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use iftrack_core::baselines::{kde_landscape, tsne, Bandwidth, LandscapeSpec, TsneConfig};
use iftrack_core::flow::{simulate_ensemble, SimulationParams};

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    vec![
        (
            "sequential",
            rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap(),
        ),
        ("parallel", rayon::ThreadPoolBuilder::new().build().unwrap()),
    ]
}

fn points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            (0..dim)
                .map(|d| rng.gen_range(-1.0..1.0) + ((k % 4) * (d % 3)) as f64)
                .collect()
        })
        .collect()
}

fn bench_tsne(c: &mut Criterion) {
    let data = points(300, 16, 1);
    let cfg = TsneConfig {
        iterations: 300,
        ..Default::default()
    };
    let mut group = c.benchmark_group("tsne_300");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| tsne(&data, &cfg).unwrap()))
        });
    }
    group.finish();
}

fn bench_kde(c: &mut Criterion) {
    let pts: Vec<[f64; 2]> = points(2000, 2, 2).into_iter().map(|p| [p[0], p[1]]).collect();
    let spec = LandscapeSpec::default();
    let mut group = c.benchmark_group("kde_2000");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| kde_landscape(&pts, Bandwidth::Scott, spec).unwrap()))
        });
    }
    group.finish();
}

fn bench_ensemble(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let init: Vec<(f64, f64)> = (0..2000)
        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let params = SimulationParams {
        dtau: 1e-3,
        steps: 1000,
        seed: 3,
        noise_level: 0.0,
    };
    let mut group = c.benchmark_group("ensemble_2000");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| simulate_ensemble(|u| u, &init, &params).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_tsne, bench_kde, bench_ensemble);
criterion_main!(benches);
