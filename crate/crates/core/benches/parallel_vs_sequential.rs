use std::hint::black_box;

use amod_core::policy::thresholds_uniform;
use amod_core::sim::{brute_force_threshold_search, simulate_policy};
use amod_core::{Execution, PriceDistribution, SimConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn replicates(c: &mut Criterion) {
    let policy = thresholds_uniform(0.8, 3.0, 9, 10).unwrap();
    let cfg = SimConfig { seed: 1, horizon: 50_000, replicates: 32, burn_in: 990 };
    let mut group = c.benchmark_group("simulate_policy");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| simulate_policy(black_box(&policy), &cfg, exec).unwrap())
        });
    }
    group.finish();
}

fn threshold_grid(c: &mut Criterion) {
    let dist = PriceDistribution::uniform(0.8, 3.0);
    let reference = thresholds_uniform(0.8, 3.0, 3, 10).unwrap();
    let cfg = SimConfig { seed: 1, horizon: 10_000, replicates: 4, burn_in: 500 };
    let mut group = c.benchmark_group("brute_force_search");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| brute_force_threshold_search(&dist, &reference, 9, &cfg, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, replicates, threshold_grid);
criterion_main!(benches);
