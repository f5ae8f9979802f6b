use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pubmto::par;
use pubmto::solvers::{solve_bargaining, GramMatrix, GramSource, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Column sets for independent weight solves, `n` tasks over `d` parameters.
fn workload(count: usize, n: usize, d: usize) -> Vec<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    (0..count)
        .map(|_| {
            let common: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            (0..n)
                .map(|_| common.iter().map(|c| c + 0.5 * rng.random_range(-1.0..1.0)).collect())
                .collect()
        })
        .collect()
}

fn solve(cols: Vec<Vec<f64>>) -> f64 {
    let g = GramMatrix::from_columns(&cols, GramSource::Updates).unwrap();
    let sol = solve_bargaining(&g, &SolverConfig::default()).unwrap();
    sol.alpha.iter().sum()
}

fn bench_map(c: &mut Criterion) {
    let mut group = c.benchmark_group("weight_solves");
    group.sample_size(20);
    for &d in &[1_000usize, 20_000] {
        let jobs = workload(64, 4, d);
        group.bench_with_input(BenchmarkId::new("rayon", d), &jobs, |b, jobs| {
            b.iter(|| black_box(par::map(jobs.clone(), solve)))
        });
        group.bench_with_input(BenchmarkId::new("sequential", d), &jobs, |b, jobs| {
            b.iter(|| black_box(par::map_sequential(jobs.clone(), solve)))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_map);
criterion_main!(benches);
