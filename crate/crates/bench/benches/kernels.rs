use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use std::hint::black_box;

use epitrack_bench::{agent_setup, dynamics};
use epitrack_core::filter::{gaussian_poly_moments, predict};
use epitrack_core::meanfield::mean_field_step;
use epitrack_core::sis::step_agents;
use epitrack_core::{rng_from_seed, FilterState};

fn mean_field(c: &mut Criterion) {
    let mut group = c.benchmark_group("mean_field_step");
    for l in [4, 8, 16] {
        let d = dynamics(l);
        let x = vec![0.3; l];
        group.bench_with_input(BenchmarkId::from_parameter(l), &x, |b, x| {
            b.iter(|| mean_field_step(&d, black_box(x)))
        });
    }
    group.finish();
}

fn moments(c: &mut Criterion) {
    let mut group = c.benchmark_group("gaussian_poly_moments");
    for l in [4, 8] {
        let d = dynamics(l);
        let belief = FilterState::isotropic(l, 0.4, 1e-3).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(l), &belief, |b, belief| {
            b.iter(|| gaussian_poly_moments(&d, black_box(belief)).unwrap())
        });
    }
    group.finish();
    let d = dynamics(8);
    let belief = FilterState::isotropic(8, 0.4, 1e-3).unwrap();
    c.bench_function("predict/8", |b| b.iter(|| predict(&d, black_box(&belief)).unwrap()));
}

fn agents(c: &mut Criterion) {
    let mut group = c.benchmark_group("step_agents");
    for n in [1_000, 10_000] {
        let (g, k, state) = agent_setup(n);
        group.bench_function(BenchmarkId::from_parameter(n), |b| {
            b.iter_batched(
                || rng_from_seed(9),
                |mut rng| step_agents(&g, &k, black_box(&state), &mut rng).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, mean_field, moments, agents);
criterion_main!(benches);
