use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use kinelab_core::engine::{gradient, solve_pressure};
use kinelab_core::identity::{run_batch, SampleOptions};
use kinelab_core::solver::initial_condition;
use kinelab_core::{GridSpec, Integrator, StepperConfig};

fn fields(c: &mut Criterion) {
    let mut group = c.benchmark_group("field");
    group.sample_size(10);
    for n in [32, 64] {
        let grid = GridSpec::new(3, n).unwrap();
        let state = initial_condition("taylor-green-3d", &grid, 0).unwrap();
        group.bench_with_input(BenchmarkId::new("velocity-gradient", n), &state, |b, s| {
            b.iter(|| gradient(black_box(s.velocity())).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("pressure", n), &state, |b, s| {
            b.iter(|| solve_pressure(black_box(s.velocity()), None).unwrap())
        });
    }
    group.finish();
}

fn rk4(c: &mut Criterion) {
    let mut group = c.benchmark_group("rk4-step");
    group.sample_size(10);
    for (name, dim, n) in [("taylor-green-3d", 3, 32), ("boussinesq-taylor-green", 2, 256)] {
        let grid = GridSpec::new(dim, n).unwrap();
        let state = initial_condition(name, &grid, 0).unwrap();
        let config = StepperConfig::new(1e-3).unwrap();
        group.bench_function(BenchmarkId::new(name, n), |b| {
            let mut integrator = Integrator::new(&state, config).unwrap();
            b.iter(|| integrator.step().unwrap())
        });
    }
    group.finish();
}

fn identities(c: &mut Criterion) {
    let opts = SampleOptions::default();
    c.bench_function("identity-batch-3d-10k", |b| b.iter(|| run_batch(3, black_box(10_000), 7, &opts)));
}

criterion_group!(benches, fields, rk4, identities);
criterion_main!(benches);
