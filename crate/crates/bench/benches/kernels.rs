use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gradfield_core::model::uniform_locations;
use gradfield_core::*;

fn kernel(c: &mut Criterion) {
    let p = MaternParams::new(1.0, 1.05).unwrap();
    let d = SeparationVector::new(0.3, -0.7).unwrap();
    c.bench_function("cov_matern32", |b| b.iter(|| cov_matern32(black_box(&d), &p)));
    c.bench_function("grad_matern32", |b| b.iter(|| grad_matern32(black_box(&d), &p)));
    c.bench_function("hess_matern32", |b| b.iter(|| hess_matern32(black_box(&d), &p)));
    let theta = ThetaSample::simulation_truth();
    c.bench_function("local_cov_block", |b| b.iter(|| local_cov_block(black_box(&theta)).unwrap()));
}

fn conditional(c: &mut Criterion) {
    let theta = ThetaSample::simulation_truth();
    let locs = uniform_locations(200, [0.0, 10.0, 0.0, 10.0], 1);
    let data = simulate_bivariate_gp(&locs, &theta, 2).unwrap();
    let targets = PredictionTargets::gradients(&uniform_locations(25, [6.0, 9.0, 5.0, 8.0], 3)).unwrap();
    let mut g = c.benchmark_group("conditional");
    g.sample_size(10);
    g.bench_function("200 sites, 25 gradient targets", |b| {
        b.iter(|| conditional_gradient_distribution(&theta, &data, black_box(&targets)).unwrap())
    });
    g.bench_function("log_likelihood, 200 sites", |b| b.iter(|| log_likelihood(black_box(&theta), &data).unwrap()));
    g.finish();
}

criterion_group!(benches, kernel, conditional);
criterion_main!(benches);
