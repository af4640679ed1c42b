use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gradfield_core::grid::GridSpec;
use gradfield_core::lgcp::{elliptical_slice_step, latent_correlation_factor, FieldSampler};
use gradfield_core::*;
use nalgebra::DVector;

fn lgcp(c: &mut Criterion) {
    let grid = GridSpec::new(Window::new(0.0, 150.0, 0.0, 150.0).unwrap(), 30, 30).unwrap();
    let x = SurfaceGrid::from_fn(grid, "x", |s| (s.s1() / 40.0).sin()).unwrap();
    let w = FieldSampler::new(&grid.centroids(), &MaternParams::new(0.25, 0.04).unwrap())
        .unwrap()
        .draw(&mut stream_rng(1, 0));
    let eta: Vec<f64> = w.iter().zip(&x.values).map(|(w, x)| -3.8 - 0.26 * x.unwrap() + w).collect();
    let pattern = simulate_lgcp(&grid, &eta, 2).unwrap();
    let sample = LgcpSample {
        beta0: -3.8,
        beta1: -0.26,
        sigma2_z: 0.25,
        w,
    };

    let mut g = c.benchmark_group("lgcp");
    g.sample_size(20);
    g.bench_function("likelihood, 900 cells", |b| {
        b.iter(|| lgcp_log_likelihood(black_box(&sample), &pattern, &x, &grid).unwrap())
    });
    let factor = latent_correlation_factor(&grid, 0.04).unwrap();
    let mut rng = stream_rng(3, 0);
    let state = DVector::from_vec(sample.w.clone());
    let ll = |v: &DVector<f64>| -0.5 * v.norm_squared();
    g.bench_function("elliptical slice step, 900 cells", |b| {
        b.iter(|| elliptical_slice_step(black_box(&state), &factor, 0.5, ll, &mut rng).unwrap())
    });
    g.finish();
}

criterion_group!(benches, lgcp);
criterion_main!(benches);
