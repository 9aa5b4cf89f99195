//! Microbenchmarks for the hot kernels: spectral differentiation, the four
//! right-hand sides, one projected RK4 step, and a diagnostics record.
//!
//! Run with `cargo bench -p gll-bench`.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gll_core::fields::FourierMapSpec;
use gll_core::{
    derivative, diagnostics, random_smooth_field, rhs_classical_ll, rhs_extrinsic, rhs_intrinsic,
    rhs_regularized, stable_dt, step_rk4, PeriodicGrid, PotentialMatrix, Scheme, SphereField,
};
use std::hint::black_box;

fn field(n: usize) -> SphereField {
    let grid = PeriodicGrid::new(n).unwrap();
    random_smooth_field(
        grid,
        3,
        &FourierMapSpec {
            seed: 3,
            max_mode: 6,
            decay: 3.0,
            amplitude: 0.3,
        },
    )
    .unwrap()
}

fn bench_derivative(c: &mut Criterion) {
    let mut group = c.benchmark_group("spectral_derivative");
    for n in [128usize, 256, 512] {
        let grid = PeriodicGrid::new(n).unwrap();
        let f: Vec<f64> = grid.nodes().map(|x| (3.0 * x).sin().exp()).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| derivative(grid, black_box(&f), 3, Scheme::Spectral).unwrap())
        });
    }
    group.finish();
}

fn bench_rhs(c: &mut Criterion) {
    let u = field(256);
    let a = PotentialMatrix::diagonal(&[1.0, 2.0, 3.0]);
    let mut group = c.benchmark_group("rhs_n256");
    group.bench_function("extrinsic", |b| {
        b.iter(|| rhs_extrinsic(black_box(&u), &a).unwrap())
    });
    group.bench_function("intrinsic", |b| {
        b.iter(|| rhs_intrinsic(black_box(&u), &a).unwrap())
    });
    group.bench_function("regularized", |b| {
        b.iter(|| rhs_regularized(black_box(&u), &a, 1e-2).unwrap())
    });
    group.bench_function("classical_ll", |b| {
        b.iter(|| rhs_classical_ll(black_box(&u), &a).unwrap())
    });
    group.finish();
}

fn bench_step_and_diagnostics(c: &mut Criterion) {
    let u = field(256);
    let a = PotentialMatrix::diagonal(&[1.0, 2.0, 3.0]);
    let dt = stable_dt(u.grid(), 0.0, 0.05);
    c.bench_function("rk4_step_n256", |b| {
        b.iter(|| step_rk4(black_box(&u), |s| rhs_intrinsic(s, &a), dt).unwrap())
    });
    c.bench_function("diagnostics_n256", |b| {
        b.iter(|| diagnostics(0.0, black_box(&u), &a))
    });
}

criterion_group!(benches, bench_derivative, bench_rhs, bench_step_and_diagnostics);
criterion_main!(benches);
