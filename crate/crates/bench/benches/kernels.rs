use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ph2d_bench::{lattice, mask};
use ph2d_core::cutoff::{corrector_norm_audit, CorrectorField};
use ph2d_core::domain::rasterize;
use ph2d_core::ns2d::{Boundary, FluidParams, InitialData, Solver};
use ph2d_core::stokes::MacStokes;
use ph2d_core::Grid;

fn bench_rasterize(c: &mut Criterion) {
    let holes = lattice(0.1);
    c.bench_function("rasterize eps=0.1 256^2", |b| b.iter(|| rasterize(black_box(&holes), 256)));
}

fn bench_stokes(c: &mut Criterion) {
    let n = 64;
    let grid = Grid::new(n, n, 1.0 / n as f64);
    let st = MacStokes::full(grid);
    let f: Vec<f64> = (0..n * n)
        .map(|k| {
            let (i, j) = (k % n, k / n);
            let (x, y) = ((i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64);
            (std::f64::consts::TAU * x).cos() * (std::f64::consts::TAU * y).cos()
        })
        .collect();
    c.bench_function("stokes div solve 64^2", |b| b.iter(|| st.solve(black_box(&f), 1e-10).unwrap()));
}

fn bench_corrector(c: &mut Criterion) {
    let field = CorrectorField::new(lattice(0.1)).unwrap();
    c.bench_function("corrector audit eps=0.1", |b| {
        b.iter(|| corrector_norm_audit(black_box(&field), &[1.0, 2.0], 16).unwrap())
    });
}

fn bench_step(c: &mut Criterion) {
    let m = mask(0.25, 128);
    let solver = Solver::new(FluidParams::default(), m, Boundary::default()).unwrap();
    let s0 = InitialData::default_bump(solver.grid()).into_state(&solver).unwrap();
    let dt = 0.5 * solver.stable_dt(&s0, 0.4);
    c.bench_function("ns2d step 128^2", |b| {
        b.iter_batched_ref(|| s0.clone(), |s| solver.step(s, dt).unwrap(), criterion::BatchSize::LargeInput)
    });
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(10);
    targets = bench_rasterize, bench_stokes, bench_corrector, bench_step
}
criterion_main!(kernels);
