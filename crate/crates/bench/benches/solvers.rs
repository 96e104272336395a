use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use h2hinf_core::simulate::simulate_closed_loop;
use h2hinf_core::synthesis::solve_coupled_riccati;
use h2hinf_core::{
    solve_filter_covariance, synthesize, uav_scenario, DisturbancePolicy, LoopSetup, TimeGrid,
};

fn uav_grid() -> TimeGrid {
    TimeGrid::new(20.0, 2000).unwrap()
}

fn bench_riccati(c: &mut Criterion) {
    let (model, _) = uav_scenario();
    let grid = uav_grid();
    c.bench_function("coupled_riccati_uav", |b| {
        b.iter(|| solve_coupled_riccati(black_box(&model), black_box(&grid)).unwrap())
    });
}

fn bench_filter(c: &mut Criterion) {
    let (model, _) = uav_scenario();
    let grid = uav_grid();
    c.bench_function("filter_covariance_uav", |b| {
        b.iter(|| solve_filter_covariance(black_box(&model), black_box(&grid)).unwrap())
    });
}

fn bench_synthesis(c: &mut Criterion) {
    let (model, _) = uav_scenario();
    let grid = uav_grid();
    let plan = solve_filter_covariance(&model, &grid).unwrap();
    let mut group = c.benchmark_group("synthesis");
    group.sample_size(10);
    group.bench_function("full_uav", |b| {
        b.iter(|| synthesize(black_box(&model), &plan, &grid).unwrap())
    });
    group.finish();
}

fn bench_path(c: &mut Criterion) {
    let (model, _) = uav_scenario();
    let grid = uav_grid();
    let plan = solve_filter_covariance(&model, &grid).unwrap();
    let syn = synthesize(&model, &plan, &grid).unwrap();
    let setup = LoopSetup::new(&model, &grid, &plan, &syn.gains);
    let policy = DisturbancePolicy::uav_schedule(grid.horizon(), model.dims().m);
    let mut seed = 0u64;
    c.bench_function("closed_loop_path_uav", |b| {
        b.iter(|| {
            seed += 1;
            simulate_closed_loop(&setup, &policy, black_box(seed)).unwrap()
        })
    });
}

criterion_group!(
    benches,
    bench_riccati,
    bench_filter,
    bench_synthesis,
    bench_path
);
criterion_main!(benches);
