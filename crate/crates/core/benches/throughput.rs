//! Single-threaded vs. pooled throughput of the data-parallel kernels.
//!
//! Build with `--no-default-features` to measure the purely sequential code
//! path; there both variants run the same loop.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use robustutil::orlicz::inequality_battery;
use robustutil::par;
use robustutil::robust::{solve_robust, RobustOptions};
use robustutil::verifier::{minimax_check, BSOracle, MinimaxOptions};
use robustutil::{random_scenario, UtilityFunction};

fn pools() -> Vec<(&'static str, usize)> {
    let all = std::thread::available_parallelism().map_or(1, |n| n.get());
    vec![("sequential", 1), ("pool", all)]
}

fn battery(c: &mut Criterion) {
    let market = BSOracle::new(0.5, 1.0, 1.1, 1.0).unwrap().market(64).unwrap();
    let uf = UtilityFunction::power(0.5).unwrap();
    let mut group = c.benchmark_group("inequality_battery_1000");
    group.sample_size(10);
    for (label, threads) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(label), &threads, |b, &t| {
            b.iter(|| par::with_threads(t, || inequality_battery(&market, &uf, black_box(1000), 7).unwrap()))
        });
    }
    group.finish();
}

fn robust_bs(c: &mut Criterion) {
    let oracle = BSOracle::new(0.5, 1.0, 1.1, 1.0).unwrap();
    let market = oracle.market(256).unwrap();
    let constraints = oracle.constraints();
    let uf = UtilityFunction::power(0.5).unwrap();
    let opts = RobustOptions::default();
    let mut group = c.benchmark_group("solve_robust_bs_256");
    for (label, threads) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(label), &threads, |b, &t| {
            b.iter(|| par::with_threads(t, || solve_robust(&market, &constraints, &uf, black_box(1.0), &opts).unwrap()))
        });
    }
    group.finish();
}

fn minimax(c: &mut Criterion) {
    let s = random_scenario(3, 1, 2, 5).unwrap().into_scenario().unwrap();
    let uf = UtilityFunction::power(0.5).unwrap();
    let opts = MinimaxOptions {
        grid_step: 1e-2,
        ..MinimaxOptions::default()
    };
    let mut group = c.benchmark_group("minimax_n3_k2");
    group.sample_size(10);
    for (label, threads) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(label), &threads, |b, &t| {
            b.iter(|| par::with_threads(t, || minimax_check(&s.market, &s.densities, &uf, black_box(1.0), &opts).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, battery, robust_bs, minimax);
criterion_main!(benches);
