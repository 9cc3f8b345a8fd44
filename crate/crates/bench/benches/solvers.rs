use std::path::PathBuf;

use criterion::{black_box, criterion_group, criterion_main, Criterion};

use bilevel_core::market::{load_market, sweep_b1};
use bilevel_core::model::{load_problem, reformulate, BilevelProblem, GnepMode};
use bilevel_core::solve::{enumerate_equilibria_grid, solve_lower, solve_sbp_grid, solve_two_stage, GridSpec};
use bilevel_core::verify::{Verifier, DEFAULT_RADIUS};

fn corpus(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(name)
}

fn problem(name: &str) -> BilevelProblem {
    load_problem(corpus(name)).expect("corpus file loads")
}

fn grid_search(c: &mut Criterion) {
    let grid = GridSpec::default();
    let ex5 = problem("ex5.blp");
    c.bench_function("solve_lower/ex5", |b| b.iter(|| solve_lower(&ex5, black_box(&[0.3]), &grid)));
    c.bench_function("solve_sbp/ex5", |b| b.iter(|| solve_sbp_grid(black_box(&ex5), &grid)));
    let ex4 = problem("ex4.blp");
    c.bench_function("two_stage/ex4", |b| b.iter(|| solve_two_stage(black_box(&ex4), &grid)));
}

fn equilibria(c: &mut Criterion) {
    let grid = GridSpec::default();
    let g = reformulate(&problem("ex1.blp"), GnepMode::Uneven).unwrap();
    let mut group = c.benchmark_group("equilibria");
    group.sample_size(10);
    group.bench_function("enumerate/ex1", |b| b.iter(|| enumerate_equilibria_grid(black_box(&g), &grid)));
    group.finish();
}

fn verification(c: &mut Criterion) {
    let grid = GridSpec { points: 41, rounds: 2, ..GridSpec::default() };
    let p = problem("ex5.blp");
    let mut group = c.benchmark_group("verify");
    group.sample_size(10);
    group.bench_function("check_sbp_point/ex5", |b| {
        b.iter(|| Verifier::new(&p, grid, DEFAULT_RADIUS).check_sbp_point(black_box(&[0.8, 0.4])))
    });
    group.finish();
}

fn market(c: &mut Criterion) {
    let grid = GridSpec { points: 41, rounds: 2, ..GridSpec::default() };
    let m = load_market(corpus("market1.mkt")).unwrap();
    let mut group = c.benchmark_group("market");
    group.sample_size(10);
    group.bench_function("sweep_b1/market1/5", |b| b.iter(|| sweep_b1(black_box(&m), 5, &grid)));
    group.finish();
}

criterion_group!(benches, grid_search, equilibria, verification, market);
criterion_main!(benches);
