use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nnflow_bench::{pairs, wave_setup};
use nnflow_core::constitutive::certify_p6;
use nnflow_core::rel_energy::{coercivity_bound, relative_energy};
use nnflow_core::solver::{stable_dt, step};
use nnflow_core::young::{conjugate_numeric, log_grid, ConjugateSearch};
use nnflow_core::{ViscosityLaw, YoungFunction};

fn conjugate(c: &mut Criterion) {
    let m = YoungFunction::exponential();
    let ys = log_grid(1e-3, 1e3, 50);
    c.bench_function("conjugate_numeric/exp/50", |b| {
        b.iter(|| {
            for &y in &ys {
                black_box(conjugate_numeric(&m, black_box(y), ConjugateSearch::default()).unwrap());
            }
        })
    });
}

fn monotonicity(c: &mut Criterion) {
    let mut g = c.benchmark_group("certify_p6");
    g.sample_size(10);
    for (name, law) in [
        ("exponential", ViscosityLaw::exponential()),
        ("power", ViscosityLaw::power_law(1.0, 1.0).unwrap()),
    ] {
        g.bench_function(BenchmarkId::new(name, 10_000), |b| {
            b.iter(|| certify_p6(&law, 3.0, pairs(10_000)).unwrap())
        });
    }
    g.finish();
}

fn solver(c: &mut Criterion) {
    let mut g = c.benchmark_group("solver_step");
    for n in [64, 256, 1024] {
        let (cfg, state, _) = wave_setup(n);
        let dt = stable_dt(&state, &cfg);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| step(black_box(&state), &cfg, dt).unwrap())
        });
    }
    g.finish();
}

fn relative(c: &mut Criterion) {
    let (_, state, reference) = wave_setup(1024);
    c.bench_function("relative_energy/1024", |b| {
        b.iter(|| relative_energy(black_box(&state), &reference).unwrap())
    });
    c.bench_function("coercivity_bound/1024", |b| {
        b.iter(|| coercivity_bound(black_box(&state), &reference).unwrap())
    });
}

criterion_group!(benches, conjugate, monotonicity, solver, relative);
criterion_main!(benches);
