use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use smallmass_core::registry::{benchmark, params};
use smallmass_core::{
    expm, limiting_coeffs, lyap_solve, make_builtin, run_ensemble, step_full, step_limit,
    LyapunovProblem, Matrix, NoisePath, Observables, Scheme, State, SweepConfig, SystemSpec,
    TimeGrid, Vector,
};

fn em2d() -> SystemSpec {
    make_builtin(
        "em2d",
        &params([
            ("m", 1.0),
            ("e", 1.0),
            ("B", 1.0),
            ("gamma", 2.0),
            ("gamma_amp", 0.5),
            ("kBT", 1.0),
            ("omega", 1.0),
        ]),
    )
    .unwrap()
}

fn manifold2d() -> SystemSpec {
    make_builtin("manifold2d", &params([("kBT", 1.0)])).unwrap()
}

fn stable(n: usize) -> LyapunovProblem {
    let g = Matrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.2 - 0.4);
    let b = &g * g.transpose() + Matrix::identity(n, n) + (&g - g.transpose());
    LyapunovProblem::new(b, Matrix::identity(n, n)).unwrap()
}

fn steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("step");
    for (name, spec) in [
        ("benchmark", benchmark()),
        ("em2d", em2d()),
        ("manifold2d", manifold2d()),
    ] {
        let n = spec.dim();
        let q = Vector::from_element(n, 0.3);
        let p = spec.psi().eval(0.0, &q) + Vector::from_element(n, 0.1);
        let s = State::new(0.0, q.clone(), p);
        let dw = vec![0.01; spec.noise_dim()];
        for scheme in [Scheme::SemiImplicitDrag, Scheme::ExplicitEm] {
            group.bench_function(BenchmarkId::new(format!("full/{scheme:?}"), name), |b| {
                b.iter(|| step_full(&spec, 0.01, black_box(&s), 5e-4, &dw, scheme).unwrap())
            });
        }
        group.bench_function(BenchmarkId::new("limit", name), |b| {
            b.iter(|| step_limit(&spec, 0.0, black_box(&q), 5e-4, &dw).unwrap())
        });
    }
    group.finish();
}

fn coefficients(c: &mut Criterion) {
    let mut group = c.benchmark_group("limiting_coeffs");
    for (name, spec) in [
        ("benchmark", benchmark()),
        ("em2d", em2d()),
        ("manifold2d", manifold2d()),
    ] {
        let q = Vector::from_element(spec.dim(), 0.3);
        group.bench_function(name, |b| {
            b.iter(|| limiting_coeffs(&spec, 0.0, black_box(&q)).unwrap())
        });
    }
    group.finish();
}

fn linalg(c: &mut Criterion) {
    let mut group = c.benchmark_group("linalg");
    for n in [2, 4, 6] {
        let prob = stable(n);
        group.bench_function(BenchmarkId::new("lyap_solve", n), |b| {
            b.iter(|| lyap_solve(black_box(&prob)).unwrap())
        });
        let m = prob.b.clone() * 0.5;
        group.bench_function(BenchmarkId::new("expm", n), |b| {
            b.iter(|| expm(black_box(&m)).unwrap())
        });
    }
    group.finish();
}

fn noise(c: &mut Criterion) {
    let grid = TimeGrid::new(0.0, 1.0, 10_000).unwrap();
    c.bench_function("noise/generate_10k", |b| {
        b.iter(|| NoisePath::generate(1, black_box(7), grid, 1))
    });
}

fn ensemble(c: &mut Criterion) {
    let spec = benchmark();
    let mut cfg = SweepConfig::new(
        vec![1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0],
        2.0,
        1.0,
        128,
        vec![0.5],
    );
    cfg.master_seed = 3;
    let obs = Observables {
        error: true,
        ..Observables::default()
    };
    let mut group = c.benchmark_group("ensemble");
    group.sample_size(10);
    group.bench_function("benchmark_128_paths", |b| {
        b.iter(|| run_ensemble(&spec, &cfg, obs).unwrap())
    });
    group.finish();
}

criterion_group!(benches, steps, coefficients, linalg, noise, ensemble);
criterion_main!(benches);
