//! Acceptance suite: one `PASS`/`FAIL` line per criterion.
//!
//! Run a subset by passing criterion numbers, e.g.
//! `cargo test -p smallmass-core --test acceptance -- 1 3 9`.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smallmass_core::linalg::sym_part;
use smallmass_core::registry::{benchmark, params};
use smallmass_core::{
    check_assumptions, integrate_full, j_matrix, limiting_coeffs, lyap_quadrature, lyap_solve,
    make_builtin, run_ensemble, spd_floor, stability_margin, ErrorMode, KineticEnergyModel,
    LyapunovProblem, Matrix, MatrixField, NoisePath, NuclearScaling, Observables, PolynomialRadial,
    Quantity, SampleBox, Scheme, State, Status, SweepConfig, SystemSpec, TimeCoefficient, TimeGrid,
    Vector, VectorField,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn uniform_matrix<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Matrix {
    Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0) * scale)
}

fn random_spd<R: Rng>(rng: &mut R, n: usize, shift: f64) -> Matrix {
    let l = uniform_matrix(rng, n, 1.0);
    &l * l.transpose() + Matrix::identity(n, n) * shift
}

fn random_point<R: Rng>(rng: &mut R, n: usize) -> (f64, Vector) {
    let t = rng.random_range(0.0..2.0);
    (t, Vector::from_fn(n, |_, _| rng.random_range(-2.0..2.0)))
}

/// Position-dependent SPD drag `G + (1 + ½ sin(w·q)) I` and a linear vector
/// potential `ψ = C q`, with noise fixed by fluctuation-dissipation.
fn random_fd_spec<R: Rng>(rng: &mut R, n: usize, kbt: f64, metric: MatrixField) -> SystemSpec {
    let g = random_spd(rng, n, 0.1);
    let w = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let wk = w.clone();
    let drag = MatrixField::new(move |_, q: &Vector| {
        &g + Matrix::identity(q.len(), q.len()) * (1.0 + 0.5 * w.dot(q).sin())
    })
    .with_partial(move |_, q: &Vector, k| {
        Matrix::identity(q.len(), q.len()) * (0.5 * wk[k] * wk.dot(q).cos())
    });
    let c = uniform_matrix(rng, n, 1.5);
    let cj = c.clone();
    let psi = VectorField::new(move |_, q: &Vector| &c * q)
        .with_jacobian(move |_, _| cj.clone())
        .with_jacobian_partial(move |_, q: &Vector, _| Matrix::zeros(q.len(), q.len()));
    SystemSpec::builder(n, KineticEnergyModel::Quadratic { mass: 1.0 })
        .metric(metric)
        .psi(psi)
        .drag(drag)
        .fluctuation_dissipation(kbt)
        .build()
        .expect("random spec is well formed")
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=4);
        let kbt = rng.random_range(0.2..3.0);
        let spec = random_fd_spec(&mut rng, n, kbt, MatrixField::identity(n));
        let (t, q) = random_point(&mut rng, n);
        let j = j_matrix(&spec, t, &q).expect("J is solvable");
        worst = worst.max((j - Matrix::identity(n, n) * kbt).norm());
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-8 && within(elapsed, 5.0),
        format!(
            "J = kBT I on 50 specs: max Frobenius error {worst:.2e} (<= 1e-8), {:.2} s (< 5 s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=4);
        let kbt = rng.random_range(0.2..3.0);
        // Diagonal metric g with g_ii = a_i + b_i sin²(q_{i+1}); A = g⁻¹.
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.5)).collect();
        let b2 = b.clone();
        let g_diag = move |q: &Vector, i: usize| {
            let s = q[(i + 1) % q.len()].sin();
            a[i] + b[i] * s * s
        };
        let g_partial = move |q: &Vector, i: usize, k: usize| {
            let j = (i + 1) % q.len();
            if k == j {
                b2[i] * (2.0 * q[j]).sin()
            } else {
                0.0
            }
        };
        let gd = g_diag.clone();
        let g_at = g_diag.clone();
        let metric = MatrixField::new(move |_, q: &Vector| {
            Matrix::from_diagonal(&Vector::from_fn(q.len(), |i, _| 1.0 / gd(q, i)))
        })
        .with_partial(move |_, q: &Vector, k| {
            Matrix::from_diagonal(&Vector::from_fn(q.len(), |i, _| {
                -g_partial(q, i, k) / g_diag(q, i).powi(2)
            }))
        });
        let spec = random_fd_spec(&mut rng, n, kbt, metric);
        let (t, q) = random_point(&mut rng, n);
        let j = j_matrix(&spec, t, &q).expect("J is solvable");
        let g = Matrix::from_diagonal(&Vector::from_fn(n, |i, _| g_at(&q, i)));
        worst = worst.max((j - g * kbt).norm());
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-8 && within(elapsed, 5.0),
        format!(
            "J = kBT g on 50 diagonal-metric specs: max Frobenius error {worst:.2e} (<= 1e-8), {:.2} s (< 5 s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let n = 1 + i % 6;
        let scale = rng.random_range(0.05..1.0);
        let s = random_spd(&mut rng, n, scale);
        let w = uniform_matrix(&mut rng, n, 2.0);
        let b = s + (&w - w.transpose());
        let rhs = random_spd(&mut rng, n, 0.0);
        let prob = LyapunovProblem::new(b, rhs).expect("valid problem");
        let direct = lyap_solve(&prob).expect("stable problem");
        let quad = lyap_quadrature(&prob, 1e-11).expect("quadrature converges");
        worst = worst.max((direct - quad).norm());
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-8 && within(elapsed, 30.0),
        format!(
            "direct vs quadrature Lyapunov solve on 200 problems (n <= 6): max difference {worst:.2e} (<= 1e-8), {:.2} s (< 30 s)",
            elapsed.as_secs_f64()
        ),
    )
}

const RATE_WINDOW: (f64, f64) = (0.85, 1.15);
const N_PATHS: usize = 10_000;

fn in_window(slope: Option<f64>) -> bool {
    slope.is_some_and(|s| s >= RATE_WINDOW.0 && s <= RATE_WINDOW.1)
}

fn fmt_slope(slope: Option<f64>) -> String {
    slope.map_or("none".into(), |s| format!("{s:.3}"))
}

fn benchmark_sweep_config(seed: u64) -> SweepConfig {
    let eps: Vec<f64> = (4..=9).map(|k| 2f64.powi(-k)).collect();
    let mut cfg = SweepConfig::new(eps, 2.0, 1.0, N_PATHS, vec![0.5]);
    cfg.master_seed = seed;
    cfg.refine = true;
    cfg
}

/// Criteria 4, 5 and 6 share one coupled ensemble on the benchmark.
fn criteria_4_to_6() -> [Outcome; 3] {
    let start = Instant::now();
    let cfg = benchmark_sweep_config(4);
    let obs = Observables {
        error: true,
        error_without_drift: true,
        momentum: true,
        energy_order: None,
    };
    let summary = match run_ensemble(&benchmark(), &cfg, obs) {
        Ok(s) => s,
        Err(e) => {
            let msg = format!("benchmark ensemble failed: {e}");
            return [
                outcome(false, &msg),
                outcome(false, &msg),
                outcome(false, msg),
            ];
        }
    };
    let elapsed = start.elapsed().as_secs_f64();
    let report = |q| {
        summary
            .report(q, ErrorMode::SupExpectation)
            .expect("observable was recorded")
    };
    let with = report(Quantity::PositionError);
    let without = report(Quantity::PositionErrorWithoutDrift);
    let momentum = report(Quantity::Momentum);

    let halving = with.dt_halving.as_ref().expect("refined leg present");
    let c4 = outcome(
        in_window(with.slope()) && halving.relative_change < 0.10,
        format!(
            "strong rate: slope {} (+/- {:.3}) in [0.85, 1.15]; dt-halving change at eps = {} is {:.2}% (< 10%); {} paths, {:.0} s; errors {:?}",
            fmt_slope(with.slope()),
            with.fit.as_ref().map_or(f64::NAN, |f| f.slope_stderr),
            halving.eps,
            100.0 * halving.relative_change,
            with.completed,
            elapsed,
            with.errors
        ),
    );
    let gap = with.slope().zip(without.slope()).map(|(a, b)| a - b);
    let c5 = outcome(
        gap.is_some_and(|g| g >= 0.3),
        format!(
            "noise-induced drift: slope with S {} vs without S {}, difference {} (>= 0.3); errors without S {:?}",
            fmt_slope(with.slope()),
            fmt_slope(without.slope()),
            fmt_slope(gap),
            without.errors
        ),
    );
    let c6 = outcome(
        in_window(momentum.slope()),
        format!(
            "momentum decay: slope {} (+/- {:.3}) in [0.85, 1.15]; values {:?}",
            fmt_slope(momentum.slope()),
            momentum.fit.as_ref().map_or(f64::NAN, |f| f.slope_stderr),
            momentum.errors
        ),
    );
    [c4, c5, c6]
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let mut cfg = SweepConfig::new(vec![0.1, 0.01, 0.001], 2.0, 1.0, 1000, vec![0.5]);
    cfg.master_seed = 7;
    let obs = Observables {
        energy_order: Some(1.0),
        ..Observables::default()
    };
    match run_ensemble(&benchmark(), &cfg, obs).and_then(|s| s.energy_table()) {
        Ok(table) => outcome(
            table.max_min_ratio <= 2.0,
            format!(
                "sup_t E[K] over eps {:?}: {:?}, max/min {:.3} (<= 2); {:.0} s",
                table.eps_list,
                table.values,
                table.max_min_ratio,
                start.elapsed().as_secs_f64()
            ),
        ),
        Err(e) => outcome(false, format!("energy ensemble failed: {e}")),
    }
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let spec = benchmark();
    let poly = PolynomialRadial::new(
        1,
        2,
        vec![
            TimeCoefficient::constant(0.5),
            TimeCoefficient::constant(0.5),
        ],
    )
    .expect("valid polynomial");
    let models = [
        KineticEnergyModel::PolynomialRadial(poly),
        KineticEnergyModel::NuclearLog {
            c1: 1.0,
            c2: 1.0,
            mass: 1.0,
            scaling: NuclearScaling::ZetaScaled,
        },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut identical = true;
    for _ in 0..100 {
        let (t, q) = random_point(&mut rng, 1);
        let reference = limiting_coeffs(&spec, t, &q).expect("coefficients");
        for m in &models {
            let other =
                limiting_coeffs(&spec.with_kinetic(m.clone()), t, &q).expect("coefficients");
            identical &= other == reference;
        }
    }

    let poly_spec = make_builtin(
        "poly1d",
        &params([
            ("k1", 1.0),
            ("k2", 2.0),
            ("d1", 0.5),
            ("d2", 0.5),
            ("gamma0", 2.0),
            ("gamma1", 1.0),
            ("kBT", 1.0),
        ]),
    )
    .expect("valid poly1d");
    let mut cfg = benchmark_sweep_config(8);
    cfg.refine = false;
    let sweep = run_ensemble(
        &poly_spec,
        &cfg,
        Observables {
            error: true,
            ..Observables::default()
        },
    )
    .and_then(|s| s.report(Quantity::PositionError, ErrorMode::SupExpectation));
    match sweep {
        Ok(rep) => outcome(
            identical && in_window(rep.slope()),
            format!(
                "limiting coefficients bitwise identical across quadratic/polynomial/log kinetic energies: {identical}; \
                 polynomial K = zeta/2 + zeta^2/2 strong rate slope {} (+/- {:.3}) in [0.85, 1.15]; {:.0} s; errors {:?}",
                fmt_slope(rep.slope()),
                rep.fit.as_ref().map_or(f64::NAN, |f| f.slope_stderr),
                start.elapsed().as_secs_f64(),
                rep.errors
            ),
        ),
        Err(e) => outcome(false, format!("identical: {identical}; polynomial sweep failed: {e}")),
    }
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let (mut eig_floor, mut product, mut inverse) = (0.0f64, 0.0f64, 0.0f64);
    let mut singular = 0;
    for i in 0..1000 {
        let n = 1 + i % 6;
        // Re(eig M) is bounded below by the floor of sym(M).
        let scale = rng.random_range(0.1..5.0);
        let m = uniform_matrix(&mut rng, n, scale);
        let margin = stability_margin(&m).expect("finite");
        let floor = spd_floor(&sym_part(&m)).expect("symmetric");
        eig_floor = eig_floor.max(floor - margin);

        // margin(A B) >= floor(A) floor(sym B) for SPD A.
        let scale = rng.random_range(0.01..1.0);
        let a = random_spd(&mut rng, n, scale);
        let w = uniform_matrix(&mut rng, n, 2.0);
        let scale = rng.random_range(0.01..1.0);
        let b = random_spd(&mut rng, n, scale) + (&w - w.transpose());
        let lam_a = spd_floor(&a).expect("symmetric");
        let lam_b = spd_floor(&sym_part(&b)).expect("symmetric");
        let margin = stability_margin(&(&a * &b)).expect("finite");
        product = product.max(lam_a * lam_b - margin);

        // sym(M⁻¹) has floor >= λ/‖M‖² when sym(M) has floor λ > 0.
        match b.clone().try_inverse() {
            Some(inv) => {
                let norm = b.singular_values().max();
                let floor = spd_floor(&sym_part(&inv)).expect("symmetric");
                inverse = inverse.max(lam_b / (norm * norm) - floor);
            }
            None => singular += 1,
        }
    }
    let worst = eig_floor.max(product).max(inverse);
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-10 && singular == 0 && within(elapsed, 10.0),
        format!(
            "spectral bounds on 1000 draws each: max violation eigenvalue floor {eig_floor:.2e}, SPD product {product:.2e}, inverse floor {inverse:.2e} (<= 1e-10), \
             {singular} singular; {:.2} s (< 10 s)",
            elapsed.as_secs_f64()
        ),
    )
}

/// Sample mean and its standard error.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let (m, kbt, omega, eps) = (1.0, 1.0, 1.0, 0.05);
    let spec = make_builtin(
        "ou-linear",
        &params([("m", m), ("gamma", 1.0), ("kBT", kbt), ("omega", omega)]),
    )
    .expect("valid ou-linear");
    let t_final = 10.0;
    let grid = TimeGrid::with_max_step(0.0, t_final, eps / 20.0).expect("grid");
    let x0 = State::new(0.0, Vector::zeros(1), Vector::zeros(1));
    let n_paths = 4000;
    let mut q = Vec::with_capacity(n_paths);
    let mut u2 = Vec::with_capacity(n_paths);
    for i in 0..n_paths {
        let noise = NoisePath::generate(10, i as u64, grid, 1);
        let end = integrate_full(&spec, eps, &x0, &grid, &noise, Scheme::SemiImplicitDrag)
            .expect("ou path stays finite")
            .pop()
            .expect("non-empty path");
        q.push(end.q[0]);
        u2.push(end.p[0] * end.p[0]);
    }
    let (q_mean, _) = mean_se(&q);
    let centered: Vec<f64> = q.iter().map(|x| (x - q_mean).powi(2)).collect();
    let (var_q, var_se) = mean_se(&centered);
    let energy: Vec<f64> = u2.iter().map(|x| x / (2.0 * eps * m)).collect();
    let (e_k, e_se) = mean_se(&energy);
    let (e_u2, u2_se) = mean_se(&u2);
    let checks = [
        ("Var(q)", var_q, var_se, kbt / (omega * omega)),
        ("E[K]", e_k, e_se, kbt / 2.0),
        ("E[u^2]", e_u2, u2_se, eps * m * kbt),
    ];
    let pass = checks
        .iter()
        .all(|(_, got, se, want)| (got - want).abs() <= 3.0 * se);
    let detail = checks
        .iter()
        .map(|(name, got, se, want)| {
            format!("{name} {got:.5} vs {want:.5} ({:.2} SE)", (got - want) / se)
        })
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        pass,
        format!(
            "Gibbs moments at T = 10, eps = {eps}, {n_paths} paths: {detail}; {:.0} s",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_11() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let eps = [1.0, 0.1, 0.01];
    let mut failures = Vec::new();
    let mut checked = 0;
    for name in common::names() {
        for draw in 0..5u64 {
            let (p, spec) = common::random_builtin(name, &mut rng);
            let sample_box = SampleBox {
                seed: draw,
                ..SampleBox::default_for(spec.dim())
            };
            let report = check_assumptions(&spec, &sample_box, 2000, &eps).expect("report");
            checked += 1;
            if !report.passed() {
                let ids: Vec<&str> = report.failures().map(|e| e.id.as_str()).collect();
                failures.push(format!("{name} {p:?}: {ids:?}"));
            }
        }
    }

    let poly = make_builtin(
        "poly1d",
        &params([
            ("k1", 2.0),
            ("k2", 3.0),
            ("d2", 1.0),
            ("d3", 0.0),
            ("gamma0", 1.0),
            ("kBT", 1.0),
        ]),
    )
    .expect("valid poly1d");
    let poly_report =
        check_assumptions(&poly, &SampleBox::default_for(1), 2000, &eps).expect("report");
    let poly_entry = poly_report
        .entry("poly-leading-coefficients")
        .expect("entry");
    let poly_caught = poly_entry.status == Status::Fail && poly_entry.witness.is_some();

    let decaying = SystemSpec::builder(2, KineticEnergyModel::Quadratic { mass: 1.0 })
        .drag(MatrixField::new(|_, q: &Vector| {
            Matrix::from_diagonal(&Vector::from_vec(vec![1.0, (-q[1] * q[1]).exp()]))
        }))
        .fluctuation_dissipation(1.0)
        .build()
        .expect("valid spec");
    let drag_report =
        check_assumptions(&decaying, &SampleBox::default_for(2), 2000, &eps).expect("report");
    let drag_entry = drag_report.entry("drag-floor").expect("entry");
    let drag_witness = drag_entry.witness.clone();
    let drag_caught = drag_entry.status == Status::Fail && drag_witness.is_some();

    outcome(
        failures.is_empty() && poly_caught && drag_caught,
        format!(
            "{checked} random builtin draws, {} rejected {:?}; d_k2 = 0 flagged: {poly_caught}; \
             decaying drag flagged: {drag_caught} (witness q = {:?}); {:.1} s",
            failures.len(),
            failures,
            drag_witness.map(|w| w.q),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let wanted = |k: usize| selected.is_empty() || selected.contains(&k);

    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut run = |k: usize, f: &dyn Fn() -> Outcome| {
        if wanted(k) {
            let o = f();
            report(k, &o);
            results.push((k, o));
        }
    };
    run(1, &criterion_1);
    run(2, &criterion_2);
    run(3, &criterion_3);
    if (4..=6).any(wanted) {
        for (k, o) in (4..=6).zip(criteria_4_to_6()) {
            if wanted(k) {
                report(k, &o);
                results.push((k, o));
            }
        }
    }
    let mut run = |k: usize, f: &dyn Fn() -> Outcome| {
        if wanted(k) {
            let o = f();
            report(k, &o);
            results.push((k, o));
        }
    };
    run(7, &criterion_7);
    run(8, &criterion_8);
    run(9, &criterion_9);
    run(10, &criterion_10);
    run(11, &criterion_11);

    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn report(k: usize, o: &Outcome) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!("{tag} criterion {k}: {}", o.detail);
}
