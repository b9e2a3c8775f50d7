mod common;

use common::random_builtin;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smallmass_core::registry::{benchmark, params};
use smallmass_core::{
    confinement_check, energy_boundedness, integrate_full, integrate_limit, integrate_pair,
    lyapunov_diagnostic, make_builtin, momentum_decay_sweep, strong_error_sweep, DtRule, Error,
    ErrorMode, ForceField, KineticEnergyModel, NoiseDrift, NoisePath, SampleBox, ScalarField,
    Scheme, State, SweepConfig, SystemSpec, TimeGrid, Vector,
};

fn v(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

fn ou() -> SystemSpec {
    make_builtin(
        "ou-linear",
        &params([("m", 1.0), ("gamma", 1.0), ("kBT", 1.0), ("omega", 1.0)]),
    )
    .unwrap()
}

fn at_rest(spec: &SystemSpec, q: Vector) -> State {
    let p = spec.psi().eval(0.0, &q);
    State::new(0.0, q, p)
}

#[test]
fn both_schemes_converge_to_a_common_fine_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (_, spec) = random_builtin("em2d", &mut rng);
    let eps = 0.1;
    let x0 = at_rest(&spec, v(&[0.5, -0.3]));
    let t = 0.5;
    let fine = TimeGrid::new(0.0, t, 12800).unwrap();
    let noise = NoisePath::generate(9, 0, fine, spec.noise_dim());
    let reference = integrate_full(&spec, eps, &x0, &fine, &noise, Scheme::SemiImplicitDrag)
        .unwrap()
        .pop()
        .unwrap();
    for scheme in [Scheme::ExplicitEm, Scheme::SemiImplicitDrag] {
        let err = |steps: usize| {
            let grid = TimeGrid::new(0.0, t, steps).unwrap();
            let end = integrate_full(&spec, eps, &x0, &grid, &noise, scheme)
                .unwrap()
                .pop()
                .unwrap();
            (&end.q - &reference.q).norm() + (&end.p - &reference.p).norm()
        };
        // Strong order at least 1/2: sixteen times the steps should cut the error by four.
        let (coarse, finer) = (err(200), err(3200));
        assert!(finer < 0.5 * coarse, "{scheme:?}: {coarse} -> {finer}");
        assert!(finer < 0.02, "{scheme:?}: {finer}");
    }
}

#[test]
fn full_positions_approach_the_limit_path_as_mass_shrinks() {
    let spec = benchmark();
    let q0 = v(&[0.4]);
    let x0 = at_rest(&spec, q0.clone());
    let t = 1.0;
    let grid = TimeGrid::new(0.0, t, 20 * 256).unwrap();
    let mut gaps = [0.0; 3];
    for path in 0..20 {
        let noise = NoisePath::generate(17, path, grid, 1);
        for (slot, eps) in [1.0 / 16.0, 1.0 / 64.0, 1.0 / 256.0]
            .into_iter()
            .enumerate()
        {
            let pair = integrate_pair(
                &spec,
                eps,
                &x0,
                &q0,
                &grid,
                &noise,
                Scheme::SemiImplicitDrag,
            )
            .unwrap();
            gaps[slot] += pair.position_gap().iter().fold(0.0f64, |m, g| m.max(*g)) / 20.0;
        }
    }
    // The sup-gap scales like eps^(1/2): a factor of about 0.5 per step here.
    assert!(gaps[1] < 0.75 * gaps[0], "{gaps:?}");
    assert!(gaps[2] < 0.75 * gaps[1], "{gaps:?}");
}

#[test]
fn suppressing_the_noise_drift_changes_the_limit_path() {
    let spec = benchmark();
    let grid = TimeGrid::new(0.0, 1.0, 400).unwrap();
    let noise = NoisePath::generate(5, 0, grid, 1);
    let with = integrate_limit(&spec, &v(&[0.0]), &grid, &noise, NoiseDrift::Include).unwrap();
    let without = integrate_limit(&spec, &v(&[0.0]), &grid, &noise, NoiseDrift::Suppress).unwrap();
    let gap = (&with[400] - &without[400]).norm();
    assert!(gap > 1e-3, "{gap}");

    let flat = ou();
    let with = integrate_limit(&flat, &v(&[0.0]), &grid, &noise, NoiseDrift::Include).unwrap();
    let without = integrate_limit(&flat, &v(&[0.0]), &grid, &noise, NoiseDrift::Suppress).unwrap();
    assert_eq!(with, without);
}

#[test]
fn ou_momentum_decays_linearly_in_mass() {
    let mut cfg = SweepConfig::new(vec![0.25, 0.125, 0.0625, 0.03125], 2.0, 1.0, 400, vec![0.5]);
    cfg.master_seed = 21;
    let report = momentum_decay_sweep(&ou(), &cfg).unwrap();
    let slope = report.slope().unwrap();
    assert!((0.8..=1.2).contains(&slope), "{slope} {:?}", report.errors);
    assert_eq!(report.completed, 400);
}

#[test]
fn benchmark_strong_error_shrinks_with_mass() {
    let mut cfg = SweepConfig::new(vec![0.125, 0.0625, 0.03125], 2.0, 1.0, 200, vec![0.0]);
    cfg.master_seed = 4;
    let sup = strong_error_sweep(&benchmark(), &cfg, ErrorMode::SupExpectation).unwrap();
    let esup = strong_error_sweep(&benchmark(), &cfg, ErrorMode::ExpectationSup).unwrap();
    for i in 0..3 {
        assert!(esup.errors[i] >= sup.errors[i] * (1.0 - 1e-12));
    }
    assert!(
        sup.errors.windows(2).all(|w| w[1] < w[0]),
        "{:?}",
        sup.errors
    );
    assert!(sup.slope().unwrap() > 0.5);
}

#[test]
fn ou_energy_stays_order_one() {
    let mut cfg = SweepConfig::new(vec![0.1, 0.01], 2.0, 1.0, 200, vec![0.0]);
    cfg.dt_rule = DtRule::EpsFraction { divisor: 10.0 };
    let table = energy_boundedness(&ou(), &cfg, 1.0).unwrap();
    assert!(table.max_min_ratio <= 2.0, "{:?}", table.values);
    for val in &table.values {
        assert!((0.2..1.0).contains(val), "{val}");
    }
}

fn explosive() -> SystemSpec {
    SystemSpec::builder(1, KineticEnergyModel::Quadratic { mass: 1.0 })
        .potential(
            ScalarField::new(|_, q| -q[0].powi(4)).with_gradient(|_, q| v(&[-4.0 * q[0].powi(3)])),
        )
        .force(ForceField::new(|_, q, _| v(&[q[0].powi(3)])))
        .build()
        .unwrap()
}

#[test]
fn runs_with_too_many_blow_ups_are_invalid() {
    let mut cfg = SweepConfig::new(vec![0.1, 0.05, 0.025], 2.0, 5.0, 100, vec![3.0]);
    cfg.dt_rule = DtRule::EpsFraction { divisor: 4.0 };
    match strong_error_sweep(&explosive(), &cfg, ErrorMode::SupExpectation) {
        Err(Error::ExperimentInvalid(msg)) => assert!(msg.contains("abort"), "{msg}"),
        other => panic!("expected an invalid experiment, got {other:?}"),
    }
}

#[test]
fn lyapunov_diagnostic_separates_stable_and_explosive_paths() {
    let spec = benchmark();
    let sample_box = SampleBox::default_for(1);
    let conf = confinement_check(&spec, &sample_box, 1000).unwrap();
    let grid = TimeGrid::new(0.0, 2.0, 2000).unwrap();
    let noise = NoisePath::generate(1, 0, grid, 1);
    let path = integrate_full(
        &spec,
        0.05,
        &at_rest(&spec, v(&[0.3])),
        &grid,
        &noise,
        Scheme::SemiImplicitDrag,
    )
    .unwrap();
    let trace = lyapunov_diagnostic(&spec, 0.05, &path, &conf, 5.0).unwrap();
    assert!(!trace.flagged, "{}", trace.growth_rate);
    assert!(!trace.truncated);

    let bad = explosive();
    let conf = confinement_check(&bad, &sample_box, 1000).unwrap();
    let mut states = vec![at_rest(&bad, v(&[2.0]))];
    let dt = 1e-3;
    for _ in 0..400 {
        let s = states.last().unwrap();
        let q = s.q[0];
        let p = s.p[0];
        let next = State::new(
            s.t + dt,
            v(&[q + dt * p]),
            v(&[p + dt * (-p + 5.0 * q.powi(3))]),
        );
        if !next.is_finite() {
            break;
        }
        states.push(next);
    }
    let trace = lyapunov_diagnostic(&bad, 1.0, &states, &conf, 5.0).unwrap();
    assert!(trace.flagged, "{}", trace.growth_rate);
}
