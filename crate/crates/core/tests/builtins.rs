mod common;

use common::{names, random_builtin};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smallmass_core::{
    check_assumptions, confinement_check, grad_p_h, grad_q_h, hamiltonian, make_builtin,
    registry::params, SampleBox, State, Status, SystemSpec, Vector,
};

fn random_state<R: Rng>(spec: &SystemSpec, rng: &mut R) -> State {
    let n = spec.dim();
    let q = Vector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    let t = rng.random_range(0.0..2.0);
    let psi = spec.psi().eval(t, &q);
    let p = psi + Vector::from_fn(n, |_, _| rng.random_range(-1.5..1.5));
    State::new(t, q, p)
}

fn central_difference(spec: &SystemSpec, eps: f64, s: &State, momentum: bool, i: usize) -> f64 {
    let x = if momentum { s.p[i] } else { s.q[i] };
    let h = 1e-5 * x.abs().max(1.0);
    let shifted = |d: f64| {
        let mut s = s.clone();
        if momentum {
            s.p[i] += d;
        } else {
            s.q[i] += d;
        }
        hamiltonian(spec, eps, &s).unwrap()
    };
    (shifted(h) - shifted(-h)) / (2.0 * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hamiltonian_gradients_match_finite_differences(
        which in 0usize..7,
        seed in any::<u64>(),
        eps in 0.05f64..1.0,
    ) {
        let name = names()[which];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, spec) = random_builtin(name, &mut rng);
        let s = random_state(&spec, &mut rng);
        let gp = grad_p_h(&spec, eps, &s).unwrap();
        let gq = grad_q_h(&spec, eps, &s).unwrap();
        for i in 0..spec.dim() {
            let fp = central_difference(&spec, eps, &s, true, i);
            let fq = central_difference(&spec, eps, &s, false, i);
            prop_assert!((gp[i] - fp).abs() <= 1e-5 * (1.0 + fp.abs()),
                "{name} {p:?}: d/dp_{i} {} vs {fp}", gp[i]);
            prop_assert!((gq[i] - fq).abs() <= 1e-4 * (1.0 + fq.abs()),
                "{name} {p:?}: d/dq_{i} {} vs {fq}", gq[i]);
        }
    }

    #[test]
    fn momentum_gradient_vanishes_on_the_slow_manifold(
        which in 0usize..7,
        seed in any::<u64>(),
        eps in 0.05f64..1.0,
    ) {
        let name = names()[which];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, spec) = random_builtin(name, &mut rng);
        let mut s = random_state(&spec, &mut rng);
        s.p = spec.psi().eval(s.t, &s.q);
        let gp = grad_p_h(&spec, eps, &s).unwrap();
        prop_assert!(gp.norm() <= 1e-12, "{name}: {gp}");
    }
}

#[test]
fn every_builtin_passes_validation_on_random_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for name in names() {
        for draw in 0..25 {
            let (p, spec) = random_builtin(name, &mut rng);
            let sample_box = SampleBox {
                seed: draw,
                ..SampleBox::default_for(spec.dim())
            };
            let report = check_assumptions(&spec, &sample_box, 1000, &[1.0, 0.1, 0.01]).unwrap();
            assert!(report.passed(), "{name} {p:?}\n{}", report.to_table());
            let conf = confinement_check(&spec, &sample_box, 1000).unwrap();
            assert_eq!(conf.status, Status::Pass, "{name} {p:?}: {conf:?}");
        }
    }
}

#[test]
fn vanishing_leading_coefficient_is_reported_with_a_witness() {
    let spec = make_builtin(
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
    .unwrap();
    let report = check_assumptions(&spec, &SampleBox::default_for(1), 1000, &[1.0, 0.1]).unwrap();
    assert!(!report.passed());
    let entry = report.entry("poly-leading-coefficients").unwrap();
    assert_eq!(entry.status, Status::Fail);
    assert!(entry.witness.is_some());
}

#[test]
fn unknown_or_out_of_range_parameters_are_rejected() {
    assert!(make_builtin("ou-linear", &params([("m", 1.0), ("gamma", 1.0)])).is_err());
    assert!(make_builtin(
        "ou-linear",
        &params([("m", 1.0), ("gamma", -1.0), ("kBT", 1.0)])
    )
    .is_err());
    assert!(make_builtin(
        "ou-linear",
        &params([("m", 1.0), ("gamma", 1.0), ("kBT", 1.0), ("mass", 1.0)])
    )
    .is_err());
    assert!(make_builtin(
        "em1d",
        &params([("m", 1.0), ("gamma0", 1.0), ("gamma1", 1.0), ("kBT", 1.0)])
    )
    .is_err());
}
