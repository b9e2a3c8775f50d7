//! Random parameter draws inside the documented ranges of every builtin.

#![allow(dead_code)]

use rand::Rng;
use smallmass_core::registry::builtin_names;
use smallmass_core::{make_builtin, ParamValue, Params, SystemSpec};

fn put(p: &mut Params, key: &str, v: f64) {
    p.insert(key.to_string(), ParamValue::Num(v));
}

fn common<R: Rng>(p: &mut Params, rng: &mut R, keys: &[&str]) {
    for &k in keys {
        let v = match k {
            "m" => rng.random_range(0.3..3.0),
            "kBT" => rng.random_range(0.2..2.0),
            "omega" => rng.random_range(0.3..2.0),
            "gamma" | "gamma0" => rng.random_range(0.5..3.0),
            _ => unreachable!("{k}"),
        };
        put(p, k, v);
    }
}

/// A random parameter set for `name`, drawn from inside its documented ranges.
pub fn random_params<R: Rng>(name: &str, rng: &mut R) -> Params {
    let mut p = Params::new();
    match name {
        "ou-linear" => common(&mut p, rng, &["m", "gamma", "kBT", "omega"]),
        "em1d" => {
            common(&mut p, rng, &["m", "gamma0", "kBT", "omega"]);
            let g0 = p["gamma0"].clone();
            let ParamValue::Num(g0) = g0 else {
                unreachable!()
            };
            put(&mut p, "gamma1", rng.random_range(-0.9..0.9) * g0);
            put(&mut p, "e", rng.random_range(-1.5..1.5));
            put(&mut p, "phi0", rng.random_range(-1.0..1.0));
            put(&mut p, "phi1", rng.random_range(-1.0..1.0));
            put(&mut p, "mod_amp", rng.random_range(-0.5..0.5));
            put(&mut p, "mod_freq", rng.random_range(0.5..3.0));
        }
        "em2d" => {
            common(&mut p, rng, &["m", "gamma", "kBT", "omega"]);
            let ParamValue::Num(g) = p["gamma"].clone() else {
                unreachable!()
            };
            put(&mut p, "gamma_amp", rng.random_range(-0.9..0.9) * g);
            put(&mut p, "e", rng.random_range(-1.5..1.5));
            put(&mut p, "B", rng.random_range(-2.0..2.0));
            put(&mut p, "B_amp", rng.random_range(-0.5..0.5));
            put(&mut p, "B_freq", rng.random_range(0.5..3.0));
            put(&mut p, "fx", rng.random_range(-1.0..1.0));
            put(&mut p, "fy", rng.random_range(-1.0..1.0));
        }
        "manifold1d" => {
            common(&mut p, rng, &["m", "gamma0", "kBT", "omega"]);
            let ParamValue::Num(g0) = p["gamma0"].clone() else {
                unreachable!()
            };
            put(&mut p, "gamma1", rng.random_range(-0.9..0.9) * g0);
            put(&mut p, "g0", rng.random_range(0.5..2.0));
            put(&mut p, "g1", rng.random_range(0.0..1.5));
        }
        "manifold2d" => {
            common(&mut p, rng, &["m", "gamma", "kBT", "omega"]);
            put(&mut p, "g0", rng.random_range(0.5..2.0));
            put(&mut p, "g1", rng.random_range(0.0..1.5));
        }
        "poly1d" => {
            common(&mut p, rng, &["gamma0", "kBT", "omega"]);
            let ParamValue::Num(g0) = p["gamma0"].clone() else {
                unreachable!()
            };
            put(&mut p, "gamma1", rng.random_range(-0.9..0.9) * g0);
            let k1 = rng.random_range(1..=4u32);
            let k2 = rng.random_range(k1..=4u32);
            put(&mut p, "k1", k1 as f64);
            put(&mut p, "k2", k2 as f64);
            for l in k1..=k2 {
                let d = if l == k1 || l == k2 || rng.random_bool(0.5) {
                    rng.random_range(0.2..2.0)
                } else {
                    0.0
                };
                put(&mut p, &format!("d{l}"), d);
            }
            put(&mut p, "a", rng.random_range(0.5..2.0));
        }
        "nuclear1d" => {
            common(&mut p, rng, &["m", "gamma0", "kBT", "omega"]);
            let ParamValue::Num(g0) = p["gamma0"].clone() else {
                unreachable!()
            };
            put(&mut p, "gamma1", rng.random_range(-0.9..0.9) * g0);
            put(&mut p, "c1", rng.random_range(0.1..5.0));
            put(&mut p, "c2", rng.random_range(0.1..5.0));
            let scaling = if rng.random_bool(0.5) {
                "zeta-scaled"
            } else {
                "unscaled"
            };
            p.insert("scaling".into(), ParamValue::Text(scaling.into()));
        }
        other => panic!("no sampler for builtin '{other}'"),
    }
    p
}

pub fn random_builtin<R: Rng>(name: &str, rng: &mut R) -> (Params, SystemSpec) {
    let p = random_params(name, rng);
    let spec = make_builtin(name, &p).unwrap_or_else(|e| panic!("{name} {p:?}: {e}"));
    (p, spec)
}

pub fn names() -> Vec<&'static str> {
    builtin_names()
}

/// Builtins whose noise satisfies `Σ = 2 k_BT γ` and whose metric is constant.
pub const EUCLIDEAN_FD: [&str; 3] = ["ou-linear", "em1d", "em2d"];
/// Builtins with fluctuation-dissipation noise and a position-dependent metric.
pub const MANIFOLD_FD: [&str; 2] = ["manifold1d", "manifold2d"];
