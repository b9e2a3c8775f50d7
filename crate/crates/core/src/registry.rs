//! Builtin example systems, addressed by name with scalar parameters.
//!
//! The parameter schema of every system is available at runtime through
//! [`manifest`] and is shipped as `registry.json` next to this crate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ForceField;
use crate::model::{
    KineticEnergyModel, Matrix, MatrixField, NoiseField, NuclearScaling, PolynomialRadial,
    ScalarField, SystemSpec, TimeCoefficient, Vector, VectorField,
};

/// A scalar parameter value: a number, or text for enumerated options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Num(f64),
    Text(String),
}

impl From<f64> for ParamValue {
    fn from(x: f64) -> Self {
        ParamValue::Num(x)
    }
}

impl From<&str> for ParamValue {
    fn from(s: &str) -> Self {
        ParamValue::Text(s.to_string())
    }
}

pub type Params = BTreeMap<String, ParamValue>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamDoc {
    pub name: &'static str,
    pub required: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub default: Option<ParamValue>,
    pub range: &'static str,
    pub description: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemDoc {
    pub name: &'static str,
    pub dim: usize,
    pub kinetic: &'static str,
    pub description: &'static str,
    pub params: Vec<ParamDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub systems: Vec<SystemDoc>,
}

fn req(name: &'static str, range: &'static str, description: &'static str) -> ParamDoc {
    ParamDoc {
        name,
        required: true,
        default: None,
        range,
        description,
    }
}

fn opt(
    name: &'static str,
    default: f64,
    range: &'static str,
    description: &'static str,
) -> ParamDoc {
    ParamDoc {
        name,
        required: false,
        default: Some(ParamValue::Num(default)),
        range,
        description,
    }
}

const KBT: &str = "thermal energy k_B T; noise is fixed by Sigma = 2 kBT gamma";

/// Machine-readable description of every builtin system.
pub fn manifest() -> Manifest {
    let systems = vec![
        SystemDoc {
            name: "ou-linear",
            dim: 1,
            kinetic: "quadratic",
            description: "Harmonic particle with constant drag: V = omega^2 q^2 / 2, psi = 0, A = 1.",
            params: vec![
                req("m", "> 0", "mass scale of the kinetic energy"),
                req("gamma", "> 0", "constant drag coefficient"),
                req("kBT", "> 0", KBT),
                opt("omega", 1.0, "finite", "harmonic frequency"),
            ],
        },
        SystemDoc {
            name: "em1d",
            dim: 1,
            kinetic: "quadratic",
            description: "Charged particle in one dimension: gamma = gamma0 + gamma1 sin q, \
                          psi = e (phi0 + phi1 sin q (1 + mod_amp sin(mod_freq t))), V = omega^2 q^2 / 2.",
            params: vec![
                req("m", "> 0", "mass scale of the kinetic energy"),
                req("gamma0", "> |gamma1|", "mean drag"),
                req("kBT", "> 0", KBT),
                opt("gamma1", 0.0, "|gamma1| < gamma0", "drag modulation amplitude in q"),
                opt("e", 1.0, "finite", "charge"),
                opt("phi0", 0.0, "finite", "constant part of the vector potential"),
                opt("phi1", 0.0, "finite", "amplitude of the sin q part of the vector potential"),
                opt("mod_amp", 0.0, "finite", "relative time modulation of the vector potential"),
                opt("mod_freq", 1.0, "finite", "angular frequency of the time modulation"),
                opt("omega", 1.0, "finite", "harmonic frequency"),
            ],
        },
        SystemDoc {
            name: "em2d",
            dim: 2,
            kinetic: "quadratic",
            description: "Charged particle in a uniform magnetic field B(t) = B (1 + B_amp sin(B_freq t)) \
                          in symmetric gauge psi = e B(t) (-q2, q1) / 2, isotropic drag \
                          gamma + gamma_amp sin q1, potential omega^2 |q|^2 / 2 and constant force (fx, fy).",
            params: vec![
                req("m", "> 0", "mass scale of the kinetic energy"),
                req("e", "finite", "charge"),
                req("B", "finite", "magnetic field strength"),
                req("gamma", "> |gamma_amp|", "mean isotropic drag"),
                req("kBT", "> 0", KBT),
                opt("gamma_amp", 0.0, "|gamma_amp| < gamma", "drag modulation amplitude in q1"),
                opt("B_amp", 0.0, "finite", "relative time modulation of B"),
                opt("B_freq", 1.0, "finite", "angular frequency of the field modulation"),
                opt("omega", 0.0, "finite", "harmonic frequency"),
                opt("fx", 0.0, "finite", "constant external force, first component"),
                opt("fy", 0.0, "finite", "constant external force, second component"),
            ],
        },
        SystemDoc {
            name: "manifold1d",
            dim: 1,
            kinetic: "quadratic",
            description: "Particle on a curved line: metric g = g0 + g1 sin^2 q, A = 1/g, \
                          gamma = gamma0 + gamma1 sin q, V = omega^2 q^2 / 2.",
            params: vec![
                req("kBT", "> 0", KBT),
                opt("m", 1.0, "> 0", "mass scale of the kinetic energy"),
                opt("g0", 1.0, "> 0", "metric floor"),
                opt("g1", 0.5, ">= 0", "metric modulation amplitude"),
                opt("gamma0", 1.0, "> |gamma1|", "mean drag"),
                opt("gamma1", 0.0, "|gamma1| < gamma0", "drag modulation amplitude"),
                opt("omega", 1.0, "finite", "harmonic frequency"),
            ],
        },
        SystemDoc {
            name: "manifold2d",
            dim: 2,
            kinetic: "quadratic",
            description: "Particle on a curved plane with diagonal metric \
                          g = diag(g0 + g1 sin^2 q2, g0 + g1 sin^2 q1), A = g^-1, constant drag, \
                          V = omega^2 |q|^2 / 2.",
            params: vec![
                req("kBT", "> 0", KBT),
                opt("m", 1.0, "> 0", "mass scale of the kinetic energy"),
                opt("g0", 1.0, "> 0", "metric floor"),
                opt("g1", 0.5, ">= 0", "metric modulation amplitude"),
                opt("gamma", 1.0, "> 0", "isotropic drag"),
                opt("omega", 1.0, "finite", "harmonic frequency"),
            ],
        },
        SystemDoc {
            name: "poly1d",
            dim: 1,
            kinetic: "polynomial-radial",
            description: "Polynomial kinetic energy K = sum_{l=k1}^{k2} d_l zeta^l with constant metric a, \
                          gamma = gamma0 + gamma1 sin q, V = omega^2 q^2 / 2.",
            params: vec![
                req("k1", "integer, 1 <= k1 <= k2", "lowest power of zeta"),
                req("k2", "integer, k1 <= k2 <= 4", "highest power of zeta"),
                req("gamma0", "> |gamma1|", "mean drag"),
                req("kBT", "> 0", KBT),
                opt("d1", 0.0, ">= 0; > 0 when l = k1 or k2", "coefficient of zeta"),
                opt("d2", 0.0, ">= 0; > 0 when l = k1 or k2", "coefficient of zeta^2"),
                opt("d3", 0.0, ">= 0; > 0 when l = k1 or k2", "coefficient of zeta^3"),
                opt("d4", 0.0, ">= 0; > 0 when l = k1 or k2", "coefficient of zeta^4"),
                opt("gamma1", 0.0, "|gamma1| < gamma0", "drag modulation amplitude"),
                opt("a", 1.0, "> 0", "constant metric A"),
                opt("omega", 1.0, "finite", "harmonic frequency"),
            ],
        },
        SystemDoc {
            name: "nuclear1d",
            dim: 1,
            kinetic: "nuclear-log",
            description: "Logarithmic nuclear kinetic energy zeta/(2m) + c1 ln^2(1 + s zeta) with s = c2 \
                          (zeta-scaled) or s = c2 eps (unscaled), gamma = gamma0 + gamma1 sin q, \
                          V = omega^2 q^2 / 2.",
            params: vec![
                req("c1", "> 0", "strength of the logarithmic term"),
                req("c2", "> 0", "scale inside the logarithm"),
                req("m", "> 0", "mass scale of the quadratic part"),
                ParamDoc {
                    name: "scaling",
                    required: true,
                    default: None,
                    range: "\"zeta-scaled\" or \"unscaled\"",
                    description: "eps scaling of the logarithmic term",
                },
                opt("gamma0", 1.0, "> |gamma1|", "mean drag"),
                opt("gamma1", 0.0, "|gamma1| < gamma0", "drag modulation amplitude"),
                opt("kBT", 1.0, "> 0", KBT),
                opt("omega", 1.0, "finite", "harmonic frequency"),
            ],
        },
    ];
    Manifest {
        schema_version: 1,
        systems,
    }
}

/// The manifest as shipped in `registry.json`.
pub fn manifest_json() -> String {
    serde_json::to_string_pretty(&manifest()).expect("manifest serializes") + "\n"
}

pub fn builtin_names() -> Vec<&'static str> {
    manifest().systems.iter().map(|s| s.name).collect()
}

/// Fills defaults and rejects unknown or missing keys.
pub fn resolve_params(name: &str, params: &Params) -> Result<Params> {
    let m = manifest();
    let doc = m
        .systems
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::UnknownSystem(name.to_string()))?;
    for key in params.keys() {
        if !doc.params.iter().any(|p| p.name == key) {
            return Err(Error::InvalidParameter {
                system: name.into(),
                param: key.clone(),
                reason: "unknown parameter".into(),
            });
        }
    }
    let mut out = Params::new();
    for p in &doc.params {
        match (params.get(p.name), &p.default) {
            (Some(v), _) => {
                out.insert(p.name.to_string(), v.clone());
            }
            (None, Some(d)) => {
                out.insert(p.name.to_string(), d.clone());
            }
            (None, None) => {
                return Err(Error::MissingParameter {
                    system: name.into(),
                    param: p.name.into(),
                })
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    system: &'a str,
    params: &'a Params,
}

impl Reader<'_> {
    fn invalid(&self, param: &str, reason: impl Into<String>) -> Error {
        Error::InvalidParameter {
            system: self.system.into(),
            param: param.into(),
            reason: reason.into(),
        }
    }

    fn num(&self, key: &str) -> Result<f64> {
        match self.params.get(key) {
            Some(ParamValue::Num(x)) if x.is_finite() => Ok(*x),
            Some(ParamValue::Num(_)) => Err(self.invalid(key, "must be finite")),
            Some(ParamValue::Text(t)) => {
                Err(self.invalid(key, format!("expected a number, got '{t}'")))
            }
            None => Err(Error::MissingParameter {
                system: self.system.into(),
                param: key.into(),
            }),
        }
    }

    fn positive(&self, key: &str) -> Result<f64> {
        let x = self.num(key)?;
        if x > 0.0 {
            Ok(x)
        } else {
            Err(self.invalid(key, format!("must be positive, got {x}")))
        }
    }

    fn nonneg(&self, key: &str) -> Result<f64> {
        let x = self.num(key)?;
        if x >= 0.0 {
            Ok(x)
        } else {
            Err(self.invalid(key, format!("must be non-negative, got {x}")))
        }
    }

    fn int(&self, key: &str, lo: u32, hi: u32) -> Result<u32> {
        let x = self.num(key)?;
        if x.fract() == 0.0 && x >= lo as f64 && x <= hi as f64 {
            Ok(x as u32)
        } else {
            Err(self.invalid(key, format!("must be an integer in [{lo}, {hi}], got {x}")))
        }
    }

    /// `(mean, amplitude)` of `mean + amplitude · sin(·)`, which must stay positive.
    fn drag_pair(&self, mean: &str, amp: &str) -> Result<(f64, f64)> {
        let g0 = self.positive(mean)?;
        let g1 = self.num(amp)?;
        if g1.abs() >= g0 {
            return Err(self.invalid(amp, format!("|{amp}| must be below {mean} = {g0}")));
        }
        Ok((g0, g1))
    }

    fn scaling(&self, key: &str) -> Result<NuclearScaling> {
        match self.params.get(key) {
            Some(ParamValue::Text(t)) => {
                let norm: String = t
                    .chars()
                    .filter(|c| c.is_alphanumeric())
                    .collect::<String>()
                    .to_lowercase();
                match norm.as_str() {
                    "zetascaled" => Ok(NuclearScaling::ZetaScaled),
                    "unscaled" => Ok(NuclearScaling::Unscaled),
                    _ => Err(self.invalid(key, format!("unknown scaling '{t}'"))),
                }
            }
            Some(ParamValue::Num(x)) => Err(self.invalid(key, format!("expected text, got {x}"))),
            None => Err(Error::MissingParameter {
                system: self.system.into(),
                param: key.into(),
            }),
        }
    }
}

fn scalar(x: f64) -> Matrix {
    Matrix::from_element(1, 1, x)
}

fn vec1(x: f64) -> Vector {
    Vector::from_element(1, x)
}

/// `V = ω²‖q‖²/2` with analytic gradient.
fn harmonic(omega: f64) -> ScalarField {
    let w2 = omega * omega;
    ScalarField::new(move |_, q| 0.5 * w2 * q.norm_squared())
        .with_gradient(move |_, q| q * w2)
        .with_time_derivative(|_, _| 0.0)
}

/// Scalar drag `g0 + g1 sin q_axis` on `n` dimensions (isotropic), with matching noise.
fn sine_drag(n: usize, axis: usize, g0: f64, g1: f64) -> MatrixField {
    let field = MatrixField::new(move |_, q| Matrix::identity(n, n) * (g0 + g1 * q[axis].sin()));
    if g1 == 0.0 {
        return MatrixField::constant(Matrix::identity(n, n) * g0);
    }
    field
        .with_partial(move |_, q, k| {
            if k == axis {
                Matrix::identity(n, n) * (g1 * q[axis].cos())
            } else {
                Matrix::zeros(n, n)
            }
        })
        .with_time_derivative(move |_, _| Matrix::zeros(n, n))
}

fn sine_noise(n: usize, axis: usize, g0: f64, g1: f64, kbt: f64) -> NoiseField {
    if g1 == 0.0 {
        return NoiseField::constant(Matrix::identity(n, n) * (2.0 * kbt * g0).sqrt());
    }
    NoiseField::new(move |_, q, _| {
        Matrix::identity(n, n) * (2.0 * kbt * (g0 + g1 * q[axis].sin())).sqrt()
    })
}

fn positive_kbt(r: &Reader<'_>) -> Result<f64> {
    r.positive("kBT")
}

/// Builds a registry system. Unknown keys are rejected and missing optional
/// keys take their documented defaults.
pub fn make_builtin(name: &str, params: &Params) -> Result<SystemSpec> {
    let resolved = resolve_params(name, params)?;
    let r = Reader {
        system: name,
        params: &resolved,
    };
    match name {
        "ou-linear" => {
            let m = r.positive("m")?;
            let gamma = r.positive("gamma")?;
            let kbt = positive_kbt(&r)?;
            let omega = r.num("omega")?;
            SystemSpec::builder(1, KineticEnergyModel::Quadratic { mass: m })
                .name(name)
                .potential(harmonic(omega))
                .drag(MatrixField::constant(scalar(gamma)))
                .noise(1, NoiseField::constant(scalar((2.0 * gamma * kbt).sqrt())))
                .temperature(kbt)
                .build()
        }
        "em1d" => {
            let m = r.positive("m")?;
            let (g0, g1) = r.drag_pair("gamma0", "gamma1")?;
            let kbt = positive_kbt(&r)?;
            let e = r.num("e")?;
            let phi0 = r.num("phi0")?;
            let phi1 = r.num("phi1")?;
            let amp = r.num("mod_amp")?;
            let freq = r.num("mod_freq")?;
            let omega = r.num("omega")?;
            let modulation = move |t: f64| 1.0 + amp * (freq * t).sin();
            let psi = if e * phi1 == 0.0 {
                VectorField::constant(vec1(e * phi0))
            } else {
                VectorField::new(move |t, q| vec1(e * (phi0 + phi1 * q[0].sin() * modulation(t))))
                    .with_jacobian(move |t, q| scalar(e * phi1 * q[0].cos() * modulation(t)))
                    .with_jacobian_partial(move |t, q, _| {
                        scalar(-e * phi1 * q[0].sin() * modulation(t))
                    })
                    .with_time_derivative(move |t, q| {
                        vec1(e * phi1 * q[0].sin() * amp * freq * (freq * t).cos())
                    })
            };
            SystemSpec::builder(1, KineticEnergyModel::Quadratic { mass: m })
                .name(name)
                .psi(psi)
                .potential(harmonic(omega))
                .drag(sine_drag(1, 0, g0, g1))
                .noise(1, sine_noise(1, 0, g0, g1, kbt))
                .temperature(kbt)
                .build()
        }
        "em2d" => {
            let m = r.positive("m")?;
            let e = r.num("e")?;
            let b = r.num("B")?;
            let (g0, g1) = r.drag_pair("gamma", "gamma_amp")?;
            let kbt = positive_kbt(&r)?;
            let b_amp = r.num("B_amp")?;
            let b_freq = r.num("B_freq")?;
            let omega = r.num("omega")?;
            let f = Vector::from_column_slice(&[r.num("fx")?, r.num("fy")?]);
            let field = move |t: f64| b * (1.0 + b_amp * (b_freq * t).sin());
            let rate = move |t: f64| b * b_amp * b_freq * (b_freq * t).cos();
            let psi = VectorField::new(move |t, q| {
                let h = 0.5 * e * field(t);
                Vector::from_column_slice(&[-h * q[1], h * q[0]])
            })
            .with_jacobian(move |t, _| {
                let h = 0.5 * e * field(t);
                Matrix::from_row_slice(2, 2, &[0.0, -h, h, 0.0])
            })
            .with_jacobian_partial(|_, _, _| Matrix::zeros(2, 2))
            .with_time_derivative(move |t, q| {
                let h = 0.5 * e * rate(t);
                Vector::from_column_slice(&[-h * q[1], h * q[0]])
            });
            let force = if f.iter().all(|x| *x == 0.0) {
                ForceField::zero(2)
            } else {
                ForceField::new(move |_, _, _| f.clone())
            };
            SystemSpec::builder(2, KineticEnergyModel::Quadratic { mass: m })
                .name(name)
                .psi(psi)
                .potential(harmonic(omega))
                .drag(sine_drag(2, 0, g0, g1))
                .noise(2, sine_noise(2, 0, g0, g1, kbt))
                .force(force)
                .temperature(kbt)
                .build()
        }
        "manifold1d" => {
            let kbt = positive_kbt(&r)?;
            let m = r.positive("m")?;
            let g0 = r.positive("g0")?;
            let g1 = r.nonneg("g1")?;
            let (d0, d1) = r.drag_pair("gamma0", "gamma1")?;
            let omega = r.num("omega")?;
            let metric = MatrixField::new(move |_, q| scalar(1.0 / (g0 + g1 * q[0].sin().powi(2))))
                .with_partial(move |_, q, _| {
                    let g = g0 + g1 * q[0].sin().powi(2);
                    scalar(-g1 * (2.0 * q[0]).sin() / (g * g))
                })
                .with_time_derivative(|_, _| scalar(0.0));
            SystemSpec::builder(1, KineticEnergyModel::Quadratic { mass: m })
                .name(name)
                .metric(metric)
                .potential(harmonic(omega))
                .drag(sine_drag(1, 0, d0, d1))
                .noise(1, sine_noise(1, 0, d0, d1, kbt))
                .temperature(kbt)
                .build()
        }
        "manifold2d" => {
            let kbt = positive_kbt(&r)?;
            let m = r.positive("m")?;
            let g0 = r.positive("g0")?;
            let g1 = r.nonneg("g1")?;
            let gamma = r.positive("gamma")?;
            let omega = r.num("omega")?;
            let g = move |x: f64| g0 + g1 * x.sin().powi(2);
            let dg = move |x: f64| g1 * (2.0 * x).sin();
            let metric = MatrixField::new(move |_, q| {
                Matrix::from_diagonal(&Vector::from_column_slice(&[1.0 / g(q[1]), 1.0 / g(q[0])]))
            })
            .with_partial(move |_, q, k| {
                let mut out = Matrix::zeros(2, 2);
                if k == 0 {
                    out[(1, 1)] = -dg(q[0]) / g(q[0]).powi(2);
                } else {
                    out[(0, 0)] = -dg(q[1]) / g(q[1]).powi(2);
                }
                out
            })
            .with_time_derivative(|_, _| Matrix::zeros(2, 2));
            SystemSpec::builder(2, KineticEnergyModel::Quadratic { mass: m })
                .name(name)
                .metric(metric)
                .potential(harmonic(omega))
                .drag(MatrixField::constant(Matrix::identity(2, 2) * gamma))
                .noise(
                    2,
                    NoiseField::constant(Matrix::identity(2, 2) * (2.0 * kbt * gamma).sqrt()),
                )
                .temperature(kbt)
                .build()
        }
        "poly1d" => {
            let k1 = r.int("k1", 1, 4)?;
            let k2 = r.int("k2", 1, 4)?;
            if k2 < k1 {
                return Err(r.invalid("k2", format!("must be at least k1 = {k1}")));
            }
            let (g0, g1) = r.drag_pair("gamma0", "gamma1")?;
            let kbt = positive_kbt(&r)?;
            let a = r.positive("a")?;
            let omega = r.num("omega")?;
            let coeffs = (k1..=k2)
                .map(|l| Ok(TimeCoefficient::constant(r.nonneg(&format!("d{l}"))?)))
                .collect::<Result<Vec<_>>>()?;
            let poly = PolynomialRadial::new(k1, k2, coeffs)?;
            SystemSpec::builder(1, KineticEnergyModel::PolynomialRadial(poly))
                .name(name)
                .metric(MatrixField::constant(scalar(a)))
                .potential(harmonic(omega))
                .drag(sine_drag(1, 0, g0, g1))
                .noise(1, sine_noise(1, 0, g0, g1, kbt))
                .temperature(kbt)
                .build()
        }
        "nuclear1d" => {
            let c1 = r.positive("c1")?;
            let c2 = r.positive("c2")?;
            let m = r.positive("m")?;
            let scaling = r.scaling("scaling")?;
            let (g0, g1) = r.drag_pair("gamma0", "gamma1")?;
            let kbt = positive_kbt(&r)?;
            let omega = r.num("omega")?;
            SystemSpec::builder(
                1,
                KineticEnergyModel::NuclearLog {
                    c1,
                    c2,
                    mass: m,
                    scaling,
                },
            )
            .name(name)
            .potential(harmonic(omega))
            .drag(sine_drag(1, 0, g0, g1))
            .noise(1, sine_noise(1, 0, g0, g1, kbt))
            .temperature(kbt)
            .build()
        }
        other => Err(Error::UnknownSystem(other.to_string())),
    }
}

/// Convenience: params from `(key, value)` pairs.
pub fn params<'a, I, V>(pairs: I) -> Params
where
    I: IntoIterator<Item = (&'a str, V)>,
    V: Into<ParamValue>,
{
    pairs
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.into()))
        .collect()
}

/// The 1D benchmark: `γ = 2 + sin q`, `Σ = 2γ`, `V = q²/2`, quadratic `K` with `m = 1`.
pub fn benchmark() -> SystemSpec {
    make_builtin(
        "em1d",
        &params([
            ("m", 1.0),
            ("gamma0", 2.0),
            ("gamma1", 1.0),
            ("kBT", 1.0),
            ("e", 0.0),
        ]),
    )
    .expect("benchmark parameters are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homogenize::{limiting_coeffs, tilde_gamma};
    use crate::model::{eval_kinetic, State};

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn shipped_manifest_is_current() {
        let shipped = include_str!("../registry.json");
        assert_eq!(shipped, manifest_json());
    }

    #[test]
    fn ou_linear_definition() {
        let spec = make_builtin(
            "ou-linear",
            &params([("m", 1.0), ("gamma", 1.0), ("kBT", 1.0), ("omega", 1.0)]),
        )
        .unwrap();
        let q = v(&[0.7]);
        assert!((spec.potential().eval(0.0, &q) - 0.245).abs() < 1e-15);
        assert_eq!(spec.noise().eval(0.0, &q, &q)[(0, 0)], 2f64.sqrt());
        assert_eq!(spec.temperature(), Some(1.0));
    }

    #[test]
    fn em2d_definition() {
        let spec = make_builtin(
            "em2d",
            &params([
                ("m", 1.0),
                ("e", 1.0),
                ("B", 1.0),
                ("gamma", 2.0),
                ("kBT", 1.0),
            ]),
        )
        .unwrap();
        let q = v(&[0.3, -0.8]);
        let psi = spec.psi().eval(0.0, &q);
        assert_eq!(psi, v(&[0.4, 0.15]));
        assert_eq!(
            spec.noise().eval(0.0, &q, &psi),
            Matrix::identity(2, 2) * 2.0
        );
        let gt = tilde_gamma(&spec, 0.0, &q).unwrap();
        assert_eq!(gt, Matrix::from_row_slice(2, 2, &[2.0, -1.0, 1.0, 2.0]));
        let d = limiting_coeffs(&spec, 0.0, &q).unwrap();
        assert_eq!(d.s.norm(), 0.0);
    }

    #[test]
    fn nuclear_definition() {
        let spec = make_builtin(
            "nuclear1d",
            &params([
                ("c1", ParamValue::Num(1.0)),
                ("c2", ParamValue::Num(1.0)),
                ("m", ParamValue::Num(1.0)),
                ("scaling", ParamValue::Text("ZetaScaled".into())),
            ]),
        )
        .unwrap();
        let eps = 0.25;
        let s = State::new(0.0, v(&[0.0]), v(&[1.0]));
        let zeta: f64 = 1.0 / eps;
        let want = zeta / 2.0 + (1.0 + zeta).ln().powi(2);
        assert!((eval_kinetic(&spec, eps, &s).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn errors_are_specific() {
        assert!(matches!(
            make_builtin("nope", &Params::new()),
            Err(Error::UnknownSystem(_))
        ));
        assert!(matches!(
            make_builtin("ou-linear", &params([("m", 1.0), ("gamma", 1.0)])),
            Err(Error::MissingParameter { .. })
        ));
        assert!(matches!(
            make_builtin(
                "ou-linear",
                &params([("m", -1.0), ("gamma", 1.0), ("kBT", 1.0)])
            ),
            Err(Error::InvalidParameter { .. })
        ));
        assert!(matches!(
            make_builtin(
                "ou-linear",
                &params([("m", 1.0), ("gamma", 1.0), ("kBT", 1.0), ("x", 1.0)])
            ),
            Err(Error::InvalidParameter { .. })
        ));
        assert!(matches!(
            make_builtin(
                "poly1d",
                &params([("k1", 2.0), ("k2", 1.0), ("gamma0", 1.0), ("kBT", 1.0)])
            ),
            Err(Error::InvalidParameter { .. })
        ));
        assert!(matches!(
            make_builtin(
                "em1d",
                &params([("m", 1.0), ("gamma0", 1.0), ("gamma1", 1.5), ("kBT", 1.0)])
            ),
            Err(Error::InvalidParameter { .. })
        ));
    }

    #[test]
    fn every_builtin_builds_with_defaults() {
        let sample = |name: &str| -> Params {
            match name {
                "ou-linear" => params([("m", 1.0), ("gamma", 1.0), ("kBT", 1.0)]),
                "em1d" => params([("m", 1.0), ("gamma0", 2.0), ("kBT", 1.0)]),
                "em2d" => params([
                    ("m", 1.0),
                    ("e", 1.0),
                    ("B", 1.0),
                    ("gamma", 2.0),
                    ("kBT", 1.0),
                ]),
                "manifold1d" | "manifold2d" => params([("kBT", 1.0)]),
                "poly1d" => params([
                    ("k1", 1.0),
                    ("k2", 2.0),
                    ("gamma0", 1.0),
                    ("kBT", 1.0),
                    ("d1", 1.0),
                    ("d2", 1.0),
                ]),
                "nuclear1d" => [
                    ("c1".to_string(), ParamValue::Num(1.0)),
                    ("c2".to_string(), ParamValue::Num(1.0)),
                    ("m".to_string(), ParamValue::Num(1.0)),
                    ("scaling".to_string(), ParamValue::Text("unscaled".into())),
                ]
                .into_iter()
                .collect(),
                _ => unreachable!(),
            }
        };
        for name in builtin_names() {
            let spec = make_builtin(name, &sample(name)).unwrap();
            assert_eq!(spec.name(), name);
            let q = Vector::from_element(spec.dim(), 0.3);
            limiting_coeffs(&spec, 0.0, &q).unwrap();
        }
    }

    #[test]
    fn benchmark_noise_drift() {
        let d = limiting_coeffs(&benchmark(), 0.0, &v(&[0.0])).unwrap();
        assert!((d.s[0] + 0.25).abs() < 1e-14);
    }
}
