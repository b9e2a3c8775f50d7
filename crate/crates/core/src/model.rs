//! System model: the Hamiltonian family
//!
//! ```text
//! H^ε(t,q,p) = K̃(ε, t, A^{ij}(t,q) z_i z_j) + V(t,q),   z = (p − ψ(t,q)) / √ε
//! ```
//!
//! together with the drag γ(t,q), noise σ(t,q,p) and external force F(t,q,p)
//! that enter the momentum equation. Coefficient fields carry optional
//! analytic derivatives; missing ones fall back to central differences.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type ScalarFn = Arc<dyn Fn(f64, &Vector) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(f64, &Vector) -> Vector + Send + Sync>;
type MatrixFn = Arc<dyn Fn(f64, &Vector) -> Matrix + Send + Sync>;
type PartialFn = Arc<dyn Fn(f64, &Vector, usize) -> Matrix + Send + Sync>;
type PhaseVectorFn = Arc<dyn Fn(f64, &Vector, &Vector) -> Vector + Send + Sync>;
type PhaseMatrixFn = Arc<dyn Fn(f64, &Vector, &Vector) -> Matrix + Send + Sync>;
type KineticFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Central-difference step `max(1, |x|) · ε_mach^{1/3}`.
pub fn fd_step(x: f64) -> f64 {
    x.abs().max(1.0) * f64::EPSILON.cbrt()
}

fn perturbed(q: &Vector, k: usize, delta: f64) -> Vector {
    let mut out = q.clone();
    out[k] += delta;
    out
}

// ---------------------------------------------------------------------------
// Time coefficients and kinetic profiles
// ---------------------------------------------------------------------------

/// A scalar function of time with an optional analytic rate.
#[derive(Clone)]
pub struct TimeCoefficient {
    value: TimeFn,
    rate: Option<TimeFn>,
}

impl TimeCoefficient {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            value: Arc::new(f),
            rate: None,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            value: Arc::new(move |_| c),
            rate: Some(Arc::new(|_| 0.0)),
        }
    }

    pub fn with_rate(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.rate = Some(Arc::new(f));
        self
    }

    pub fn eval(&self, t: f64) -> f64 {
        (self.value)(t)
    }

    pub fn rate(&self, t: f64) -> f64 {
        match &self.rate {
            Some(r) => r(t),
            None => {
                let h = fd_step(t);
                ((self.value)(t + h) - (self.value)(t - h)) / (2.0 * h)
            }
        }
    }
}

impl fmt::Debug for TimeCoefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TimeCoefficient")
            .field("analytic_rate", &self.rate.is_some())
            .finish()
    }
}

/// `K̃(ε,t,ζ) = Σ_{l=k1}^{k2} d_l(t) ζ^l`.
#[derive(Debug, Clone)]
pub struct PolynomialRadial {
    k1: u32,
    k2: u32,
    coeffs: Vec<TimeCoefficient>,
}

impl PolynomialRadial {
    /// `coeffs[j]` multiplies `ζ^{k1+j}`.
    pub fn new(k1: u32, k2: u32, coeffs: Vec<TimeCoefficient>) -> Result<Self> {
        if k1 < 1 || k2 < k1 {
            return Err(Error::InvalidArgument(format!(
                "polynomial degrees need 1 <= k1 <= k2, got k1={k1}, k2={k2}"
            )));
        }
        let expected = (k2 - k1 + 1) as usize;
        if coeffs.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "expected {expected} polynomial coefficients, got {}",
                coeffs.len()
            )));
        }
        Ok(Self { k1, k2, coeffs })
    }

    pub fn k1(&self) -> u32 {
        self.k1
    }

    pub fn k2(&self) -> u32 {
        self.k2
    }

    /// Coefficient `d_l`, `l` in `k1..=k2`.
    pub fn coefficient(&self, l: u32) -> Option<&TimeCoefficient> {
        if l < self.k1 || l > self.k2 {
            return None;
        }
        self.coeffs.get((l - self.k1) as usize)
    }

    fn terms(&self) -> impl Iterator<Item = (u32, &TimeCoefficient)> {
        (self.k1..=self.k2).zip(self.coeffs.iter())
    }
}

/// How the logarithmic nuclear term scales with ε.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NuclearScaling {
    /// `c1 ln²(1 + c2 ‖p‖²)`, i.e. `ln²(1 + c2 ε ζ)` in the scaled variable.
    Unscaled,
    /// `c1 ln²(1 + c2 ‖p‖²/ε)`, i.e. `ln²(1 + c2 ζ)`.
    ZetaScaled,
}

/// User supplied kinetic profile and its derivatives, all as functions of `(ε, t, ζ)`.
#[derive(Clone)]
pub struct CustomKinetic {
    pub value: KineticFn,
    pub d_zeta: KineticFn,
    pub d2_zeta: KineticFn,
    pub d_time: KineticFn,
}

impl CustomKinetic {
    pub fn new(
        value: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        d_zeta: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        d2_zeta: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        d_time: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(value),
            d_zeta: Arc::new(d_zeta),
            d2_zeta: Arc::new(d2_zeta),
            d_time: Arc::new(d_time),
        }
    }
}

/// The scalar profile `K̃(ε,t,ζ)`; independent of q for every variant.
#[derive(Clone)]
pub enum KineticEnergyModel {
    Quadratic {
        mass: f64,
    },
    PolynomialRadial(PolynomialRadial),
    NuclearLog {
        c1: f64,
        c2: f64,
        mass: f64,
        scaling: NuclearScaling,
    },
    Custom(CustomKinetic),
}

impl fmt::Debug for KineticEnergyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Quadratic { mass } => f.debug_struct("Quadratic").field("mass", mass).finish(),
            Self::PolynomialRadial(p) => f.debug_tuple("PolynomialRadial").field(p).finish(),
            Self::NuclearLog {
                c1,
                c2,
                mass,
                scaling,
            } => f
                .debug_struct("NuclearLog")
                .field("c1", c1)
                .field("c2", c2)
                .field("mass", mass)
                .field("scaling", scaling)
                .finish(),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// `K̃` with its first two ζ-derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KineticProfile {
    pub value: f64,
    pub d_zeta: f64,
    pub d2_zeta: f64,
}

impl KineticEnergyModel {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Quadratic { .. } => "quadratic",
            Self::PolynomialRadial(_) => "polynomial-radial",
            Self::NuclearLog { .. } => "nuclear-log",
            Self::Custom(_) => "custom",
        }
    }

    /// Mass `m` when `K̃ = ζ/(2m)`.
    pub fn quadratic_mass(&self) -> Option<f64> {
        match self {
            Self::Quadratic { mass } => Some(*mass),
            _ => None,
        }
    }

    pub fn profile(&self, eps: f64, t: f64, zeta: f64) -> KineticProfile {
        match self {
            Self::Quadratic { mass } => KineticProfile {
                value: zeta / (2.0 * mass),
                d_zeta: 1.0 / (2.0 * mass),
                d2_zeta: 0.0,
            },
            Self::PolynomialRadial(poly) => {
                let mut out = KineticProfile {
                    value: 0.0,
                    d_zeta: 0.0,
                    d2_zeta: 0.0,
                };
                for (l, d) in poly.terms() {
                    let dl = d.eval(t);
                    let lf = l as f64;
                    out.value += dl * zeta.powi(l as i32);
                    out.d_zeta += lf * dl * zeta.powi(l as i32 - 1);
                    if l >= 2 {
                        out.d2_zeta += lf * (lf - 1.0) * dl * zeta.powi(l as i32 - 2);
                    }
                }
                out
            }
            Self::NuclearLog {
                c1,
                c2,
                mass,
                scaling,
            } => {
                let s = match scaling {
                    NuclearScaling::Unscaled => c2 * eps,
                    NuclearScaling::ZetaScaled => *c2,
                };
                let w = 1.0 + s * zeta;
                let log = w.ln();
                KineticProfile {
                    value: zeta / (2.0 * mass) + c1 * log * log,
                    d_zeta: 1.0 / (2.0 * mass) + 2.0 * c1 * s * log / w,
                    d2_zeta: 2.0 * c1 * s * s * (1.0 - log) / (w * w),
                }
            }
            Self::Custom(c) => KineticProfile {
                value: (c.value)(eps, t, zeta),
                d_zeta: (c.d_zeta)(eps, t, zeta),
                d2_zeta: (c.d2_zeta)(eps, t, zeta),
            },
        }
    }

    pub fn value(&self, eps: f64, t: f64, zeta: f64) -> f64 {
        self.profile(eps, t, zeta).value
    }

    /// `∂_t K̃(ε,t,ζ)`.
    pub fn d_time(&self, eps: f64, t: f64, zeta: f64) -> f64 {
        match self {
            Self::Quadratic { .. } | Self::NuclearLog { .. } => 0.0,
            Self::PolynomialRadial(poly) => poly
                .terms()
                .map(|(l, d)| d.rate(t) * zeta.powi(l as i32))
                .sum(),
            Self::Custom(c) => (c.d_time)(eps, t, zeta),
        }
    }
}

// ---------------------------------------------------------------------------
// Coefficient fields
// ---------------------------------------------------------------------------

/// Scalar field `V(t,q)`.
#[derive(Clone)]
pub struct ScalarField {
    value: ScalarFn,
    gradient: Option<VectorFn>,
    time_derivative: Option<ScalarFn>,
}

impl ScalarField {
    pub fn new(f: impl Fn(f64, &Vector) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            value: Arc::new(f),
            gradient: None,
            time_derivative: None,
        }
    }

    pub fn zero(n: usize) -> Self {
        Self {
            value: Arc::new(|_, _| 0.0),
            gradient: Some(Arc::new(move |_, _| Vector::zeros(n))),
            time_derivative: Some(Arc::new(|_, _| 0.0)),
        }
    }

    pub fn with_gradient(
        mut self,
        f: impl Fn(f64, &Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        self.gradient = Some(Arc::new(f));
        self
    }

    pub fn with_time_derivative(
        mut self,
        f: impl Fn(f64, &Vector) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.time_derivative = Some(Arc::new(f));
        self
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    pub fn eval(&self, t: f64, q: &Vector) -> f64 {
        (self.value)(t, q)
    }

    pub fn gradient(&self, t: f64, q: &Vector) -> Vector {
        match &self.gradient {
            Some(g) => g(t, q),
            None => Vector::from_fn(q.len(), |k, _| {
                let h = fd_step(q[k]);
                ((self.value)(t, &perturbed(q, k, h)) - (self.value)(t, &perturbed(q, k, -h)))
                    / (2.0 * h)
            }),
        }
    }

    pub fn time_derivative(&self, t: f64, q: &Vector) -> f64 {
        match &self.time_derivative {
            Some(d) => d(t, q),
            None => {
                let h = fd_step(t);
                ((self.value)(t + h, q) - (self.value)(t - h, q)) / (2.0 * h)
            }
        }
    }
}

/// Vector field `ψ(t,q)`. The Jacobian convention is `J[(i,k)] = ∂_{q^k} ψ_i`.
#[derive(Clone)]
pub struct VectorField {
    value: VectorFn,
    jacobian: Option<MatrixFn>,
    jacobian_partial: Option<PartialFn>,
    time_derivative: Option<VectorFn>,
    constant: bool,
}

impl VectorField {
    pub fn new(f: impl Fn(f64, &Vector) -> Vector + Send + Sync + 'static) -> Self {
        Self {
            value: Arc::new(f),
            jacobian: None,
            jacobian_partial: None,
            time_derivative: None,
            constant: false,
        }
    }

    pub fn zero(n: usize) -> Self {
        Self::constant(Vector::zeros(n))
    }

    pub fn constant(v: Vector) -> Self {
        let n = v.len();
        Self {
            value: Arc::new(move |_, _| v.clone()),
            jacobian: Some(Arc::new(move |_, _| Matrix::zeros(n, n))),
            jacobian_partial: Some(Arc::new(move |_, _, _| Matrix::zeros(n, n))),
            time_derivative: Some(Arc::new(move |_, _| Vector::zeros(n))),
            constant: true,
        }
    }

    /// True when built by [`VectorField::constant`] or [`VectorField::zero`].
    pub fn is_constant(&self) -> bool {
        self.constant
    }

    pub fn with_jacobian(
        mut self,
        f: impl Fn(f64, &Vector) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Arc::new(f));
        self.constant = false;
        self
    }

    /// `∂_{q^k}` of the Jacobian.
    pub fn with_jacobian_partial(
        mut self,
        f: impl Fn(f64, &Vector, usize) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        self.jacobian_partial = Some(Arc::new(f));
        self.constant = false;
        self
    }

    pub fn with_time_derivative(
        mut self,
        f: impl Fn(f64, &Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        self.time_derivative = Some(Arc::new(f));
        self.constant = false;
        self
    }

    pub fn eval(&self, t: f64, q: &Vector) -> Vector {
        (self.value)(t, q)
    }

    pub fn jacobian(&self, t: f64, q: &Vector) -> Matrix {
        match &self.jacobian {
            Some(j) => j(t, q),
            None => {
                let n = q.len();
                let mut out = Matrix::zeros(n, n);
                for k in 0..n {
                    let h = fd_step(q[k]);
                    let col = ((self.value)(t, &perturbed(q, k, h))
                        - (self.value)(t, &perturbed(q, k, -h)))
                        / (2.0 * h);
                    out.set_column(k, &col);
                }
                out
            }
        }
    }

    pub fn jacobian_partial(&self, t: f64, q: &Vector, k: usize) -> Matrix {
        match &self.jacobian_partial {
            Some(d) => d(t, q, k),
            None => {
                let h = fd_step(q[k]);
                (self.jacobian(t, &perturbed(q, k, h)) - self.jacobian(t, &perturbed(q, k, -h)))
                    / (2.0 * h)
            }
        }
    }

    pub fn time_derivative(&self, t: f64, q: &Vector) -> Vector {
        match &self.time_derivative {
            Some(d) => d(t, q),
            None => {
                let h = fd_step(t);
                ((self.value)(t + h, q) - (self.value)(t - h, q)) / (2.0 * h)
            }
        }
    }
}

/// Matrix field of `(t,q)`, used for the metric `A` and the drag `γ`.
#[derive(Clone)]
pub struct MatrixField {
    value: MatrixFn,
    partial: Option<PartialFn>,
    time_derivative: Option<MatrixFn>,
    constant: bool,
}

impl MatrixField {
    pub fn new(f: impl Fn(f64, &Vector) -> Matrix + Send + Sync + 'static) -> Self {
        Self {
            value: Arc::new(f),
            partial: None,
            time_derivative: None,
            constant: false,
        }
    }

    pub fn constant(m: Matrix) -> Self {
        let (r, c) = m.shape();
        Self {
            value: Arc::new(move |_, _| m.clone()),
            partial: Some(Arc::new(move |_, _, _| Matrix::zeros(r, c))),
            time_derivative: Some(Arc::new(move |_, _| Matrix::zeros(r, c))),
            constant: true,
        }
    }

    /// True when built by [`MatrixField::constant`]; every derivative vanishes.
    pub fn is_constant(&self) -> bool {
        self.constant
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(Matrix::identity(n, n))
    }

    pub fn with_partial(
        mut self,
        f: impl Fn(f64, &Vector, usize) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        self.partial = Some(Arc::new(f));
        self.constant = false;
        self
    }

    pub fn with_time_derivative(
        mut self,
        f: impl Fn(f64, &Vector) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        self.time_derivative = Some(Arc::new(f));
        self
    }

    pub fn has_analytic_partial(&self) -> bool {
        self.partial.is_some()
    }

    pub fn eval(&self, t: f64, q: &Vector) -> Matrix {
        (self.value)(t, q)
    }

    /// `∂_{q^k}` of the field.
    pub fn partial(&self, t: f64, q: &Vector, k: usize) -> Matrix {
        match &self.partial {
            Some(d) => d(t, q, k),
            None => {
                let h = fd_step(q[k]);
                ((self.value)(t, &perturbed(q, k, h)) - (self.value)(t, &perturbed(q, k, -h)))
                    / (2.0 * h)
            }
        }
    }

    /// Second partial `∂_{q^j} ∂_{q^k}`, always by differencing `partial`.
    pub fn second_partial(&self, t: f64, q: &Vector, j: usize, k: usize) -> Matrix {
        let h = fd_step(q[j]);
        (self.partial(t, &perturbed(q, j, h), k) - self.partial(t, &perturbed(q, j, -h), k))
            / (2.0 * h)
    }

    pub fn time_derivative(&self, t: f64, q: &Vector) -> Matrix {
        match &self.time_derivative {
            Some(d) => d(t, q),
            None => {
                let h = fd_step(t);
                ((self.value)(t + h, q) - (self.value)(t - h, q)) / (2.0 * h)
            }
        }
    }
}

/// Noise coefficient `σ(t,q,p)`, an `n × k` matrix.
#[derive(Clone)]
pub struct NoiseField(PhaseMatrixFn);

impl NoiseField {
    pub fn new(f: impl Fn(f64, &Vector, &Vector) -> Matrix + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn constant(m: Matrix) -> Self {
        Self(Arc::new(move |_, _, _| m.clone()))
    }

    pub fn eval(&self, t: f64, q: &Vector, p: &Vector) -> Matrix {
        (self.0)(t, q, p)
    }
}

/// External force `F(t,q,p)`.
#[derive(Clone)]
pub struct ForceField {
    value: PhaseVectorFn,
    zero: bool,
}

impl ForceField {
    pub fn new(f: impl Fn(f64, &Vector, &Vector) -> Vector + Send + Sync + 'static) -> Self {
        Self {
            value: Arc::new(f),
            zero: false,
        }
    }

    pub fn zero(n: usize) -> Self {
        Self {
            value: Arc::new(move |_, _, _| Vector::zeros(n)),
            zero: true,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn eval(&self, t: f64, q: &Vector, p: &Vector) -> Vector {
        (self.value)(t, q, p)
    }
}

// ---------------------------------------------------------------------------
// System specification
// ---------------------------------------------------------------------------

/// Complete coefficient bundle for one Hamiltonian SDE family.
///
/// Immutable after construction; all evaluations are pure.
#[derive(Clone)]
pub struct SystemSpec {
    name: String,
    n: usize,
    k: usize,
    kinetic: KineticEnergyModel,
    metric: MatrixField,
    psi: VectorField,
    potential: ScalarField,
    drag: MatrixField,
    noise: NoiseField,
    force: ForceField,
    temperature: Option<f64>,
}

impl fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemSpec")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("k", &self.k)
            .field("kinetic", &self.kinetic)
            .field("temperature", &self.temperature)
            .finish_non_exhaustive()
    }
}

impl SystemSpec {
    pub fn builder(n: usize, kinetic: KineticEnergyModel) -> SystemSpecBuilder {
        SystemSpecBuilder::new(n, kinetic)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Configuration-space dimension.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Noise dimension.
    pub fn noise_dim(&self) -> usize {
        self.k
    }

    pub fn kinetic(&self) -> &KineticEnergyModel {
        &self.kinetic
    }

    /// `A(t,q)`.
    pub fn metric(&self) -> &MatrixField {
        &self.metric
    }

    pub fn psi(&self) -> &VectorField {
        &self.psi
    }

    pub fn potential(&self) -> &ScalarField {
        &self.potential
    }

    /// `γ(t,q)`.
    pub fn drag(&self) -> &MatrixField {
        &self.drag
    }

    pub fn noise(&self) -> &NoiseField {
        &self.noise
    }

    pub fn force(&self) -> &ForceField {
        &self.force
    }

    /// `k_B T` when the noise was fixed by `Σ = 2 k_B T γ`.
    pub fn temperature(&self) -> Option<f64> {
        self.temperature
    }

    /// Same coefficients with a different kinetic profile.
    pub fn with_kinetic(&self, kinetic: KineticEnergyModel) -> SystemSpec {
        SystemSpec {
            kinetic,
            ..self.clone()
        }
    }

    /// `Σ = σσᵀ` at `(t,q,p)`.
    pub fn diffusion_matrix(&self, t: f64, q: &Vector, p: &Vector) -> Matrix {
        let s = self.noise.eval(t, q, p);
        &s * s.transpose()
    }
}

pub struct SystemSpecBuilder {
    name: String,
    n: usize,
    k: usize,
    kinetic: KineticEnergyModel,
    metric: MatrixField,
    psi: VectorField,
    potential: ScalarField,
    drag: MatrixField,
    noise: Option<NoiseField>,
    force: ForceField,
    temperature: Option<f64>,
}

impl SystemSpecBuilder {
    fn new(n: usize, kinetic: KineticEnergyModel) -> Self {
        Self {
            name: "custom".to_string(),
            n,
            k: n,
            kinetic,
            metric: MatrixField::identity(n),
            psi: VectorField::zero(n),
            potential: ScalarField::zero(n),
            drag: MatrixField::identity(n),
            noise: None,
            force: ForceField::zero(n),
            temperature: None,
        }
    }

    pub fn name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn metric(mut self, a: MatrixField) -> Self {
        self.metric = a;
        self
    }

    pub fn psi(mut self, psi: VectorField) -> Self {
        self.psi = psi;
        self
    }

    pub fn potential(mut self, v: ScalarField) -> Self {
        self.potential = v;
        self
    }

    pub fn drag(mut self, gamma: MatrixField) -> Self {
        self.drag = gamma;
        self
    }

    pub fn force(mut self, f: ForceField) -> Self {
        self.force = f;
        self
    }

    /// Explicit `n × k` noise coefficient.
    pub fn noise(mut self, k: usize, sigma: NoiseField) -> Self {
        self.k = k;
        self.noise = Some(sigma);
        self.temperature = None;
        self
    }

    /// Fix `σ` from the drag through `Σ = 2 k_B T γ` (Cholesky factor, `k = n`).
    pub fn fluctuation_dissipation(mut self, kbt: f64) -> Self {
        let drag = self.drag.clone();
        self.k = self.n;
        self.noise = Some(NoiseField::new(move |t, q, _p| {
            let sigma2 = drag.eval(t, q) * (2.0 * kbt);
            match sigma2.clone().cholesky() {
                Some(c) => c.l(),
                None => Matrix::from_element(sigma2.nrows(), sigma2.ncols(), f64::NAN),
            }
        }));
        self.temperature = Some(kbt);
        self
    }

    /// Record `k_B T` for a noise field that already satisfies `Σ = 2 k_B T γ`.
    pub fn temperature(mut self, kbt: f64) -> Self {
        self.temperature = Some(kbt);
        self
    }

    /// Validates shapes by evaluating every field at `t = 0, q = p = 0`.
    pub fn build(self) -> Result<SystemSpec> {
        let n = self.n;
        if n == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidArgument(
                "noise dimension must be positive".into(),
            ));
        }
        let noise = self.noise.unwrap_or_else(|| {
            let (n, k) = (self.n, self.k);
            NoiseField::constant(Matrix::zeros(n, k))
        });
        let q = Vector::zeros(n);
        let check = |context: &'static str, got: (usize, usize), expected: (usize, usize)| {
            if got == expected {
                Ok(())
            } else {
                Err(Error::Dimension {
                    context,
                    expected: format!("{}x{}", expected.0, expected.1),
                    got: format!("{}x{}", got.0, got.1),
                })
            }
        };
        check("metric A", self.metric.eval(0.0, &q).shape(), (n, n))?;
        check("drag gamma", self.drag.eval(0.0, &q).shape(), (n, n))?;
        check("psi", (self.psi.eval(0.0, &q).len(), 1), (n, 1))?;
        check("noise sigma", noise.eval(0.0, &q, &q).shape(), (n, self.k))?;
        check("force F", (self.force.eval(0.0, &q, &q).len(), 1), (n, 1))?;
        Ok(SystemSpec {
            name: self.name,
            n,
            k: self.k,
            kinetic: self.kinetic,
            metric: self.metric,
            psi: self.psi,
            potential: self.potential,
            drag: self.drag,
            noise,
            force: self.force,
            temperature: self.temperature,
        })
    }
}

// ---------------------------------------------------------------------------
// Phase-space state and Hamiltonian evaluation
// ---------------------------------------------------------------------------

/// A point `x = (q, p)` of phase space at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub q: Vector,
    pub p: Vector,
}

impl State {
    pub fn new(t: f64, q: Vector, p: Vector) -> Self {
        Self { t, q, p }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.q.iter().all(|v| v.is_finite())
            && self.p.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn ensure_finite_vec(v: &Vector, field: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Evaluation { field })
    }
}

pub(crate) fn ensure_finite_mat(m: &Matrix, field: &'static str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Evaluation { field })
    }
}

fn ensure_positive_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "eps must be positive, got {eps}"
        )))
    }
}

/// Kinetic quantities at one phase-space point.
#[derive(Debug, Clone)]
pub(crate) struct KineticEval {
    /// `u = p − ψ(t,q)`
    pub u: Vector,
    /// `A u`
    pub au: Vector,
    pub profile: KineticProfile,
}

pub(crate) fn kinetic_eval(spec: &SystemSpec, eps: f64, s: &State) -> Result<KineticEval> {
    ensure_positive_eps(eps)?;
    let psi = spec.psi.eval(s.t, &s.q);
    ensure_finite_vec(&psi, "psi")?;
    let a = spec.metric.eval(s.t, &s.q);
    ensure_finite_mat(&a, "metric A")?;
    let u = &s.p - psi;
    let au = &a * &u;
    let zeta = u.dot(&au) / eps;
    let profile = spec.kinetic.profile(eps, s.t, zeta);
    if !(profile.value.is_finite() && profile.d_zeta.is_finite()) {
        return Err(Error::Evaluation {
            field: "kinetic profile",
        });
    }
    Ok(KineticEval { u, au, profile })
}

/// `K^ε(t,x) = K̃(ε, t, ‖p − ψ‖²_A / ε)`.
pub fn eval_kinetic(spec: &SystemSpec, eps: f64, s: &State) -> Result<f64> {
    Ok(kinetic_eval(spec, eps, s)?.profile.value)
}

/// `H^ε = K^ε + V`.
pub fn hamiltonian(spec: &SystemSpec, eps: f64, s: &State) -> Result<f64> {
    let k = eval_kinetic(spec, eps, s)?;
    let v = spec.potential.eval(s.t, &s.q);
    if !v.is_finite() {
        return Err(Error::Evaluation {
            field: "potential V",
        });
    }
    Ok(k + v)
}

pub(crate) fn grad_p_from(eval: &KineticEval, eps: f64) -> Vector {
    &eval.au * (2.0 * eval.profile.d_zeta / eps)
}

pub(crate) fn grad_q_from(
    spec: &SystemSpec,
    eval: &KineticEval,
    eps: f64,
    s: &State,
) -> Result<Vector> {
    let n = spec.n;
    let dpsi = spec.psi.jacobian(s.t, &s.q);
    ensure_finite_mat(&dpsi, "psi jacobian")?;
    let grad_v = spec.potential.gradient(s.t, &s.q);
    ensure_finite_vec(&grad_v, "potential gradient")?;
    let coupling = dpsi.tr_mul(&eval.au);
    let scale = eval.profile.d_zeta / eps;
    let mut out = grad_v;
    for i in 0..n {
        let quad = if spec.metric.is_constant() {
            0.0
        } else {
            let da = spec.metric.partial(s.t, &s.q, i);
            eval.u.dot(&(&da * &eval.u))
        };
        out[i] += scale * (quad - 2.0 * coupling[i]);
    }
    ensure_finite_vec(&out, "grad_q H")?;
    Ok(out)
}

/// `∇_p H^ε = (2/ε) K̃′ A u`.
pub fn grad_p_h(spec: &SystemSpec, eps: f64, s: &State) -> Result<Vector> {
    let eval = kinetic_eval(spec, eps, s)?;
    Ok(grad_p_from(&eval, eps))
}

/// `∇_q H^ε`: the chain-rule terms of `K̃` through `A(t,q)` and `ψ(t,q)`, plus `∇_q V`.
pub fn grad_q_h(spec: &SystemSpec, eps: f64, s: &State) -> Result<Vector> {
    let eval = kinetic_eval(spec, eps, s)?;
    grad_q_from(spec, &eval, eps, s)
}
