//! Time stepping for the full system and its homogenized limit, driven by
//! shared Brownian increments.

use std::io::{self, Write};

use nalgebra::{DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homogenize::{limit_drift_diffusion, tilde_gamma};
use crate::model::{
    ensure_finite_mat, ensure_finite_vec, grad_p_h, grad_q_h, KineticProfile, Matrix, State,
    SystemSpec, Vector,
};
use crate::noise::{NoisePath, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Plain Euler–Maruyama in `(q, p)`.
    ExplicitEm,
    /// Linearly implicit trapezoidal treatment of the drag in `u = p − ψ`,
    /// with coefficients frozen at a predicted half-step position.
    #[default]
    SemiImplicitDrag,
}

/// Whether the limiting integrator keeps the noise-induced drift `S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseDrift {
    #[default]
    Include,
    Suppress,
}

fn check_step(dt: f64, dw: &[f64], spec: &SystemSpec) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "dt must be positive, got {dt}"
        )));
    }
    if dw.len() != spec.noise_dim() {
        return Err(Error::Dimension {
            context: "Brownian increment",
            expected: spec.noise_dim().to_string(),
            got: dw.len().to_string(),
        });
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "eps must be positive, got {eps}"
        )))
    }
}

fn is_numeric_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::Evaluation { .. } | Error::NonFinite | Error::Singular | Error::Unsolvable { .. }
    )
}

fn solve_small(lhs: Matrix, mut rhs: Vector) -> Result<Vector> {
    if lhs.nrows() == 1 {
        let d = lhs[(0, 0)];
        if d == 0.0 {
            return Err(Error::Singular);
        }
        rhs /= d;
        return Ok(rhs);
    }
    lhs.lu().solve(&rhs).ok_or(Error::Singular)
}

/// `uᵀ A u` without temporaries.
fn quad_form(a: &Matrix, u: &Vector) -> f64 {
    let n = u.len();
    let mut acc = 0.0;
    for j in 0..n {
        let mut col = 0.0;
        for i in 0..n {
            col += a[(i, j)] * u[i];
        }
        acc += col * u[j];
    }
    acc
}

/// Full-system point carried in `(q, u)` coordinates together with the
/// metric and kinetic profile at that point.
#[derive(Debug, Clone)]
pub(crate) struct Phase {
    pub t: f64,
    pub q: Vector,
    pub u: Vector,
    pub a: Matrix,
    pub profile: KineticProfile,
}

impl Phase {
    pub fn at(spec: &SystemSpec, eps: f64, t: f64, q: Vector, u: Vector) -> Result<Self> {
        let a = spec.metric().eval(t, &q);
        ensure_finite_mat(&a, "metric A")?;
        Self::with_metric(spec, eps, t, q, u, a)
    }

    fn with_metric(
        spec: &SystemSpec,
        eps: f64,
        t: f64,
        q: Vector,
        u: Vector,
        a: Matrix,
    ) -> Result<Self> {
        ensure_finite_vec(&q, "position q")?;
        ensure_finite_vec(&u, "momentum u")?;
        let zeta = quad_form(&a, &u) / eps;
        let profile = spec.kinetic().profile(eps, t, zeta);
        if !(profile.value.is_finite() && profile.d_zeta.is_finite()) {
            return Err(Error::Evaluation {
                field: "kinetic profile",
            });
        }
        Ok(Self {
            t,
            q,
            u,
            a,
            profile,
        })
    }

    pub fn from_state(spec: &SystemSpec, eps: f64, s: &State) -> Result<Self> {
        let psi = spec.psi().eval(s.t, &s.q);
        ensure_finite_vec(&psi, "psi")?;
        Self::at(spec, eps, s.t, s.q.clone(), &s.p - psi)
    }

    pub fn to_state(&self, spec: &SystemSpec) -> Result<State> {
        let psi = spec.psi().eval(self.t, &self.q);
        ensure_finite_vec(&psi, "psi")?;
        Ok(State::new(self.t, self.q.clone(), &self.u + psi))
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.profile.value
    }
}

/// One trapezoidal drag step. With `κ = 2K̃′/ε` the fast variable obeys
/// `du = [−κ γ̃ A u − (κ/2) uᵀ∂A u − ∇V + F − ∂_tψ] dt + σ dW` and `dq = κ A u dt`.
pub(crate) fn advance_semi_implicit(
    spec: &SystemSpec,
    eps: f64,
    x: &Phase,
    dt: f64,
    dw: &[f64],
) -> Result<Phase> {
    let n = spec.dim();
    let kappa0 = 2.0 * x.profile.d_zeta / eps;
    let th = x.t + 0.5 * dt;
    let mut qh = x.q.clone();
    qh.gemv(0.5 * dt * kappa0, &x.a, &x.u, 1.0);
    ensure_finite_vec(&qh, "position q")?;

    let metric_const = spec.metric().is_constant();
    let a = if metric_const {
        x.a.clone()
    } else {
        let a = spec.metric().eval(th, &qh);
        ensure_finite_mat(&a, "metric A")?;
        a
    };
    let zeta = quad_form(&a, &x.u) / eps;
    let kappa = 2.0 * spec.kinetic().profile(eps, th, zeta).d_zeta / eps;
    if !kappa.is_finite() {
        return Err(Error::Evaluation {
            field: "kinetic profile",
        });
    }
    let psi_const = spec.psi().is_constant();
    let gt = if psi_const {
        let g = spec.drag().eval(th, &qh);
        ensure_finite_mat(&g, "drag gamma")?;
        g
    } else {
        tilde_gamma(spec, th, &qh)?
    };
    let mut ph = spec.psi().eval(th, &qh);
    ensure_finite_vec(&ph, "psi")?;
    ph += &x.u;

    let mut rest = spec.potential().gradient(th, &qh);
    rest.neg_mut();
    if !spec.force().is_zero() {
        rest += spec.force().eval(th, &qh, &ph);
    }
    if !psi_const {
        rest -= spec.psi().time_derivative(th, &qh);
    }
    if !metric_const {
        for i in 0..n {
            let da = spec.metric().partial(th, &qh, i);
            rest[i] -= 0.5 * kappa * quad_form(&da, &x.u);
        }
    }
    ensure_finite_vec(&rest, "momentum drift")?;
    let sigma = spec.noise().eval(th, &qh, &ph);
    ensure_finite_mat(&sigma, "noise sigma")?;

    // (I + M) u₁ = (I − M) u + rest·dt + σ dW with M = (dt/2) κ γ̃ A.
    let mut m = gt * &a;
    m *= 0.5 * dt * kappa;
    let mut rhs = x.u.clone();
    rhs.gemv(-1.0, &m, &x.u, 1.0);
    rhs.axpy(dt, &rest, 1.0);
    rhs.gemv(1.0, &sigma, &DVectorView::from_slice(dw, dw.len()), 1.0);
    for i in 0..n {
        m[(i, i)] += 1.0;
    }
    let u1 = solve_small(m, rhs)?;
    let mut q1 = x.q.clone();
    q1.gemv(0.5 * dt * kappa, &a, &x.u, 1.0);
    q1.gemv(0.5 * dt * kappa, &a, &u1, 1.0);
    if metric_const {
        Phase::with_metric(spec, eps, x.t + dt, q1, u1, a)
    } else {
        Phase::at(spec, eps, x.t + dt, q1, u1)
    }
}

pub(crate) fn explicit_guard(spec: &SystemSpec, eps: f64, s: &State, dt: f64) -> Result<()> {
    let a = spec.metric().eval(s.t, &s.q);
    let psi = spec.psi().eval(s.t, &s.q);
    let u = &s.p - psi;
    let zeta = u.dot(&(&a * &u)) / eps;
    let kappa = 2.0 * spec.kinetic().profile(eps, s.t, zeta).d_zeta / eps;
    let stiffness = kappa * (tilde_gamma(spec, s.t, &s.q)? * a).norm();
    if dt * stiffness > 2.0 {
        return Err(Error::Precondition(format!(
            "explicit step dt = {dt:.3e} exceeds the stiffness guard 2/{stiffness:.3e}; \
             reduce dt or use the semi-implicit scheme"
        )));
    }
    Ok(())
}

fn step_explicit(spec: &SystemSpec, eps: f64, s: &State, dt: f64, dw: &[f64]) -> Result<State> {
    let vel = grad_p_h(spec, eps, s)?;
    let gq = grad_q_h(spec, eps, s)?;
    let gamma = spec.drag().eval(s.t, &s.q);
    ensure_finite_mat(&gamma, "drag gamma")?;
    let force = spec.force().eval(s.t, &s.q, &s.p);
    ensure_finite_vec(&force, "force F")?;
    let sigma = spec.noise().eval(s.t, &s.q, &s.p);
    ensure_finite_mat(&sigma, "noise sigma")?;
    let q1 = &s.q + &vel * dt;
    let p1 = &s.p + (force - gamma * &vel - gq) * dt + sigma * DVector::from_column_slice(dw);
    Ok(State::new(s.t + dt, q1, p1))
}

/// One step of the full system from `s`.
///
/// `ExplicitEm` applies `q ← q + ∇_pH dt`, `p ← p + (−γ∇_pH − ∇_qH + F) dt + σ dW`
/// and refuses steps beyond its stability guard. A non-finite result is
/// reported as a blow-up carrying `s`.
pub fn step_full(
    spec: &SystemSpec,
    eps: f64,
    s: &State,
    dt: f64,
    dw: &[f64],
    scheme: Scheme,
) -> Result<State> {
    check_eps(eps)?;
    check_step(dt, dw, spec)?;
    let out = match scheme {
        Scheme::ExplicitEm => {
            explicit_guard(spec, eps, s, dt)?;
            step_explicit(spec, eps, s, dt, dw)
        }
        Scheme::SemiImplicitDrag => Phase::from_state(spec, eps, s)
            .and_then(|x| advance_semi_implicit(spec, eps, &x, dt, dw))
            .and_then(|x| x.to_state(spec)),
    };
    match out {
        Ok(next) if next.is_finite() => Ok(next),
        Ok(_) => Err(Error::blow_up_full(s.clone())),
        Err(e) if is_numeric_failure(&e) => Err(Error::blow_up_full(s.clone())),
        Err(e) => Err(e),
    }
}

/// Advances a [`Phase`]; failures become blow-ups carrying the last finite state.
pub(crate) fn advance(
    spec: &SystemSpec,
    eps: f64,
    x: &Phase,
    dt: f64,
    dw: &[f64],
    scheme: Scheme,
) -> Result<Phase> {
    let out = match scheme {
        Scheme::SemiImplicitDrag => advance_semi_implicit(spec, eps, x, dt, dw),
        Scheme::ExplicitEm => x
            .to_state(spec)
            .and_then(|s| step_explicit(spec, eps, &s, dt, dw))
            .and_then(|s| Phase::from_state(spec, eps, &s)),
    };
    match out {
        Ok(next) => Ok(next),
        Err(e) if is_numeric_failure(&e) => Err(match x.to_state(spec) {
            Ok(s) => Error::blow_up_full(s),
            Err(_) => Error::blow_up_full(State::new(x.t, x.q.clone(), x.u.clone())),
        }),
        Err(e) => Err(e),
    }
}

pub(crate) fn limit_increment(
    spec: &SystemSpec,
    t: f64,
    q: &Vector,
    dt: f64,
    dw: &[f64],
    drift: NoiseDrift,
) -> Result<Vector> {
    let (b, sigma) = limit_drift_diffusion(spec, t, q, drift == NoiseDrift::Include)?;
    let mut out = q.clone();
    out.axpy(dt, &b, 1.0);
    out.gemv(1.0, &sigma, &DVectorView::from_slice(dw, dw.len()), 1.0);
    Ok(out)
}

/// Euler–Maruyama step of the limiting equation.
pub fn step_limit(spec: &SystemSpec, t: f64, q: &Vector, dt: f64, dw: &[f64]) -> Result<Vector> {
    step_limit_with(spec, t, q, dt, dw, NoiseDrift::Include)
}

/// [`step_limit`] with the noise-induced drift optionally removed.
pub fn step_limit_with(
    spec: &SystemSpec,
    t: f64,
    q: &Vector,
    dt: f64,
    dw: &[f64],
    drift: NoiseDrift,
) -> Result<Vector> {
    check_step(dt, dw, spec)?;
    match limit_increment(spec, t, q, dt, dw, drift) {
        Ok(next) if next.iter().all(|x| x.is_finite()) => Ok(next),
        Ok(_) => Err(Error::blow_up_limit(t, q.as_slice())),
        Err(e) if is_numeric_failure(&e) => Err(Error::blow_up_limit(t, q.as_slice())),
        Err(e) => Err(e),
    }
}

fn noise_factor(grid: &TimeGrid, noise: &NoisePath, spec: &SystemSpec) -> Result<usize> {
    let ng = noise.grid();
    let consistent = (ng.t0 - grid.t0).abs() <= 1e-12 * grid.t_final.abs().max(1.0)
        && (ng.t_final - grid.t_final).abs() <= 1e-12 * grid.t_final.abs().max(1.0)
        && ng.steps % grid.steps == 0;
    if !consistent {
        return Err(Error::InvalidArgument(format!(
            "noise grid ({} steps on [{}, {}]) does not refine the integration grid ({} steps on [{}, {}])",
            ng.steps, ng.t0, ng.t_final, grid.steps, grid.t0, grid.t_final
        )));
    }
    if noise.dim() != spec.noise_dim() {
        return Err(Error::Dimension {
            context: "noise path",
            expected: spec.noise_dim().to_string(),
            got: noise.dim().to_string(),
        });
    }
    Ok(ng.steps / grid.steps)
}

/// Full-system path on `grid`; `noise` may live on any refinement of it.
pub fn integrate_full(
    spec: &SystemSpec,
    eps: f64,
    x0: &State,
    grid: &TimeGrid,
    noise: &NoisePath,
    scheme: Scheme,
) -> Result<Vec<State>> {
    check_eps(eps)?;
    let factor = noise_factor(grid, noise, spec)?;
    let dt = grid.dt();
    let mut dw = vec![0.0; spec.noise_dim()];
    let mut path = Vec::with_capacity(grid.steps + 1);
    let mut s = State::new(grid.t0, x0.q.clone(), x0.p.clone());
    path.push(s.clone());
    for step in 0..grid.steps {
        noise.aggregated_increment(factor, step, &mut dw);
        s = step_full(spec, eps, &s, dt, &dw, scheme)?;
        s.t = grid.time(step + 1);
        path.push(s.clone());
    }
    Ok(path)
}

/// Limiting path on `grid`; `noise` may live on any refinement of it.
pub fn integrate_limit(
    spec: &SystemSpec,
    q0: &Vector,
    grid: &TimeGrid,
    noise: &NoisePath,
    drift: NoiseDrift,
) -> Result<Vec<Vector>> {
    let factor = noise_factor(grid, noise, spec)?;
    let dt = grid.dt();
    let mut dw = vec![0.0; spec.noise_dim()];
    let mut path = Vec::with_capacity(grid.steps + 1);
    let mut q = q0.clone();
    path.push(q.clone());
    for step in 0..grid.steps {
        noise.aggregated_increment(factor, step, &mut dw);
        q = step_limit_with(spec, grid.time(step), &q, dt, &dw, drift)?;
        path.push(q.clone());
    }
    Ok(path)
}

/// Coupled full and limiting paths driven by one Brownian path.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPath {
    pub grid: TimeGrid,
    pub full: Vec<State>,
    pub limit: Vec<Vector>,
}

impl PairPath {
    /// `‖q^ε(t_i) − q(t_i)‖` on the grid.
    pub fn position_gap(&self) -> Vec<f64> {
        self.full
            .iter()
            .zip(&self.limit)
            .map(|(s, q)| (&s.q - q).norm())
            .collect()
    }
}

/// Integrates both legs with identical increments. Failures are tagged with
/// the leg that produced them.
pub fn integrate_pair(
    spec: &SystemSpec,
    eps: f64,
    x0: &State,
    q0: &Vector,
    grid: &TimeGrid,
    noise: &NoisePath,
    scheme: Scheme,
) -> Result<PairPath> {
    let full = integrate_full(spec, eps, x0, grid, noise, scheme)?;
    let limit = integrate_limit(spec, q0, grid, noise, NoiseDrift::Include)?;
    Ok(PairPath {
        grid: *grid,
        full,
        limit,
    })
}

/// `t,q_1..q_n,p_1..p_n`, optionally prefixed by `path_index`.
pub fn full_csv_header(n: usize, long: bool) -> String {
    let mut cols: Vec<String> = Vec::new();
    if long {
        cols.push("path_index".into());
    }
    cols.push("t".into());
    cols.extend((1..=n).map(|i| format!("q_{i}")));
    cols.extend((1..=n).map(|i| format!("p_{i}")));
    cols.join(",")
}

/// `t,q_1..q_n`, optionally prefixed by `path_index`.
pub fn limit_csv_header(n: usize, long: bool) -> String {
    let mut cols: Vec<String> = Vec::new();
    if long {
        cols.push("path_index".into());
    }
    cols.push("t".into());
    cols.extend((1..=n).map(|i| format!("q_{i}")));
    cols.join(",")
}

fn write_row(
    w: &mut (impl Write + ?Sized),
    path_index: Option<u64>,
    t: f64,
    cols: &[&[f64]],
) -> io::Result<()> {
    if let Some(i) = path_index {
        write!(w, "{i},")?;
    }
    write!(w, "{t}")?;
    for c in cols {
        for x in c.iter() {
            write!(w, ",{x}")?;
        }
    }
    writeln!(w)
}

pub fn write_full_rows(
    w: &mut (impl Write + ?Sized),
    path: &[State],
    path_index: Option<u64>,
) -> io::Result<()> {
    for s in path {
        write_row(w, path_index, s.t, &[s.q.as_slice(), s.p.as_slice()])?;
    }
    Ok(())
}

pub fn write_limit_rows(
    w: &mut (impl Write + ?Sized),
    grid: &TimeGrid,
    path: &[Vector],
    path_index: Option<u64>,
) -> io::Result<()> {
    for (i, q) in path.iter().enumerate() {
        write_row(w, path_index, grid.time(i), &[q.as_slice()])?;
    }
    Ok(())
}
