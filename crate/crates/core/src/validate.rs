//! Sampled audits of a [`SystemSpec`]: structural and growth conditions on
//! the kinetic energy, drag, metric and potential, a confinement fit for the
//! potential, and a Lyapunov trace along simulated paths.
//!
//! Every check works on a finite sample drawn from a bounded box. A pass
//! certifies the sampled region only. Global statements (bounded below,
//! bounded above, sublinear growth) are judged by comparing the inner part
//! of the box with its outer shell, which catches decay or blow-up toward
//! the boundary but cannot see past it.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetric_spectrum;
use crate::model::{hamiltonian, KineticEnergyModel, State, SystemSpec, Vector};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// `[t0, t1] × Π[q_lo, q_hi] × [−z_radius, z_radius]ⁿ`, plus the sampling seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleBox {
    pub t: [f64; 2],
    pub q_lo: Vec<f64>,
    pub q_hi: Vec<f64>,
    pub z_radius: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SampleBox {
    pub fn cube(n: usize, t_final: f64, q_half_width: f64, z_radius: f64) -> Self {
        Self {
            t: [0.0, t_final],
            q_lo: vec![-q_half_width; n],
            q_hi: vec![q_half_width; n],
            z_radius,
            seed: 0,
        }
    }

    /// `[0, 1] × [−5, 5]ⁿ × [−5, 5]ⁿ`.
    pub fn default_for(n: usize) -> Self {
        Self::cube(n, 1.0, 5.0, 5.0)
    }

    pub fn dim(&self) -> usize {
        self.q_lo.len()
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.q_lo.len() != n || self.q_hi.len() != n {
            return Err(Error::Dimension {
                context: "sample box",
                expected: format!("{n} position bounds"),
                got: format!("{} and {}", self.q_lo.len(), self.q_hi.len()),
            });
        }
        let finite = self
            .t
            .iter()
            .chain(&self.q_lo)
            .chain(&self.q_hi)
            .all(|x| x.is_finite());
        if !finite || !(self.t[1] >= self.t[0]) {
            return Err(Error::InvalidArgument(
                "sample box must be bounded with t0 ≤ t1".into(),
            ));
        }
        if self.q_lo.iter().zip(&self.q_hi).any(|(a, b)| !(b > a)) {
            return Err(Error::InvalidArgument(
                "sample box needs q_lo < q_hi".into(),
            ));
        }
        if !(self.z_radius > 0.0 && self.z_radius.is_finite()) {
            return Err(Error::InvalidArgument("z_radius must be positive".into()));
        }
        Ok(())
    }

    /// Sup-norm distance of `q` from the box centre, scaled so the faces sit at 1.
    fn radius(&self, q: &Vector) -> f64 {
        q.iter()
            .zip(self.q_lo.iter().zip(&self.q_hi))
            .map(|(x, (lo, hi))| ((2.0 * x - lo - hi) / (hi - lo)).abs())
            .fold(0.0, f64::max)
    }

    fn draw(&self, samples: usize) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.dim();
        (0..samples)
            .map(|_| {
                let t = if self.t[1] > self.t[0] {
                    rng.random_range(self.t[0]..=self.t[1])
                } else {
                    self.t[0]
                };
                let q = Vector::from_iterator(
                    n,
                    self.q_lo
                        .iter()
                        .zip(&self.q_hi)
                        .map(|(lo, hi)| rng.random_range(*lo..=*hi)),
                );
                let z = Vector::from_iterator(
                    n,
                    (0..n).map(|_| rng.random_range(-self.z_radius..=self.z_radius)),
                );
                let r = self.radius(&q);
                Sample { t, q, z, r }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Unchecked,
}

/// Worst sampled point for a check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub t: f64,
    pub q: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    pub value: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionEntry {
    pub id: String,
    pub description: String,
    pub status: Status,
    pub witness: Option<Witness>,
    /// Fitted constants (λ, c, C, M, η, …) over the sample.
    pub constants: BTreeMap<String, f64>,
    pub evaluation_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub schema_version: u32,
    pub system: String,
    pub sample_box: SampleBox,
    pub samples: usize,
    pub eps_list: Vec<f64>,
    pub entries: Vec<AssumptionEntry>,
    pub caveats: Vec<String>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.status != Status::Fail)
    }

    pub fn entry(&self, id: &str) -> Option<&AssumptionEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionEntry> {
        self.entries.iter().filter(|e| e.status == Status::Fail)
    }

    /// Plain-text table, one row per check.
    pub fn to_table(&self) -> String {
        let width = self
            .entries
            .iter()
            .map(|e| e.id.len())
            .max()
            .unwrap_or(2)
            .max(2);
        let mut out = format!("{:<width$}  {:<9}  {}\n", "id", "status", "description");
        for e in &self.entries {
            let status = match e.status {
                Status::Pass => "pass",
                Status::Fail => "FAIL",
                Status::Unchecked => "unchecked",
            };
            out.push_str(&format!(
                "{:<width$}  {:<9}  {}\n",
                e.id, status, e.description
            ));
            if let Some(w) = &e.witness {
                out.push_str(&format!(
                    "{:<width$}  {:<9}  witness t={} q={:?} value={:.6e}: {}\n",
                    "", "", w.t, w.q, w.value, w.detail
                ));
            }
        }
        for c in &self.caveats {
            out.push_str(&format!("note: {c}\n"));
        }
        out
    }
}

#[derive(Debug, Clone)]
struct Sample {
    t: f64,
    q: Vector,
    z: Vector,
    r: f64,
}

#[derive(Debug, Clone, Copy)]
struct KPoint {
    k: f64,
    /// `max{|∂_t K|, ‖∇_q K‖}`.
    growth: f64,
    grad_sq: f64,
    /// `max{‖∇_z K‖, ‖∇²_z K‖_F}`.
    smooth: f64,
    znorm: f64,
}

#[derive(Debug, Clone)]
struct PointEval {
    gamma: std::result::Result<(f64, f64), String>,
    metric: std::result::Result<(f64, f64), String>,
    k: Vec<Option<KPoint>>,
    /// `K` data at `(t, q, RAY_NEAR·z)` and `(t, q, RAY_FAR·z)`, for trends
    /// along rays in `z`.
    ray: Vec<Option<(KPoint, KPoint)>>,
    grad_v: Option<f64>,
    /// `max{‖γ‖, ‖F‖, ‖∂_tψ‖, ‖σ‖}` with the largest term named.
    bounded: Option<(f64, &'static str)>,
    derivatives: Option<(f64, &'static str)>,
}

fn finite_or(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn spectrum(m: &crate::model::Matrix) -> std::result::Result<(f64, f64), String> {
    symmetric_spectrum(m).map_err(|e| e.to_string())
}

fn eval_k(spec: &SystemSpec, eps: f64, s: &Sample) -> Option<KPoint> {
    let n = spec.dim();
    let metric = spec.metric();
    let a = metric.eval(s.t, &s.q);
    let az = &a * &s.z;
    let zeta = s.z.dot(&az);
    let prof = spec.kinetic().profile(eps, s.t, zeta);
    let k = prof.value;
    let mut grad_q = 0.0f64;
    if !metric.is_constant() {
        let mut g = Vector::zeros(n);
        for i in 0..n {
            g[i] = prof.d_zeta * s.z.dot(&(metric.partial(s.t, &s.q, i) * &s.z));
        }
        grad_q = g.norm();
    }
    let dt_a = metric.time_derivative(s.t, &s.q);
    let dt_k = spec.kinetic().d_time(eps, s.t, zeta) + prof.d_zeta * s.z.dot(&(dt_a * &s.z));
    let grad_z = &az * (2.0 * prof.d_zeta);
    let hess = &a * (2.0 * prof.d_zeta) + &az * az.transpose() * (4.0 * prof.d2_zeta);
    let out = KPoint {
        k,
        growth: dt_k.abs().max(grad_q),
        grad_sq: grad_z.norm_squared(),
        smooth: grad_z.norm().max(hess.norm()),
        znorm: s.z.norm(),
    };
    let ok = [out.k, out.growth, out.grad_sq, out.smooth]
        .iter()
        .all(|x| x.is_finite());
    ok.then_some(out)
}

fn max_named(items: &[(f64, &'static str)]) -> Option<(f64, &'static str)> {
    let mut best = (0.0, "");
    for &(v, name) in items {
        if !v.is_finite() {
            return None;
        }
        if v >= best.0 {
            best = (v, name);
        }
    }
    Some(best)
}

fn eval_point(spec: &SystemSpec, eps_list: &[f64], s: &Sample) -> PointEval {
    let n = spec.dim();
    let (t, q) = (s.t, &s.q);
    let psi = spec.psi().eval(t, q);
    let p = &psi + &s.z;
    let gamma = spec.drag().eval(t, q);
    let bounded = max_named(&[
        (gamma.norm(), "drag gamma"),
        (spec.force().eval(t, q, &p).norm(), "force F"),
        (spec.psi().time_derivative(t, q).norm(), "d/dt psi"),
        (spec.noise().eval(t, q, &p).norm(), "noise sigma"),
    ]);
    let mut derivs = vec![
        (spec.psi().jacobian(t, q).norm(), "d psi"),
        (spec.metric().time_derivative(t, q).norm(), "d/dt A"),
        (spec.drag().time_derivative(t, q).norm(), "d/dt gamma"),
    ];
    for k in 0..n {
        derivs.push((spec.psi().jacobian_partial(t, q, k).norm(), "d2 psi"));
        derivs.push((spec.metric().partial(t, q, k).norm(), "d A"));
        derivs.push((spec.drag().partial(t, q, k).norm(), "d gamma"));
        for j in 0..n {
            derivs.push((spec.metric().second_partial(t, q, j, k).norm(), "d2 A"));
            derivs.push((spec.drag().second_partial(t, q, j, k).norm(), "d2 gamma"));
        }
    }
    PointEval {
        gamma: spectrum(&gamma),
        metric: spectrum(&spec.metric().eval(t, q)),
        k: eps_list.iter().map(|&e| eval_k(spec, e, s)).collect(),
        ray: {
            let at = |scale: f64| Sample {
                z: &s.z * scale,
                ..s.clone()
            };
            let (near, far) = (at(RAY_NEAR), at(RAY_FAR));
            eps_list
                .iter()
                .map(|&e| Some((eval_k(spec, e, &near)?, eval_k(spec, e, &far)?)))
                .collect()
        },
        grad_v: finite_or(spec.potential().gradient(t, q).norm()),
        bounded,
        derivatives: max_named(&derivs),
    }
}

fn witness(
    s: &Sample,
    eps: Option<f64>,
    with_z: bool,
    value: f64,
    detail: impl Into<String>,
) -> Witness {
    Witness {
        t: s.t,
        q: s.q.iter().copied().collect(),
        z: with_z.then(|| s.z.iter().copied().collect()),
        eps,
        value,
        detail: detail.into(),
    }
}

struct EntryBuilder {
    entry: AssumptionEntry,
}

impl EntryBuilder {
    fn new(id: &str, description: &str) -> Self {
        Self {
            entry: AssumptionEntry {
                id: id.into(),
                description: description.into(),
                status: Status::Pass,
                witness: None,
                constants: BTreeMap::new(),
                evaluation_failures: 0,
            },
        }
    }

    fn constant(mut self, name: &str, v: f64) -> Self {
        if v.is_finite() {
            self.entry.constants.insert(name.into(), v);
        }
        self
    }

    fn fail(mut self, w: Witness) -> Self {
        if self.entry.status != Status::Fail {
            self.entry.status = Status::Fail;
            self.entry.witness = Some(w);
        }
        self
    }

    fn failures(mut self, count: usize, first: Option<Witness>) -> Self {
        self.entry.evaluation_failures = count;
        if let Some(w) = first {
            self = self.fail(w);
        }
        self
    }

    fn done(self) -> AssumptionEntry {
        self.entry
    }
}

/// Slope of `ln y` against `ln x`, or `None` when the data cannot support a fit.
fn log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 10 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 1e-12 * n {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// Scales applied to `z` when probing how a ratio evolves with `K` at fixed
/// `(t, q)`. Far out along the ray so that lower-order terms of `K` have
/// stopped dominating.
const RAY_NEAR: f64 = 8.0;
const RAY_FAR: f64 = 64.0;

/// `(position, (K, ratio), (K_far, ratio_far))`.
type Ray = (usize, (f64, f64), (f64, f64));

/// Median over `rays` of `d ln(ratio) / d ln K` between the two ray points,
/// with the position of the steepest ray.
fn ray_slope(rays: &[Ray]) -> Option<(f64, usize)> {
    let mut slopes: Vec<(f64, usize)> = rays
        .iter()
        .filter(|(_, (k, r), (kf, rf))| *k > 0.0 && *r > 0.0 && *rf > 0.0 && *kf > 1.01 * k)
        .map(|(pos, (k, r), (kf, rf))| ((rf / r).ln() / (kf / k).ln(), *pos))
        .filter(|(s, _)| s.is_finite())
        .collect();
    if slopes.len() < 10 {
        return None;
    }
    slopes.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let median = slopes[slopes.len() / 2].0;
    Some((median, slopes[slopes.len() - 1].1))
}

/// Indices of the upper `fraction` of `keys` (largest last).
fn upper_indices(keys: &[(usize, f64)], fraction: f64) -> Vec<usize> {
    let mut sorted: Vec<(usize, f64)> = keys.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let start = ((1.0 - fraction) * sorted.len() as f64).floor() as usize;
    sorted[start.min(sorted.len())..]
        .iter()
        .map(|p| p.0)
        .collect()
}

const INNER: f64 = 0.5;
const SHELL: f64 = 0.9;
/// Shell floor below this fraction of the inner floor counts as decay.
const DECAY_RATIO: f64 = 1e-3;
/// Shell ceiling above this multiple of the inner ceiling counts as blow-up.
const GROWTH_RATIO: f64 = 1e3;

struct SpectrumFit {
    floor: f64,
    ceiling: f64,
    inner_floor: f64,
    shell_floor: f64,
    inner_ceiling: f64,
    shell_ceiling: f64,
    argmin: usize,
    argmax: usize,
    shell_argmin: usize,
    shell_argmax: usize,
}

fn fit_spectrum(samples: &[Sample], spec: &[Option<(f64, f64)>]) -> Option<SpectrumFit> {
    let mut f = SpectrumFit {
        floor: f64::INFINITY,
        ceiling: f64::NEG_INFINITY,
        inner_floor: f64::INFINITY,
        shell_floor: f64::INFINITY,
        inner_ceiling: f64::NEG_INFINITY,
        shell_ceiling: f64::NEG_INFINITY,
        argmin: 0,
        argmax: 0,
        shell_argmin: usize::MAX,
        shell_argmax: usize::MAX,
    };
    let mut any = false;
    for (i, (s, e)) in samples.iter().zip(spec).enumerate() {
        let Some((lo, hi)) = *e else { continue };
        any = true;
        if lo < f.floor {
            f.floor = lo;
            f.argmin = i;
        }
        if hi > f.ceiling {
            f.ceiling = hi;
            f.argmax = i;
        }
        if s.r <= INNER {
            f.inner_floor = f.inner_floor.min(lo);
            f.inner_ceiling = f.inner_ceiling.max(hi);
        }
        if s.r >= SHELL {
            if lo < f.shell_floor {
                f.shell_floor = lo;
                f.shell_argmin = i;
            }
            if hi > f.shell_ceiling {
                f.shell_ceiling = hi;
                f.shell_argmax = i;
            }
        }
    }
    any.then_some(f)
}

fn spectrum_entry(
    id: &str,
    description: &str,
    name: &str,
    samples: &[Sample],
    evals: &[std::result::Result<(f64, f64), String>],
    check_ceiling: bool,
) -> AssumptionEntry {
    let mut b = EntryBuilder::new(id, description);
    let mut failures = 0;
    let mut first = None;
    for (s, e) in samples.iter().zip(evals) {
        if let Err(msg) = e {
            failures += 1;
            if first.is_none() {
                first = Some(witness(s, None, false, f64::NAN, format!("{name}: {msg}")));
            }
        }
    }
    b = b.failures(failures, first);
    let spec: Vec<Option<(f64, f64)>> = evals.iter().map(|e| e.as_ref().ok().copied()).collect();
    let Some(f) = fit_spectrum(samples, &spec) else {
        return b.done();
    };
    b = b
        .constant("lambda", f.floor)
        .constant("inner_floor", f.inner_floor)
        .constant("shell_floor", f.shell_floor);
    if check_ceiling {
        b = b
            .constant("ceiling", f.ceiling)
            .constant("inner_ceiling", f.inner_ceiling)
            .constant("shell_ceiling", f.shell_ceiling);
    }
    if f.floor <= 0.0 {
        let s = &samples[f.argmin];
        b = b.fail(witness(
            s,
            None,
            false,
            f.floor,
            format!("{name} has a non-positive eigenvalue"),
        ));
    }
    if f.shell_argmin != usize::MAX
        && f.inner_floor.is_finite()
        && f.shell_floor < DECAY_RATIO * f.inner_floor
    {
        let s = &samples[f.shell_argmin];
        b = b.fail(witness(
            s,
            None,
            false,
            f.shell_floor,
            format!(
                "smallest eigenvalue of {name} decays toward the box boundary \
                 ({:.3e} on the outer shell vs {:.3e} inside)",
                f.shell_floor, f.inner_floor
            ),
        ));
    }
    if check_ceiling
        && f.shell_argmax != usize::MAX
        && f.inner_ceiling.is_finite()
        && f.shell_ceiling > GROWTH_RATIO * f.inner_ceiling
    {
        let s = &samples[f.shell_argmax];
        b = b.fail(witness(
            s,
            None,
            false,
            f.shell_ceiling,
            format!(
                "largest eigenvalue of {name} grows toward the box boundary \
                 ({:.3e} on the outer shell vs {:.3e} inside)",
                f.shell_ceiling, f.inner_ceiling
            ),
        ));
    }
    let _ = f.argmax;
    b.done()
}

/// Finite maximum of a per-point scalar with its location.
fn bounded_entry(
    id: &str,
    description: &str,
    constant: &str,
    samples: &[Sample],
    values: &[Option<(f64, &'static str)>],
) -> AssumptionEntry {
    let mut b = EntryBuilder::new(id, description);
    let mut best = (0.0, "", usize::MAX);
    let mut failures = 0;
    let mut first = None;
    for (i, (s, v)) in samples.iter().zip(values).enumerate() {
        match v {
            Some((x, name)) => {
                if *x >= best.0 {
                    best = (*x, name, i);
                }
            }
            None => {
                failures += 1;
                if first.is_none() {
                    first = Some(witness(s, None, true, f64::NAN, "non-finite evaluation"));
                }
            }
        }
    }
    b = b.failures(failures, first).constant(constant, best.0);
    b.done()
}

/// Checks the sampled growth, coercivity and structural conditions on `spec`
/// over `sample_box × eps_list`.
///
/// Deterministic given `(spec, sample_box, samples, eps_list)`; the box
/// carries the seed.
pub fn check_assumptions(
    spec: &SystemSpec,
    sample_box: &SampleBox,
    samples: usize,
    eps_list: &[f64],
) -> Result<AssumptionReport> {
    let n = spec.dim();
    sample_box.check(n)?;
    if samples < 1000 {
        return Err(Error::Precondition(format!(
            "need at least 1000 samples, got {samples}"
        )));
    }
    if eps_list.is_empty() || eps_list.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::InvalidArgument(
            "eps_list must hold positive values".into(),
        ));
    }
    let pts = sample_box.draw(samples);
    let evals: Vec<PointEval> = pts
        .par_iter()
        .map(|s| eval_point(spec, eps_list, s))
        .collect();

    let mut entries = Vec::new();
    entries.extend(kinetic_entries(&pts, &evals, eps_list));
    entries.push(bounded_entry(
        "potential-gradient",
        "gradient of V bounded",
        "max_grad_v",
        &pts,
        &evals
            .iter()
            .map(|e| e.grad_v.map(|v| (v, "grad V")))
            .collect::<Vec<_>>(),
    ));
    entries.push(spectrum_entry(
        "drag-floor",
        "gamma symmetric with eigenvalues bounded below by lambda > 0",
        "gamma",
        &pts,
        &evals.iter().map(|e| e.gamma.clone()).collect::<Vec<_>>(),
        false,
    ));
    entries.push(bounded_entry(
        "coefficients-bounded",
        "gamma, F, d/dt psi and sigma bounded",
        "max_norm",
        &pts,
        &evals.iter().map(|e| e.bounded).collect::<Vec<_>>(),
    ));
    entries.push(coercivity_entry(&pts, &evals, eps_list));
    entries.push(
        EntryBuilder::new(
            "drag-momentum-independent",
            "gamma independent of p (structural)",
        )
        .done(),
    );
    let mut metric = spectrum_entry(
        "metric-spectrum",
        "A symmetric with eigenvalues in [c, C]; K-tilde non-negative",
        "A",
        &pts,
        &evals.iter().map(|e| e.metric.clone()).collect::<Vec<_>>(),
        true,
    );
    if let Some(v) = metric.constants.remove("lambda") {
        metric.constants.insert("c".into(), v);
    }
    if let Some(v) = metric.constants.remove("ceiling") {
        metric.constants.insert("C".into(), v);
    }
    if metric.status != Status::Fail {
        'outer: for (s, e) in pts.iter().zip(&evals) {
            for (kp, eps) in e.k.iter().zip(eps_list) {
                if let Some(kp) = kp {
                    if kp.k < 0.0 {
                        metric.status = Status::Fail;
                        metric.witness = Some(witness(s, Some(*eps), true, kp.k, "K is negative"));
                        break 'outer;
                    }
                }
            }
        }
    }
    entries.push(metric);
    entries.push(
        EntryBuilder::new(
            "kinetic-q-independent",
            "K-tilde independent of q (structural)",
        )
        .done(),
    );
    entries.push(bounded_entry(
        "derivatives-bounded",
        "derivatives of psi, gamma and A bounded",
        "max_derivative",
        &pts,
        &evals.iter().map(|e| e.derivatives).collect::<Vec<_>>(),
    ));
    if let KineticEnergyModel::PolynomialRadial(poly) = spec.kinetic() {
        entries.push(poly_entry(poly, &pts));
    }

    let mut caveats = vec![format!(
        "sampling-based: results certify only the sampled box with {samples} points"
    )];
    if matches!(spec.kinetic(), KineticEnergyModel::Custom(_)) {
        caveats.push(
            "custom kinetic energy: bounds are checked at the listed eps only and cannot rule \
             out degeneration as eps -> 0"
                .into(),
        );
    }
    Ok(AssumptionReport {
        schema_version: REPORT_SCHEMA_VERSION,
        system: spec.name().to_string(),
        sample_box: sample_box.clone(),
        samples,
        eps_list: eps_list.to_vec(),
        entries,
        caveats,
    })
}

fn kinetic_entries(pts: &[Sample], evals: &[PointEval], eps_list: &[f64]) -> Vec<AssumptionEntry> {
    let mut growth = EntryBuilder::new("kinetic-growth", "|d/dt K|, |grad_q K| <= M + C K");
    let mut coerc = EntryBuilder::new("kinetic-coercivity", "|grad_z K|^2 + M >= c K");
    let mut smooth = EntryBuilder::new(
        "kinetic-smoothness",
        "|grad_z K|, |hess_z K| <= M + delta K for every delta > 0",
    );
    let mut failures = 0;
    let mut first = None;
    let (mut c_growth, mut m_growth, mut c_coerc, mut m_coerc): (f64, f64, f64, f64) =
        (0.0, 0.0, f64::INFINITY, 0.0);
    let (mut worst_growth_slope, mut worst_grad_slope, mut worst_smooth_slope) =
        (f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);

    for (j, &eps) in eps_list.iter().enumerate() {
        let mut ok: Vec<(usize, KPoint)> = Vec::with_capacity(pts.len());
        for (i, e) in evals.iter().enumerate() {
            match e.k[j] {
                Some(kp) => ok.push((i, kp)),
                None => {
                    failures += 1;
                    if first.is_none() {
                        first = Some(witness(&pts[i], Some(eps), true, f64::NAN, "non-finite K"));
                    }
                }
            }
        }
        if ok.len() < 10 {
            continue;
        }
        let keys: Vec<(usize, f64)> = ok
            .iter()
            .enumerate()
            .map(|(pos, (_, kp))| (pos, kp.k))
            .collect();
        let upper_half = upper_indices(&keys, 0.5);
        let top: Vec<&(usize, KPoint)> = upper_half.iter().map(|&pos| &ok[pos]).collect();

        // C from the upper half, M absorbs the rest.
        let c = top
            .iter()
            .filter(|(_, kp)| kp.k > 0.0)
            .map(|(_, kp)| kp.growth / kp.k)
            .fold(0.0, f64::max);
        let m = ok
            .iter()
            .map(|(_, kp)| (kp.growth - c * kp.k).max(0.0))
            .fold(0.0, f64::max);
        c_growth = c_growth.max(c);
        m_growth = m_growth.max(m);
        let rays = |f: &dyn Fn(&KPoint) -> f64| {
            let data: Vec<Ray> = upper_half
                .iter()
                .filter_map(|&pos| {
                    let (i, _) = &ok[pos];
                    evals[*i].ray[j].map(|(np, fp)| (pos, (np.k, f(&np)), (fp.k, f(&fp))))
                })
                .collect();
            ray_slope(&data)
        };
        if let Some((slope, pos)) = rays(&|kp| kp.growth / kp.k) {
            worst_growth_slope = worst_growth_slope.max(slope);
            if slope > 0.1 {
                let (i, kp) = &ok[pos];
                growth = growth.fail(witness(
                    &pts[*i],
                    Some(eps),
                    true,
                    kp.growth,
                    format!("time/position derivative of K outgrows K (log-log slope {slope:.3})"),
                ));
            }
        }

        let c2 = top
            .iter()
            .filter(|(_, kp)| kp.k > 0.0)
            .map(|(_, kp)| kp.grad_sq / kp.k)
            .fold(f64::INFINITY, f64::min);
        let m2 = ok
            .iter()
            .map(|(_, kp)| (c2 * kp.k - kp.grad_sq).max(0.0))
            .fold(0.0, f64::max);
        c_coerc = c_coerc.min(c2);
        m_coerc = m_coerc.max(m2);
        let grad_slope = rays(&|kp| kp.grad_sq / kp.k).map(|r| r.0);
        if let Some(s) = grad_slope {
            worst_grad_slope = worst_grad_slope.min(s);
        }
        if !(c2 > 0.0) || grad_slope.is_some_and(|s| s < -1.0) {
            let (i, kp) = top.last().expect("non-empty");
            coerc = coerc.fail(witness(
                &pts[*i],
                Some(eps),
                true,
                kp.grad_sq,
                "gradient of K in z too small relative to K at large K",
            ));
        }

        if let Some((slope, pos)) = rays(&|kp| kp.smooth / kp.k) {
            worst_smooth_slope = worst_smooth_slope.max(slope);
            if slope > -0.05 {
                let (i, kp) = &ok[pos];
                smooth = smooth.fail(witness(
                    &pts[*i],
                    Some(eps),
                    true,
                    kp.smooth,
                    format!("z-derivatives of K are not sublinear in K (log-log slope {slope:.3})"),
                ));
            }
        }
    }
    let growth = growth
        .constant("C", c_growth)
        .constant("M", m_growth)
        .constant("ratio_slope", worst_growth_slope)
        .failures(failures, first.clone())
        .done();
    let coerc = coerc
        .constant("c", c_coerc)
        .constant("M", m_coerc)
        .constant("ratio_slope", worst_grad_slope)
        .failures(failures, first.clone())
        .done();
    let smooth = smooth
        .constant("ratio_slope", worst_smooth_slope)
        .failures(failures, first)
        .done();
    vec![growth, coerc, smooth]
}

/// `K ≥ c‖z‖^{2η}` with η from the top decile in `‖z‖`.
fn coercivity_entry(pts: &[Sample], evals: &[PointEval], eps_list: &[f64]) -> AssumptionEntry {
    let mut b = EntryBuilder::new("kinetic-lower-bound", "K >= c |z|^(2 eta)");
    let mut eta_min = f64::INFINITY;
    let mut c_min = f64::INFINITY;
    for (j, &eps) in eps_list.iter().enumerate() {
        let ok: Vec<(usize, KPoint)> = evals
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.k[j].map(|kp| (i, kp)))
            .collect();
        if ok.len() < 10 {
            continue;
        }
        let keys: Vec<(usize, f64)> = ok
            .iter()
            .enumerate()
            .map(|(pos, (_, kp))| (pos, kp.znorm))
            .collect();
        let top: Vec<(f64, f64)> = upper_indices(&keys, 0.1)
            .iter()
            .map(|&pos| (ok[pos].1.znorm, ok[pos].1.k))
            .collect();
        let Some(two_eta) = log_slope(&top) else {
            let (i, kp) = ok[*upper_indices(&keys, 0.1).last().expect("non-empty")];
            b = b.fail(witness(
                &pts[i],
                Some(eps),
                true,
                kp.k,
                "K does not grow with |z|",
            ));
            continue;
        };
        let eta = 0.5 * two_eta;
        let mut c = f64::INFINITY;
        let mut arg = 0;
        for (i, kp) in &ok {
            if kp.znorm > 0.0 {
                let r = kp.k / kp.znorm.powf(2.0 * eta);
                if r < c {
                    c = r;
                    arg = *i;
                }
            }
        }
        eta_min = eta_min.min(eta);
        c_min = c_min.min(c);
        if !(eta > 0.0) || !(c > 0.0) {
            let kp = evals[arg].k[j].expect("evaluated");
            b = b.fail(witness(
                &pts[arg],
                Some(eps),
                true,
                kp.k,
                format!("no positive (c, eta) on the sample (eta = {eta:.3}, c = {c:.3e})"),
            ));
        }
    }
    b.constant("eta", eta_min).constant("c", c_min).done()
}

/// Lowest and highest polynomial coefficients stay positive over the sampled times.
fn poly_entry(poly: &crate::model::PolynomialRadial, pts: &[Sample]) -> AssumptionEntry {
    let mut b = EntryBuilder::new(
        "poly-leading-coefficients",
        "d_k1(t) and d_k2(t) uniformly bounded below by a positive constant",
    );
    let mut floor = f64::INFINITY;
    for l in [poly.k1(), poly.k2()] {
        let Some(d) = poly.coefficient(l) else {
            continue;
        };
        let mut worst = (f64::INFINITY, 0);
        for (i, s) in pts.iter().enumerate() {
            let v = d.eval(s.t);
            if !(v >= worst.0) {
                worst = (v, i);
            }
        }
        floor = floor.min(worst.0);
        if !(worst.0 > 0.0) {
            let s = &pts[worst.1];
            b = b.fail(Witness {
                t: s.t,
                q: s.q.iter().copied().collect(),
                z: None,
                eps: None,
                value: worst.0,
                detail: format!("coefficient d_{l}(t) = {} is not positive", worst.0),
            });
        }
    }
    b.constant("d_floor", floor).done()
}

/// Smallest `(a, b) ≥ 0` with `a + b‖q‖² + V ≥ 0` on the sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confinement {
    pub a: f64,
    pub b: f64,
    pub status: Status,
    pub witness: Option<Witness>,
}

/// Fits `(a, b)` so that `a + b‖q‖² + V(t, q) ≥ 0` on sampled `(t, q)`.
///
/// `b` is the largest `−V/‖q‖²` away from the origin (`‖q‖ ≥ 1`, or the
/// outer half of the box when it is smaller), `a` the remaining deficit.
/// Fails when `−V/‖q‖²` on the outer shell exceeds its mid-box value by more
/// than half, i.e. `V` falls off faster than quadratically.
pub fn confinement_check(
    spec: &SystemSpec,
    sample_box: &SampleBox,
    samples: usize,
) -> Result<Confinement> {
    sample_box.check(spec.dim())?;
    if samples < 1000 {
        return Err(Error::Precondition(format!(
            "need at least 1000 samples, got {samples}"
        )));
    }
    let pts = sample_box.draw(samples);
    let vals: Vec<f64> = pts
        .par_iter()
        .map(|s| spec.potential().eval(s.t, &s.q))
        .collect();
    let mut failure = None;
    for (s, v) in pts.iter().zip(&vals) {
        if !v.is_finite() {
            failure = Some(witness(s, None, false, *v, "non-finite potential"));
            break;
        }
    }
    let max_norm = pts.iter().map(|s| s.q.norm()).fold(0.0, f64::max);
    let cut = 1.0f64.min(0.5 * max_norm);
    let mut b = 0.0f64;
    for (s, v) in pts.iter().zip(&vals) {
        let r2 = s.q.norm_squared();
        if v.is_finite() && r2 >= cut * cut && r2 > 0.0 {
            b = b.max(-v / r2);
        }
    }
    let mut a = 0.0f64;
    for (s, v) in pts.iter().zip(&vals) {
        if v.is_finite() {
            a = a.max(-v - b * s.q.norm_squared());
        }
    }

    let shell_b = |lo: f64, hi: f64| {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, (s, v)) in pts.iter().zip(&vals).enumerate() {
            let r2 = s.q.norm_squared();
            if s.r >= lo && s.r <= hi && r2 > 0.0 && v.is_finite() && -v / r2 > best.0 {
                best = (-v / r2, i);
            }
        }
        best
    };
    let (mid, _) = shell_b(0.45, 0.55);
    let (outer, arg) = shell_b(SHELL, 1.0);
    if failure.is_none() && arg != usize::MAX && outer > 0.0 && outer > 1.5 * mid.max(0.0) {
        let s = &pts[arg];
        failure = Some(witness(
            s,
            None,
            false,
            vals[arg],
            format!(
                "V decreases faster than quadratically: -V/|q|^2 = {outer:.3e} on the outer shell \
                 vs {:.3e} mid-box",
                mid.max(0.0)
            ),
        ));
    }
    Ok(Confinement {
        a,
        b,
        status: if failure.is_some() {
            Status::Fail
        } else {
            Status::Pass
        },
        witness: failure,
    })
}

/// `U = a + (1 + b)‖q‖² + H^ε` along a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovTrace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Least-squares slope of `ln(1 + U)` against `t`.
    pub growth_rate: f64,
    pub rate_budget: f64,
    pub flagged: bool,
    /// The path contained a non-finite state; the trace stops before it.
    pub truncated: bool,
    /// `(t, U)` at the last finite state.
    pub last_finite: Option<(f64, f64)>,
}

/// Evaluates the Lyapunov function along `path` and flags growth of
/// `ln(1 + U)` faster than `rate_budget` per unit time.
pub fn lyapunov_diagnostic(
    spec: &SystemSpec,
    eps: f64,
    path: &[State],
    confinement: &Confinement,
    rate_budget: f64,
) -> Result<LyapunovTrace> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let mut times = Vec::with_capacity(path.len());
    let mut values = Vec::with_capacity(path.len());
    let mut truncated = false;
    for s in path {
        let u = if s.is_finite() {
            hamiltonian(spec, eps, s)
                .ok()
                .map(|h| confinement.a + (1.0 + confinement.b) * s.q.norm_squared() + h)
                .filter(|u| u.is_finite())
        } else {
            None
        };
        match u {
            Some(u) => {
                times.push(s.t);
                values.push(u);
            }
            None => {
                truncated = true;
                break;
            }
        }
    }
    let growth_rate = if times.len() >= 2 {
        let n = times.len() as f64;
        let ly: Vec<f64> = values.iter().map(|u| u.max(0.0).ln_1p()).collect();
        let mt = times.iter().sum::<f64>() / n;
        let my = ly.iter().sum::<f64>() / n;
        let stt: f64 = times.iter().map(|t| (t - mt).powi(2)).sum();
        if stt > 0.0 {
            times
                .iter()
                .zip(&ly)
                .map(|(t, y)| (t - mt) * (y - my))
                .sum::<f64>()
                / stt
        } else {
            0.0
        }
    } else {
        0.0
    };
    let last_finite = times.last().copied().zip(values.last().copied());
    Ok(LyapunovTrace {
        times,
        values,
        growth_rate,
        rate_budget,
        flagged: growth_rate > rate_budget,
        truncated,
        last_finite,
    })
}
