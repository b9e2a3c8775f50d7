//! Coupled Monte Carlo sweeps over ε: strong position error against the
//! limiting equation, decay of `u = p − ψ`, and boundedness of the kinetic
//! energy.
//!
//! One ensemble pass drives every ε leg, and the limiting legs, with a
//! single Brownian path per sample generated on the finest grid. Coarser legs
//! see the aggregated increments. Paths are processed in fixed blocks whose
//! partial sums are merged in block order, so results do not depend on the
//! number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SystemSpec, Vector};
use crate::noise::{NoisePath, TimeGrid};
use crate::sde::{advance, explicit_guard, step_limit_with, NoiseDrift, Phase, Scheme};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
const BLOCK: usize = 32;

/// How the full-system step size follows ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule")]
pub enum DtRule {
    /// `dt ≤ ε / divisor`, nested across the ε list.
    EpsFraction { divisor: f64 },
    /// One step size for every leg.
    Fixed { dt: f64 },
}

impl Default for DtRule {
    fn default() -> Self {
        DtRule::EpsFraction { divisor: 20.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorMode {
    /// `sup_t E‖·‖^p`: the largest per-time Monte Carlo mean on the grid.
    #[default]
    SupExpectation,
    /// `E sup_t ‖·‖^p`: the mean of per-path suprema.
    ExpectationSup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub eps_list: Vec<f64>,
    /// Moment order.
    pub p: f64,
    pub t_final: f64,
    pub n_paths: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub dt_rule: DtRule,
    #[serde(default)]
    pub scheme: Scheme,
    pub q0: Vec<f64>,
    /// Initial `p − ψ(0, q0)`; zero when absent.
    #[serde(default)]
    pub u0: Option<Vec<f64>>,
    /// Adds a leg at the finest ε with half the step size.
    #[serde(default)]
    pub refine: bool,
    #[serde(default = "default_abort_budget")]
    pub max_aborted_fraction: f64,
}

fn default_abort_budget() -> f64 {
    0.01
}

impl SweepConfig {
    pub fn new(eps_list: Vec<f64>, p: f64, t_final: f64, n_paths: usize, q0: Vec<f64>) -> Self {
        Self {
            eps_list,
            p,
            t_final,
            n_paths,
            master_seed: 0,
            dt_rule: DtRule::default(),
            scheme: Scheme::default(),
            q0,
            u0: None,
            refine: false,
            max_aborted_fraction: default_abort_budget(),
        }
    }

    fn validate(&self, spec: &SystemSpec) -> Result<()> {
        if self.eps_list.is_empty() {
            return Err(Error::InvalidArgument("eps_list is empty".into()));
        }
        if self.eps_list.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidArgument("every eps must be positive".into()));
        }
        if self.eps_list.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidArgument(
                "eps_list must be non-increasing".into(),
            ));
        }
        if !(self.p > 0.0 && self.p.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "p must be positive, got {}",
                self.p
            )));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "T must be positive, got {}",
                self.t_final
            )));
        }
        if self.n_paths < 100 {
            return Err(Error::Precondition(format!(
                "n_paths must be at least 100, got {}",
                self.n_paths
            )));
        }
        if self.q0.len() != spec.dim() {
            return Err(Error::Dimension {
                context: "initial position q0",
                expected: spec.dim().to_string(),
                got: self.q0.len().to_string(),
            });
        }
        if let Some(u0) = &self.u0 {
            if u0.len() != spec.dim() {
                return Err(Error::Dimension {
                    context: "initial momentum offset u0",
                    expected: spec.dim().to_string(),
                    got: u0.len().to_string(),
                });
            }
        }
        if !(0.0..=1.0).contains(&self.max_aborted_fraction) {
            return Err(Error::InvalidArgument(
                "max_aborted_fraction must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Which per-time observables an ensemble pass records.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Observables {
    /// `‖q^ε − q‖^p` against the limit with the noise-induced drift.
    pub error: bool,
    /// `‖q^ε − q‖^p` against the limit with the noise-induced drift removed.
    pub error_without_drift: bool,
    /// `‖p − ψ(t,q)‖^p`.
    pub momentum: bool,
    /// `K^r` for the given order `r`.
    pub energy_order: Option<f64>,
}

impl Observables {
    pub fn all(energy_order: f64) -> Self {
        Self {
            error: true,
            error_without_drift: true,
            momentum: true,
            energy_order: Some(energy_order),
        }
    }
}

#[derive(Debug, Clone)]
struct LegPlan {
    eps: f64,
    factor: usize,
    steps: usize,
    refined: bool,
}

#[derive(Debug, Clone)]
struct Plan {
    fine: TimeGrid,
    legs: Vec<LegPlan>,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn make_plan(cfg: &SweepConfig) -> Result<Plan> {
    let t = cfg.t_final;
    let eps_min = *cfg.eps_list.last().expect("validated non-empty");
    let (base_steps, factors): (usize, Vec<usize>) = match cfg.dt_rule {
        DtRule::Fixed { dt } => {
            if !(dt > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "dt must be positive, got {dt}"
                )));
            }
            let steps = (t / dt).round();
            if steps < 1.0 || ((steps * dt - t) / t).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "dt = {dt} does not divide T = {t}"
                )));
            }
            (steps as usize, vec![1; cfg.eps_list.len()])
        }
        DtRule::EpsFraction { divisor } => {
            if !(divisor > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "divisor must be positive, got {divisor}"
                )));
            }
            let factors: Vec<usize> = cfg
                .eps_list
                .iter()
                .map(|e| ((e / eps_min) * (1.0 + 1e-12)).floor().max(1.0) as usize)
                .collect();
            let lcm = factors.iter().fold(1usize, |acc, &f| acc / gcd(acc, f) * f);
            let min_steps = (t * divisor / eps_min * (1.0 - 1e-12)).ceil().max(1.0) as usize;
            if lcm > 1_000_000 {
                return Err(Error::InvalidArgument(
                    "eps_list is not nested closely enough to share one fine grid".into(),
                ));
            }
            (min_steps.div_ceil(lcm) * lcm, factors)
        }
    };
    let mult = if cfg.refine { 2 } else { 1 };
    let fine = TimeGrid::new(0.0, t, base_steps * mult)?;
    let mut legs: Vec<LegPlan> = cfg
        .eps_list
        .iter()
        .zip(&factors)
        .map(|(&eps, &f)| LegPlan {
            eps,
            factor: f * mult,
            steps: base_steps / f,
            refined: false,
        })
        .collect();
    if cfg.refine {
        let last = legs.last().expect("non-empty").clone();
        legs.push(LegPlan {
            eps: last.eps,
            factor: last.factor / 2,
            steps: last.steps * 2,
            refined: true,
        });
    }
    Ok(Plan { fine, legs })
}

#[derive(Debug, Clone)]
struct Moments {
    sum: Vec<f64>,
    sumsq: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self {
            sum: vec![0.0; len],
            sumsq: vec![0.0; len],
        }
    }

    fn add(&mut self, vals: &[f64]) {
        for ((s, q), v) in self.sum.iter_mut().zip(self.sumsq.iter_mut()).zip(vals) {
            *s += v;
            *q += v * v;
        }
    }

    fn merge(&mut self, other: &Moments) {
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sumsq.iter_mut().zip(&other.sumsq) {
            *a += b;
        }
    }

    fn stats(&self, n: usize) -> SeriesStats {
        let nf = n as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / nf).collect();
        let stderr = self
            .sumsq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                if n < 2 {
                    f64::NAN
                } else {
                    ((q / nf - m * m).max(0.0) * nf / (nf - 1.0) / nf).sqrt()
                }
            })
            .collect();
        SeriesStats { mean, stderr }
    }
}

/// Per-leg accumulators (sums over paths) or values (one path).
#[derive(Debug, Clone)]
struct LegData<T> {
    error: Option<T>,
    error_nd: Option<T>,
    momentum: Option<T>,
    energy: Option<T>,
    sup_error: Option<T>,
    sup_error_nd: Option<T>,
}

impl<T> LegData<T> {
    fn build(obs: &Observables, mut make: impl FnMut(usize) -> T, len: usize) -> Self {
        Self {
            error: obs.error.then(|| make(len)),
            error_nd: obs.error_without_drift.then(|| make(len)),
            momentum: obs.momentum.then(|| make(len)),
            energy: obs.energy_order.map(|_| make(len)),
            sup_error: obs.error.then(|| make(1)),
            sup_error_nd: obs.error_without_drift.then(|| make(1)),
        }
    }

    fn zip_with<U>(&mut self, other: &LegData<U>, mut f: impl FnMut(&mut T, &U)) {
        fn pair<T, U>(a: &mut Option<T>, b: &Option<U>, f: &mut impl FnMut(&mut T, &U)) {
            if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                f(a, b);
            }
        }
        pair(&mut self.error, &other.error, &mut f);
        pair(&mut self.error_nd, &other.error_nd, &mut f);
        pair(&mut self.momentum, &other.momentum, &mut f);
        pair(&mut self.energy, &other.energy, &mut f);
        pair(&mut self.sup_error, &other.sup_error, &mut f);
        pair(&mut self.sup_error_nd, &other.sup_error_nd, &mut f);
    }
}

struct BlockAcc {
    legs: Vec<LegData<Moments>>,
    completed: usize,
    aborted: usize,
    first_failure: Option<(usize, String)>,
}

impl BlockAcc {
    fn new(plan: &Plan, obs: &Observables) -> Self {
        Self {
            legs: plan
                .legs
                .iter()
                .map(|l| LegData::build(obs, Moments::new, l.steps + 1))
                .collect(),
            completed: 0,
            aborted: 0,
            first_failure: None,
        }
    }

    fn merge(&mut self, other: &BlockAcc) {
        for (a, b) in self.legs.iter_mut().zip(&other.legs) {
            a.zip_with(b, |x, y| x.merge(y));
        }
        self.completed += other.completed;
        self.aborted += other.aborted;
        if self.first_failure.is_none() {
            self.first_failure.clone_from(&other.first_failure);
        }
    }
}

struct Runner<'a> {
    spec: &'a SystemSpec,
    cfg: &'a SweepConfig,
    plan: &'a Plan,
    obs: Observables,
}

impl Runner<'_> {
    fn limit_leg(&self, noise: &NoisePath, drift: NoiseDrift) -> Result<Vec<f64>> {
        let n = self.spec.dim();
        let grid = &self.plan.fine;
        let dt = grid.dt();
        let mut out = Vec::with_capacity(n * (grid.steps + 1));
        let mut q = Vector::from_column_slice(&self.cfg.q0);
        out.extend_from_slice(q.as_slice());
        for step in 0..grid.steps {
            let t = grid.time(step);
            q = step_limit_with(self.spec, t, &q, dt, noise.increment(step), drift)?;
            out.extend_from_slice(q.as_slice());
        }
        Ok(out)
    }

    fn path(&self, index: usize) -> Result<Vec<LegData<Vec<f64>>>> {
        let spec = self.spec;
        let n = spec.dim();
        let k = spec.noise_dim();
        let noise = NoisePath::generate(self.cfg.master_seed, index as u64, self.plan.fine, k);
        let limit = if self.obs.error {
            Some(self.limit_leg(&noise, NoiseDrift::Include)?)
        } else {
            None
        };
        let limit_nd = if self.obs.error_without_drift {
            Some(self.limit_leg(&noise, NoiseDrift::Suppress)?)
        } else {
            None
        };
        let p = self.cfg.p;
        let q0 = Vector::from_column_slice(&self.cfg.q0);
        let u0 = self
            .cfg
            .u0
            .as_ref()
            .map_or_else(|| Vector::zeros(n), |u| Vector::from_column_slice(u));
        let gap = |q: &Vector, reference: &[f64], fine_index: usize| -> f64 {
            let r = &reference[fine_index * n..(fine_index + 1) * n];
            q.iter()
                .zip(r)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                .powf(p)
        };

        let mut out = Vec::with_capacity(self.plan.legs.len());
        let mut dw = vec![0.0; k];
        for leg in &self.plan.legs {
            let mut vals = LegData::build(&self.obs, |len| vec![0.0; len], leg.steps + 1);
            let dt = self.plan.fine.dt() * leg.factor as f64;
            let mut x = Phase::at(spec, leg.eps, 0.0, q0.clone(), u0.clone())
                .map_err(|_| Error::Precondition("initial state is not admissible".into()))?;
            if self.cfg.scheme == Scheme::ExplicitEm {
                explicit_guard(spec, leg.eps, &x.to_state(spec)?, dt)?;
            }
            for j in 0..=leg.steps {
                if j > 0 {
                    noise.aggregated_increment(leg.factor, j - 1, &mut dw);
                    x = advance(spec, leg.eps, &x, dt, &dw, self.cfg.scheme)?;
                    x.t = self.plan.fine.time(j * leg.factor);
                }
                let fi = j * leg.factor;
                if let (Some(v), Some(l)) = (vals.error.as_mut(), limit.as_ref()) {
                    v[j] = gap(&x.q, l, fi);
                }
                if let (Some(v), Some(l)) = (vals.error_nd.as_mut(), limit_nd.as_ref()) {
                    v[j] = gap(&x.q, l, fi);
                }
                if let Some(v) = vals.momentum.as_mut() {
                    v[j] = x.u.norm().powf(p);
                }
                if let (Some(v), Some(r)) = (vals.energy.as_mut(), self.obs.energy_order) {
                    v[j] = x.kinetic_energy().powf(r);
                }
            }
            if let (Some(s), Some(e)) = (vals.sup_error.as_mut(), vals.error.as_ref()) {
                s[0] = e.iter().copied().fold(0.0, f64::max);
            }
            if let (Some(s), Some(e)) = (vals.sup_error_nd.as_mut(), vals.error_nd.as_ref()) {
                s[0] = e.iter().copied().fold(0.0, f64::max);
            }
            out.push(vals);
        }
        Ok(out)
    }

    fn block(&self, range: std::ops::Range<usize>) -> Result<BlockAcc> {
        let mut acc = BlockAcc::new(self.plan, &self.obs);
        for index in range {
            match self.path(index) {
                Ok(vals) => {
                    for (a, v) in acc.legs.iter_mut().zip(&vals) {
                        a.zip_with(v, |m, x| m.add(x));
                    }
                    acc.completed += 1;
                }
                Err(e) if e.is_blow_up() => {
                    acc.aborted += 1;
                    if acc.first_failure.is_none() {
                        acc.first_failure = Some((index, e.to_string()));
                    }
                }
                Err(e) => return Err(e),
            }
        }
        Ok(acc)
    }
}

/// Mean and standard error per grid time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl SeriesStats {
    /// `(max mean, its stderr, grid index)`.
    pub fn sup(&self) -> (f64, f64, usize) {
        let mut best = (f64::NEG_INFINITY, f64::NAN, 0);
        for (i, (&m, &s)) in self.mean.iter().zip(&self.stderr).enumerate() {
            if m > best.0 {
                best = (m, s, i);
            }
        }
        best
    }

    pub fn last(&self) -> (f64, f64) {
        (
            *self.mean.last().unwrap_or(&f64::NAN),
            *self.stderr.last().unwrap_or(&f64::NAN),
        )
    }
}

/// Statistics of one ε leg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegSummary {
    pub eps: f64,
    pub dt: f64,
    pub steps: usize,
    /// The extra half-step leg at the finest ε.
    pub refined: bool,
    pub error: Option<SeriesStats>,
    pub error_without_drift: Option<SeriesStats>,
    pub momentum: Option<SeriesStats>,
    pub energy: Option<SeriesStats>,
    pub sup_error: Option<SeriesStats>,
    pub sup_error_without_drift: Option<SeriesStats>,
}

/// Outcome of one ensemble pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub config: SweepConfig,
    pub energy_order: Option<f64>,
    pub fine_steps: usize,
    pub completed: usize,
    pub aborted: usize,
    pub aborted_fraction: f64,
    pub legs: Vec<LegSummary>,
}

/// Runs every ε leg (and the limiting legs) over `cfg.n_paths` coupled samples.
///
/// Paths whose integration blows up are dropped and counted; more than
/// `cfg.max_aborted_fraction` of them invalidates the run.
pub fn run_ensemble(
    spec: &SystemSpec,
    cfg: &SweepConfig,
    obs: Observables,
) -> Result<EnsembleSummary> {
    cfg.validate(spec)?;
    if let Some(r) = obs.energy_order {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "energy order must be positive, got {r}"
            )));
        }
    }
    let plan = make_plan(cfg)?;
    let runner = Runner {
        spec,
        cfg,
        plan: &plan,
        obs,
    };
    let n_blocks = cfg.n_paths.div_ceil(BLOCK);
    let wave = (rayon::current_num_threads() * 2).max(1);
    let mut total = BlockAcc::new(&plan, &obs);
    let mut start = 0;
    while start < n_blocks {
        let end = (start + wave).min(n_blocks);
        let blocks: Vec<Result<BlockAcc>> = (start..end)
            .into_par_iter()
            .map(|b| runner.block(b * BLOCK..((b + 1) * BLOCK).min(cfg.n_paths)))
            .collect();
        for b in blocks {
            total.merge(&b?);
        }
        start = end;
    }

    let aborted_fraction = total.aborted as f64 / cfg.n_paths as f64;
    if aborted_fraction > cfg.max_aborted_fraction {
        let detail = total
            .first_failure
            .as_ref()
            .map(|(i, m)| format!("; first failure on path {i}: {m}"))
            .unwrap_or_default();
        return Err(Error::ExperimentInvalid(format!(
            "{} of {} paths aborted ({:.2}% > {:.2}% budget){detail}",
            total.aborted,
            cfg.n_paths,
            100.0 * aborted_fraction,
            100.0 * cfg.max_aborted_fraction
        )));
    }
    if total.completed < 2 {
        return Err(Error::ExperimentInvalid(
            "fewer than two paths completed".into(),
        ));
    }
    let n = total.completed;
    let stats = |m: &Option<Moments>| m.as_ref().map(|m| m.stats(n));
    let legs = plan
        .legs
        .iter()
        .zip(&total.legs)
        .map(|(l, acc)| LegSummary {
            eps: l.eps,
            dt: plan.fine.dt() * l.factor as f64,
            steps: l.steps,
            refined: l.refined,
            error: stats(&acc.error),
            error_without_drift: stats(&acc.error_nd),
            momentum: stats(&acc.momentum),
            energy: stats(&acc.energy),
            sup_error: stats(&acc.sup_error),
            sup_error_without_drift: stats(&acc.sup_error_nd),
        })
        .collect();
    Ok(EnsembleSummary {
        config: cfg.clone(),
        energy_order: obs.energy_order,
        fine_steps: plan.fine.steps,
        completed: total.completed,
        aborted: total.aborted,
        aborted_fraction,
        legs,
    })
}

/// Which observable a report summarizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quantity {
    PositionError,
    PositionErrorWithoutDrift,
    Momentum,
    Energy,
}

/// Least-squares fit of `ln y = intercept + slope · ln x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    /// `ln y − fitted` per point.
    pub residuals: Vec<f64>,
}

/// Ordinary least squares on `(ln xs, ln ys)` with the standard error of the slope.
pub fn fit_rate(xs: &[f64], ys: &[f64]) -> Result<RateFit> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!(
            "fit_rate needs equal lengths, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "fit_rate needs at least 3 points, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(
            "fit_rate needs positive finite data".into(),
        ));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 1e-300 * n || sxx <= f64::EPSILON * lx.iter().map(|x| x * x).sum::<f64>() {
        return Err(Error::Degenerate("abscissae have zero variance".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| y - (intercept + slope * x))
        .collect();
    let s2 = residuals.iter().map(|r| r * r).sum::<f64>() / (n - 2.0);
    Ok(RateFit {
        slope,
        intercept,
        slope_stderr: (s2 / sxx).sqrt(),
        residuals,
    })
}

/// Error at the finest ε with the configured step and with half of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtHalving {
    pub eps: f64,
    pub value: f64,
    pub value_half_dt: f64,
    /// `|value_half_dt − value| / value`.
    pub relative_change: f64,
}

/// Per-ε Monte Carlo estimates with a fitted log-log rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub schema_version: u32,
    pub quantity: Quantity,
    pub mode: ErrorMode,
    pub eps_list: Vec<f64>,
    pub p: f64,
    pub t_final: f64,
    pub errors: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Grid time at which each supremum was attained (`SupExpectation` only).
    pub sup_time: Vec<Option<f64>>,
    /// Absent when fewer than three distinct ε are available.
    pub fit: Option<RateFit>,
    pub n_paths: usize,
    pub completed: usize,
    pub aborted_fraction: f64,
    pub dt_rule: DtRule,
    pub scheme: Scheme,
    pub master_seed: u64,
    pub dt_halving: Option<DtHalving>,
}

impl ConvergenceReport {
    pub fn slope(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.slope)
    }

    /// `eps,error,stderr` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eps,error,stderr\n");
        for ((e, y), s) in self.eps_list.iter().zip(&self.errors).zip(&self.stderr) {
            out.push_str(&format!("{e},{y},{s}\n"));
        }
        out
    }
}

fn leg_value(
    leg: &LegSummary,
    quantity: Quantity,
    mode: ErrorMode,
) -> Result<(f64, f64, Option<f64>)> {
    let missing =
        || Error::InvalidArgument(format!("{quantity:?} was not recorded in this ensemble"));
    let series = match (quantity, mode) {
        (Quantity::PositionError, ErrorMode::ExpectationSup) => {
            let s = leg.sup_error.as_ref().ok_or_else(missing)?;
            return Ok((s.mean[0], s.stderr[0], None));
        }
        (Quantity::PositionErrorWithoutDrift, ErrorMode::ExpectationSup) => {
            let s = leg.sup_error_without_drift.as_ref().ok_or_else(missing)?;
            return Ok((s.mean[0], s.stderr[0], None));
        }
        (Quantity::PositionError, _) => leg.error.as_ref(),
        (Quantity::PositionErrorWithoutDrift, _) => leg.error_without_drift.as_ref(),
        (Quantity::Momentum, _) => leg.momentum.as_ref(),
        (Quantity::Energy, _) => leg.energy.as_ref(),
    }
    .ok_or_else(missing)?;
    let (m, s, i) = series.sup();
    Ok((m, s, Some(leg.dt * i as f64)))
}

impl EnsembleSummary {
    /// Convergence report for one observable of this pass.
    pub fn report(&self, quantity: Quantity, mode: ErrorMode) -> Result<ConvergenceReport> {
        let cfg = &self.config;
        let main: Vec<&LegSummary> = self.legs.iter().filter(|l| !l.refined).collect();
        let mut errors = Vec::new();
        let mut stderr = Vec::new();
        let mut sup_time = Vec::new();
        for leg in &main {
            let (m, s, t) = leg_value(leg, quantity, mode)?;
            errors.push(m);
            stderr.push(s);
            sup_time.push(t);
        }
        let eps: Vec<f64> = main.iter().map(|l| l.eps).collect();
        let mut distinct = eps.clone();
        distinct.dedup();
        let fit = if distinct.len() >= 3 && errors.iter().all(|e| *e > 0.0) {
            fit_rate(&eps, &errors).ok()
        } else {
            None
        };
        let dt_halving = match self.legs.iter().find(|l| l.refined) {
            Some(r) => {
                let base = main.last().expect("non-empty");
                let (v, _, _) = leg_value(base, quantity, mode)?;
                let (h, _, _) = leg_value(r, quantity, mode)?;
                Some(DtHalving {
                    eps: r.eps,
                    value: v,
                    value_half_dt: h,
                    relative_change: (h - v).abs() / v.abs(),
                })
            }
            None => None,
        };
        Ok(ConvergenceReport {
            schema_version: REPORT_SCHEMA_VERSION,
            quantity,
            mode,
            eps_list: eps,
            p: cfg.p,
            t_final: cfg.t_final,
            errors,
            stderr,
            sup_time,
            fit,
            n_paths: cfg.n_paths,
            completed: self.completed,
            aborted_fraction: self.aborted_fraction,
            dt_rule: cfg.dt_rule,
            scheme: cfg.scheme,
            master_seed: cfg.master_seed,
            dt_halving,
        })
    }

    pub fn energy_table(&self) -> Result<EnergyTable> {
        let order = self.energy_order.ok_or_else(|| {
            Error::InvalidArgument("energy was not recorded in this ensemble".into())
        })?;
        let rep = self.report(Quantity::Energy, ErrorMode::SupExpectation)?;
        let max = rep.errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = rep.errors.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(EnergyTable {
            schema_version: REPORT_SCHEMA_VERSION,
            eps_list: rep.eps_list,
            q_order: order,
            t_final: rep.t_final,
            values: rep.errors,
            stderr: rep.stderr,
            max_min_ratio: max / min,
            n_paths: rep.n_paths,
            completed: rep.completed,
            aborted_fraction: rep.aborted_fraction,
            master_seed: rep.master_seed,
        })
    }
}

/// `sup_t E[K^ε(t, x_t)^r]` per ε.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyTable {
    pub schema_version: u32,
    pub eps_list: Vec<f64>,
    pub q_order: f64,
    pub t_final: f64,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub max_min_ratio: f64,
    pub n_paths: usize,
    pub completed: usize,
    pub aborted_fraction: f64,
    pub master_seed: u64,
}

impl EnergyTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eps,value,stderr\n");
        for ((e, y), s) in self.eps_list.iter().zip(&self.values).zip(&self.stderr) {
            out.push_str(&format!("{e},{y},{s}\n"));
        }
        out
    }
}

/// Strong position error `‖q^ε − q‖^p` per ε with fitted rate.
pub fn strong_error_sweep(
    spec: &SystemSpec,
    cfg: &SweepConfig,
    mode: ErrorMode,
) -> Result<ConvergenceReport> {
    let obs = Observables {
        error: true,
        ..Observables::default()
    };
    run_ensemble(spec, cfg, obs)?.report(Quantity::PositionError, mode)
}

/// `sup_t E‖p^ε − ψ(t, q^ε)‖^p` per ε with fitted rate.
pub fn momentum_decay_sweep(spec: &SystemSpec, cfg: &SweepConfig) -> Result<ConvergenceReport> {
    let obs = Observables {
        momentum: true,
        ..Observables::default()
    };
    run_ensemble(spec, cfg, obs)?.report(Quantity::Momentum, ErrorMode::SupExpectation)
}

/// `sup_t E[K^ε(t, x_t)^{q_order}]` per ε.
pub fn energy_boundedness(
    spec: &SystemSpec,
    cfg: &SweepConfig,
    q_order: f64,
) -> Result<EnergyTable> {
    let obs = Observables {
        energy_order: Some(q_order),
        ..Observables::default()
    };
    run_ensemble(spec, cfg, obs)?.energy_table()
}
