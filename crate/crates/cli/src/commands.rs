//! Subcommand implementations. Every artifact lands in the configured output
//! directory and embeds the resolved configuration.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use smallmass_core::registry::resolve_params;
use smallmass_core::sde::{full_csv_header, limit_csv_header, write_full_rows, write_limit_rows};
use smallmass_core::{
    check_assumptions, confinement_check, integrate_full, integrate_limit, limiting_coeffs,
    make_builtin, run_ensemble, DriftAssembly, DtRule, ErrorMode, NoisePath, Observables, Quantity,
    SampleBox, State, SweepConfig, SystemSpec, TimeGrid, Vector,
};

use crate::config::{EnsembleConfig, Format, GridConfig, Layout, Legs, RunConfig, SCHEMA_VERSION};
use crate::error::CliError;

/// Files written by a command, inside the output directory.
pub type Written = Vec<PathBuf>;

/// Fills parameter defaults and builds the system.
pub fn resolve(mut cfg: RunConfig) -> Result<(RunConfig, SystemSpec), CliError> {
    cfg.params = resolve_params(&cfg.system, &cfg.params)?;
    let spec = make_builtin(&cfg.system, &cfg.params)?;
    Ok((cfg, spec))
}

struct Out<'a> {
    cfg: &'a RunConfig,
    written: Written,
}

impl<'a> Out<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self, CliError> {
        fs::create_dir_all(&cfg.output.directory)?;
        Ok(Self {
            cfg,
            written: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output.directory.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        if !self.cfg.output.wants(Format::Json) {
            return Ok(());
        }
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value).map_err(smallmass_core::Error::from)?;
        text.push('\n');
        fs::write(&path, text)?;
        self.written.push(path);
        Ok(())
    }

    /// CSV preceded by a `# config:` line.
    fn csv(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        if !self.cfg.output.wants(Format::Csv) {
            return Ok(());
        }
        let path = self.path(name);
        let mut w = BufWriter::new(fs::File::create(&path)?);
        writeln!(w, "# config: {}", self.cfg.to_json_line())?;
        body(&mut w)?;
        w.flush()?;
        self.written.push(path);
        Ok(())
    }
}

fn vector(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

fn initial(cfg: &RunConfig, spec: &SystemSpec) -> Result<(Vec<f64>, Option<Vec<f64>>), CliError> {
    let n = spec.dim();
    let (q0, u0) = match &cfg.initial {
        Some(i) => (i.q0.clone(), i.u0.clone()),
        None => (vec![0.0; n], None),
    };
    if q0.len() != n || u0.as_ref().is_some_and(|u| u.len() != n) {
        return Err(CliError::Config(format!(
            "[initial] vectors must have length {n} for system '{}'",
            cfg.system
        )));
    }
    Ok((q0, u0))
}

fn ensemble(cfg: &RunConfig) -> EnsembleConfig {
    cfg.ensemble.clone().unwrap_or(EnsembleConfig {
        n_paths: 1,
        master_seed: 0,
    })
}

fn simulate_grid(grid: &GridConfig, eps: f64) -> Result<TimeGrid, CliError> {
    let g = match (grid.steps, grid.dt_rule) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "[grid] takes either steps or dt_rule, not both".into(),
            ))
        }
        (Some(steps), None) => TimeGrid::new(0.0, grid.t_final, steps)?,
        (None, rule) => {
            let dt = match rule.unwrap_or_default() {
                DtRule::EpsFraction { divisor } => eps / divisor,
                DtRule::Fixed { dt } => dt,
            };
            TimeGrid::with_max_step(0.0, grid.t_final, dt)?
        }
    };
    Ok(g)
}

#[derive(Serialize)]
struct PathStatus {
    path_index: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    full: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    limit: Option<String>,
}

struct SimPath {
    full: Option<Result<Vec<State>, smallmass_core::Error>>,
    limit: Option<Result<Vec<Vector>, smallmass_core::Error>>,
}

/// Trajectory CSVs for the full and/or limiting system.
pub fn simulate(cfg: RunConfig) -> Result<Written, CliError> {
    let (cfg, spec) = resolve(cfg)?;
    let sim = RunConfig::require(&cfg.simulate, "simulate")?.clone();
    let grid = simulate_grid(RunConfig::require(&cfg.grid, "grid")?, sim.eps)?;
    let ens = ensemble(&cfg);
    if ens.n_paths == 0 {
        return Err(CliError::Config("n_paths must be positive".into()));
    }
    let (q0, u0) = initial(&cfg, &spec)?;
    let q0 = vector(&q0);
    let u0 = u0.map_or_else(|| Vector::zeros(spec.dim()), |u| vector(&u));
    let x0 = State::new(0.0, q0.clone(), spec.psi().eval(0.0, &q0) + u0);

    let run_full = sim.legs != Legs::Limit;
    let run_limit = sim.legs != Legs::Full;
    let paths: Vec<SimPath> = (0..ens.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let noise = NoisePath::generate(ens.master_seed, i, grid, spec.noise_dim());
            SimPath {
                full: run_full
                    .then(|| integrate_full(&spec, sim.eps, &x0, &grid, &noise, sim.scheme)),
                limit: run_limit
                    .then(|| integrate_limit(&spec, &q0, &grid, &noise, sim.noise_drift)),
            }
        })
        .collect();

    let n = spec.dim();
    let mut out = Out::new(&cfg)?;
    match sim.layout {
        Layout::PerPath => {
            for (i, p) in paths.iter().enumerate() {
                if let Some(Ok(full)) = &p.full {
                    out.csv(&format!("full_{i:05}.csv"), |w| {
                        writeln!(w, "{}", full_csv_header(n, false))?;
                        write_full_rows(w, full, None)
                    })?;
                }
                if let Some(Ok(limit)) = &p.limit {
                    out.csv(&format!("limit_{i:05}.csv"), |w| {
                        writeln!(w, "{}", limit_csv_header(n, false))?;
                        write_limit_rows(w, &grid, limit, None)
                    })?;
                }
            }
        }
        Layout::Long => {
            if run_full {
                out.csv("full.csv", |w| {
                    writeln!(w, "{}", full_csv_header(n, true))?;
                    for (i, p) in paths.iter().enumerate() {
                        if let Some(Ok(full)) = &p.full {
                            write_full_rows(w, full, Some(i as u64))?;
                        }
                    }
                    Ok(())
                })?;
            }
            if run_limit {
                out.csv("limit.csv", |w| {
                    writeln!(w, "{}", limit_csv_header(n, true))?;
                    for (i, p) in paths.iter().enumerate() {
                        if let Some(Ok(limit)) = &p.limit {
                            write_limit_rows(w, &grid, limit, Some(i as u64))?;
                        }
                    }
                    Ok(())
                })?;
            }
        }
    }

    fn err<T>(r: &Option<Result<T, smallmass_core::Error>>) -> Option<String> {
        match r {
            Some(Err(e)) => Some(e.to_string()),
            _ => None,
        }
    }
    let status: Vec<PathStatus> = paths
        .iter()
        .enumerate()
        .map(|(i, p)| PathStatus {
            path_index: i as u64,
            full: err(&p.full),
            limit: err(&p.limit),
        })
        .collect();
    let aborted: Vec<&PathStatus> = status
        .iter()
        .filter(|s| s.full.is_some() || s.limit.is_some())
        .collect();
    let aborted_count = aborted.len();
    let first_failure = aborted.first().map(|s| {
        format!(
            "path {}: {}",
            s.path_index,
            s.full.as_deref().or(s.limit.as_deref()).unwrap_or_default()
        )
    });
    out.json(
        "simulate.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "config": &cfg,
            "grid": { "T": grid.t_final, "steps": grid.steps, "dt": grid.dt() },
            "aborted": aborted_count,
            "paths": status,
        }),
    )?;
    if let Some(first) = first_failure {
        return Err(CliError::Invalid(format!(
            "{aborted_count} of {} paths aborted; first on {first}",
            ens.n_paths
        )));
    }
    Ok(out.written)
}

fn rows(m: &smallmass_core::Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Row-major, plain-array view of a [`DriftAssembly`].
#[derive(Serialize)]
struct CoeffRecord {
    t: f64,
    q: Vec<f64>,
    gamma_tilde: Vec<Vec<f64>>,
    gamma_tilde_inv: Vec<Vec<f64>>,
    /// `q_tensor[i][j][l]`.
    q_tensor: Vec<Vec<Vec<f64>>>,
    j: Vec<Vec<f64>>,
    s: Vec<f64>,
    limiting_drift: Vec<f64>,
    limiting_diffusion: Vec<Vec<f64>>,
}

impl From<&DriftAssembly> for CoeffRecord {
    fn from(d: &DriftAssembly) -> Self {
        let n = d.q.len();
        Self {
            t: d.t,
            q: d.q.iter().copied().collect(),
            gamma_tilde: rows(&d.gamma_tilde),
            gamma_tilde_inv: rows(&d.gamma_tilde_inv),
            q_tensor: (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| (0..n).map(|l| d.q_tensor.get(i, j, l)).collect())
                        .collect()
                })
                .collect(),
            j: rows(&d.j),
            s: d.s.iter().copied().collect(),
            limiting_drift: d.limiting_drift.iter().copied().collect(),
            limiting_diffusion: rows(&d.limiting_diffusion),
        }
    }
}

fn axis(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

/// Homogenized coefficients on a product grid of positions.
pub fn limit_coeffs(cfg: RunConfig) -> Result<Written, CliError> {
    let (cfg, spec) = resolve(cfg)?;
    let c = RunConfig::require(&cfg.coeffs, "coeffs")?;
    let n = spec.dim();
    if c.q_lo.len() != n || c.q_hi.len() != n {
        return Err(CliError::Config(format!(
            "[coeffs] q_lo and q_hi must have length {n}"
        )));
    }
    if c.points == 0 {
        return Err(CliError::Config("[coeffs] points must be positive".into()));
    }
    let axes: Vec<Vec<f64>> = (0..n)
        .map(|k| axis(c.q_lo[k], c.q_hi[k], c.points))
        .collect();
    let total = c.points.pow(n as u32);
    let points: Vec<DriftAssembly> = (0..total)
        .map(|flat| {
            let mut rem = flat;
            let q = Vector::from_fn(n, |k, _| {
                let idx = rem % c.points;
                rem /= c.points;
                axes[k][idx]
            });
            limiting_coeffs(&spec, c.t, &q)
        })
        .collect::<Result<_, _>>()?;

    let mut out = Out::new(&cfg)?;
    out.json(
        "limit_coeffs.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "config": &cfg,
            "points": points.iter().map(CoeffRecord::from).collect::<Vec<_>>(),
        }),
    )?;
    out.csv("limit_coeffs.csv", |w| {
        let mut cols = vec!["t".to_string()];
        for prefix in ["q", "drift", "s"] {
            cols.extend((1..=n).map(|i| format!("{prefix}_{i}")));
        }
        writeln!(w, "{}", cols.join(","))?;
        for d in &points {
            write!(w, "{}", d.t)?;
            for v in [&d.q, &d.limiting_drift, &d.s] {
                for x in v.iter() {
                    write!(w, ",{x}")?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    Ok(out.written)
}

fn sweep_config(cfg: &RunConfig, spec: &SystemSpec) -> Result<SweepConfig, CliError> {
    let grid = RunConfig::require(&cfg.grid, "grid")?;
    let ens = RunConfig::require(&cfg.ensemble, "ensemble")?;
    let sweep = RunConfig::require(&cfg.sweep, "sweep")?;
    let dt_rule = match (grid.steps, grid.dt_rule) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "[grid] takes either steps or dt_rule, not both".into(),
            ))
        }
        (Some(steps), None) => DtRule::Fixed {
            dt: grid.t_final / steps as f64,
        },
        (None, rule) => rule.unwrap_or_default(),
    };
    let (q0, u0) = initial(cfg, spec)?;
    let mut sc = SweepConfig::new(
        sweep.eps_list.clone(),
        sweep.p,
        grid.t_final,
        ens.n_paths,
        q0,
    );
    sc.master_seed = ens.master_seed;
    sc.dt_rule = dt_rule;
    sc.scheme = sweep.scheme;
    sc.u0 = u0;
    sc.refine = sweep.refine;
    sc.max_aborted_fraction = sweep.max_aborted_fraction;
    Ok(sc)
}

fn write_report<T: Serialize>(
    out: &mut Out,
    stem: &str,
    report: &T,
    csv: String,
) -> Result<(), CliError> {
    out.json(
        &format!("{stem}.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "config": out.cfg,
            "report": report,
        }),
    )?;
    out.csv(&format!("{stem}.csv"), |w| w.write_all(csv.as_bytes()))
}

/// Strong position error per ε; with `[sweep] mode` choosing the norm.
/// Also reports the error against a limit that omits the noise-induced drift.
pub fn converge(cfg: RunConfig) -> Result<(Written, Option<f64>), CliError> {
    let (cfg, spec) = resolve(cfg)?;
    let sc = sweep_config(&cfg, &spec)?;
    let mode = cfg.sweep.as_ref().map(|s| s.mode).unwrap_or_default();
    let obs = Observables {
        error: true,
        error_without_drift: true,
        ..Observables::default()
    };
    let summary = run_ensemble(&spec, &sc, obs)?;
    let with = summary.report(Quantity::PositionError, mode)?;
    let without = summary.report(Quantity::PositionErrorWithoutDrift, mode)?;
    let mut out = Out::new(&cfg)?;
    write_report(&mut out, "converge", &with, with.to_csv())?;
    write_report(
        &mut out,
        "converge_without_drift",
        &without,
        without.to_csv(),
    )?;
    Ok((out.written, with.slope()))
}

/// `sup_t E‖p − ψ‖^p` per ε.
pub fn momentum(cfg: RunConfig) -> Result<(Written, Option<f64>), CliError> {
    let (cfg, spec) = resolve(cfg)?;
    let sc = sweep_config(&cfg, &spec)?;
    let obs = Observables {
        momentum: true,
        ..Observables::default()
    };
    let report =
        run_ensemble(&spec, &sc, obs)?.report(Quantity::Momentum, ErrorMode::SupExpectation)?;
    let mut out = Out::new(&cfg)?;
    write_report(&mut out, "momentum", &report, report.to_csv())?;
    Ok((out.written, report.slope()))
}

/// `sup_t E[K^q]` per ε.
pub fn energy(cfg: RunConfig) -> Result<(Written, f64), CliError> {
    let (cfg, spec) = resolve(cfg)?;
    let sc = sweep_config(&cfg, &spec)?;
    let q_order = RunConfig::require(&cfg.sweep, "sweep")?.q_order;
    let obs = Observables {
        energy_order: Some(q_order),
        ..Observables::default()
    };
    let table = run_ensemble(&spec, &sc, obs)?.energy_table()?;
    let mut out = Out::new(&cfg)?;
    write_report(&mut out, "energy", &table, table.to_csv())?;
    Ok((out.written, table.max_min_ratio))
}

/// Sampled assumption checks plus the confinement fit; returns the table.
pub fn validate(cfg: RunConfig) -> Result<(Written, String, bool), CliError> {
    let (cfg, spec) = resolve(cfg)?;
    let v = cfg
        .validate
        .clone()
        .unwrap_or(crate::config::ValidateConfig {
            sample_box: None,
            samples: 2000,
            eps_list: vec![1.0, 0.1, 0.01],
        });
    let sample_box = v
        .sample_box
        .clone()
        .unwrap_or_else(|| SampleBox::default_for(spec.dim()));
    let report = check_assumptions(&spec, &sample_box, v.samples, &v.eps_list)?;
    let confinement = confinement_check(&spec, &sample_box, v.samples)?;
    let mut out = Out::new(&cfg)?;
    out.json(
        "validate.json",
        &json!({
            "schema_version": SCHEMA_VERSION,
            "config": &cfg,
            "report": &report,
            "confinement": &confinement,
        }),
    )?;
    Ok((out.written, report.to_table(), report.passed()))
}

pub fn display(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}
