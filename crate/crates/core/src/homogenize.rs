//! Coefficients of the homogenized (ε → 0) equation
//!
//! ```text
//! dq = [γ̃⁻¹(−∂_tψ − ∇_q V + F) + S] dt + γ̃⁻¹ σ dW
//! ```
//!
//! with `γ̃ = γ + Dψ − Dψᵀ`, the noise-induced drift `S^i = Q^{ijl} J_{jl}` and
//! `J` solving the Lyapunov equation `(γ̃A) J + J (γ̃A)ᵀ = Σ`. `σ` and `F` are
//! evaluated on the slow manifold `p = ψ(t,q)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{lyap_solve, LyapunovProblem};
use crate::model::{ensure_finite_mat, ensure_finite_vec, Matrix, SystemSpec, Vector};

/// Rank-3 tensor `Q^{ijl}`, stored row-major in `(i, j, l)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QTensor {
    n: usize,
    data: Vec<f64>,
}

impl QTensor {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize, l: usize) -> f64 {
        self.data[(i * self.n + j) * self.n + l]
    }

    fn add(&mut self, i: usize, j: usize, l: usize, v: f64) {
        self.data[(i * self.n + j) * self.n + l] += v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `Σ_{jl} Q^{ijl} M_{jl}`.
    pub fn contract(&self, m: &Matrix) -> Vector {
        let n = self.n;
        Vector::from_fn(n, |i, _| {
            let mut acc = 0.0;
            for j in 0..n {
                for l in 0..n {
                    acc += self.get(i, j, l) * m[(j, l)];
                }
            }
            acc
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, x| a.max(x.abs()))
    }
}

/// Homogenized coefficients at one space-time point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftAssembly {
    pub t: f64,
    pub q: Vector,
    pub gamma_tilde: Matrix,
    pub gamma_tilde_inv: Matrix,
    pub q_tensor: QTensor,
    pub j: Matrix,
    /// Noise-induced drift.
    pub s: Vector,
    pub limiting_drift: Vector,
    pub limiting_diffusion: Matrix,
}

fn invert(m: &Matrix) -> Result<Matrix> {
    if m.nrows() == 1 {
        let v = m[(0, 0)];
        if v == 0.0 || !v.is_finite() {
            return Err(Error::Singular);
        }
        return Ok(Matrix::from_element(1, 1, 1.0 / v));
    }
    m.clone().try_inverse().ok_or(Error::Singular)
}

/// `γ̃_{ik} = γ_{ik} + ∂_k ψ_i − ∂_i ψ_k`.
pub fn tilde_gamma(spec: &SystemSpec, t: f64, q: &Vector) -> Result<Matrix> {
    let gamma = spec.drag().eval(t, q);
    ensure_finite_mat(&gamma, "drag gamma")?;
    let d = spec.psi().jacobian(t, q);
    ensure_finite_mat(&d, "psi jacobian")?;
    Ok(gamma + &d - d.transpose())
}

fn tilde_gamma_partial(spec: &SystemSpec, t: f64, q: &Vector, k: usize) -> Result<Matrix> {
    let dg = spec.drag().partial(t, q, k);
    ensure_finite_mat(&dg, "drag gamma derivative")?;
    if spec.psi().is_constant() {
        return Ok(dg);
    }
    let dd = spec.psi().jacobian_partial(t, q, k);
    ensure_finite_mat(&dd, "psi second derivative")?;
    Ok(dg + &dd - dd.transpose())
}

/// Inverse of γ̃ and its q-derivatives `∂_k γ̃⁻¹ = −γ̃⁻¹ (∂_k γ̃) γ̃⁻¹`.
struct InverseDrag {
    gt: Matrix,
    inv: Matrix,
    d_inv: Vec<Matrix>,
}

fn inverse_drag(spec: &SystemSpec, t: f64, q: &Vector) -> Result<InverseDrag> {
    let gt = tilde_gamma(spec, t, q)?;
    let inv = invert(&gt)?;
    let d_inv = (0..spec.dim())
        .map(|k| Ok(-(&inv * tilde_gamma_partial(spec, t, q, k)? * &inv)))
        .collect::<Result<Vec<_>>>()?;
    Ok(InverseDrag { gt, inv, d_inv })
}

fn metric_partials(spec: &SystemSpec, t: f64, q: &Vector) -> Result<Vec<Matrix>> {
    (0..spec.dim())
        .map(|k| {
            let da = spec.metric().partial(t, q, k);
            ensure_finite_mat(&da, "metric A derivative")?;
            Ok(da)
        })
        .collect()
}

fn build_q(inv: &InverseDrag, a: &Matrix, da: &[Matrix]) -> QTensor {
    let n = a.nrows();
    let mut out = QTensor::zeros(n);
    for i in 0..n {
        for j in 0..n {
            for l in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += inv.d_inv[k][(i, j)] * a[(k, l)] - 0.5 * inv.inv[(i, k)] * da[k][(j, l)];
                }
                out.add(i, j, l, acc);
            }
        }
    }
    out
}

/// `Q^{ijl} = Σ_k ∂_k(γ̃⁻¹)^{ij} A^{kl} − ½ Σ_k (γ̃⁻¹)^{ik} ∂_k A^{jl}`.
pub fn q_tensor(spec: &SystemSpec, t: f64, q: &Vector) -> Result<QTensor> {
    let inv = inverse_drag(spec, t, q)?;
    let a = spec.metric().eval(t, q);
    ensure_finite_mat(&a, "metric A")?;
    let da = metric_partials(spec, t, q)?;
    Ok(build_q(&inv, &a, &da))
}

fn solve_j(gt: &Matrix, a: &Matrix, sigma2: Matrix) -> Result<Matrix> {
    let prob = LyapunovProblem::new(gt * a, sigma2)?;
    lyap_solve(&prob)
}

fn slow_manifold_diffusion(spec: &SystemSpec, t: f64, q: &Vector) -> Result<(Vector, Matrix)> {
    let psi = spec.psi().eval(t, q);
    ensure_finite_vec(&psi, "psi")?;
    let sigma = spec.noise().eval(t, q, &psi);
    ensure_finite_mat(&sigma, "noise sigma")?;
    Ok((psi, sigma))
}

/// `J` solving `(γ̃A) J + J (γ̃A)ᵀ = Σ(t, q, ψ(t,q))`.
pub fn j_matrix(spec: &SystemSpec, t: f64, q: &Vector) -> Result<Matrix> {
    let gt = tilde_gamma(spec, t, q)?;
    let a = spec.metric().eval(t, q);
    ensure_finite_mat(&a, "metric A")?;
    let (_, sigma) = slow_manifold_diffusion(spec, t, q)?;
    solve_j(&gt, &a, &sigma * sigma.transpose())
}

/// `S^i = Σ_{jl} Q^{ijl} J_{jl}`.
pub fn noise_drift(spec: &SystemSpec, t: f64, q: &Vector) -> Result<Vector> {
    Ok(limiting_coeffs(spec, t, q)?.s)
}

/// Every homogenized coefficient at `(t, q)`, evaluated once and cached.
pub fn limiting_coeffs(spec: &SystemSpec, t: f64, q: &Vector) -> Result<DriftAssembly> {
    let inv = inverse_drag(spec, t, q)?;
    let a = spec.metric().eval(t, q);
    ensure_finite_mat(&a, "metric A")?;
    let da = metric_partials(spec, t, q)?;
    let qt = build_q(&inv, &a, &da);
    let (psi, sigma) = slow_manifold_diffusion(spec, t, q)?;
    let j = solve_j(&inv.gt, &a, &sigma * sigma.transpose())?;
    let s = qt.contract(&j);

    let dpsi_dt = spec.psi().time_derivative(t, q);
    ensure_finite_vec(&dpsi_dt, "psi time derivative")?;
    let grad_v = spec.potential().gradient(t, q);
    ensure_finite_vec(&grad_v, "potential gradient")?;
    let force = spec.force().eval(t, q, &psi);
    ensure_finite_vec(&force, "force F")?;
    let drift = &inv.inv * (force - dpsi_dt - grad_v) + &s;
    let diffusion = &inv.inv * sigma;
    ensure_finite_vec(&drift, "limiting drift")?;
    Ok(DriftAssembly {
        t,
        q: q.clone(),
        gamma_tilde: inv.gt,
        gamma_tilde_inv: inv.inv,
        q_tensor: qt,
        j,
        s,
        limiting_drift: drift,
        limiting_diffusion: diffusion,
    })
}

/// Drift and diffusion of the limiting equation without the intermediate
/// tensors of [`limiting_coeffs`]. Terms whose fields are flagged constant
/// are skipped; `with_noise_drift = false` leaves out `S`.
pub(crate) fn limit_drift_diffusion(
    spec: &SystemSpec,
    t: f64,
    q: &Vector,
    with_noise_drift: bool,
) -> Result<(Vector, Matrix)> {
    let n = q.len();
    let psi_field = spec.psi();
    let psi_const = psi_field.is_constant();
    let mut gt = spec.drag().eval(t, q);
    if !psi_const {
        let d = psi_field.jacobian(t, q);
        gt += &d;
        gt -= d.transpose();
    }
    ensure_finite_mat(&gt, "drag gamma")?;
    let inv = invert(&gt)?;
    let psi = psi_field.eval(t, q);
    ensure_finite_vec(&psi, "psi")?;
    let sigma = spec.noise().eval(t, q, &psi);
    ensure_finite_mat(&sigma, "noise sigma")?;

    let mut b = spec.potential().gradient(t, q);
    b.neg_mut();
    if !spec.force().is_zero() {
        b += spec.force().eval(t, q, &psi);
    }
    if !psi_const {
        b -= psi_field.time_derivative(t, q);
    }
    ensure_finite_vec(&b, "limiting drift")?;
    let mut drift = &inv * b;

    let drag_varies = !(psi_const && spec.drag().is_constant());
    let metric_varies = !spec.metric().is_constant();
    if with_noise_drift && (drag_varies || metric_varies) {
        let a = spec.metric().eval(t, q);
        ensure_finite_mat(&a, "metric A")?;
        let j = if n == 1 {
            let bb = gt[(0, 0)] * a[(0, 0)];
            if !(bb > 0.0) {
                return Err(Error::Unsolvable { margin: bb });
            }
            let s2: f64 = sigma.iter().map(|x| x * x).sum();
            Matrix::from_element(1, 1, s2 / (2.0 * bb))
        } else {
            solve_j(&gt, &a, &sigma * sigma.transpose())?
        };
        // Σ_jl Q^{ijl} J_{jl} = Σ_k [(∂_k γ̃⁻¹)(J A)]_{ik} − ½ Σ_k (γ̃⁻¹)_{ik} tr(∂_k A J)
        let ja = &j * &a;
        for k in 0..n {
            if drag_varies {
                let dg = tilde_gamma_partial(spec, t, q, k)?;
                let tmp = &inv * dg;
                let w = &inv * ja.column(k);
                drift.gemv(-1.0, &tmp, &w, 1.0);
            }
            if metric_varies {
                let da = spec.metric().partial(t, q, k);
                ensure_finite_mat(&da, "metric A derivative")?;
                let tr = da.dot(&j);
                drift.axpy(-0.5 * tr, &inv.column(k), 1.0);
            }
        }
    }
    ensure_finite_vec(&drift, "limiting drift")?;
    Ok((drift, inv * sigma))
}

/// Which closed form of the noise-induced drift to use under `Σ = 2 k_BT γ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FluctDissMode {
    /// `S^i = k_BT ∂_j (γ̃⁻¹)^{ij}`; requires `A` independent of q.
    Euclidean,
    /// `S^i = k_BT [∂_j (γ̃⁻¹)^{ij} − ½ (γ̃⁻¹)^{ik} tr(A⁻¹ ∂_k A)]`.
    Manifold,
}

/// Closed-form noise-induced drift when the fluctuation-dissipation relation
/// holds at `(t, q, ψ(t,q))`. Serves as an independent check on [`noise_drift`].
pub fn fluctdiss_drift(
    spec: &SystemSpec,
    t: f64,
    q: &Vector,
    kbt: f64,
    mode: FluctDissMode,
) -> Result<Vector> {
    let n = spec.dim();
    let (_, sigma) = slow_manifold_diffusion(spec, t, q)?;
    let sigma2 = &sigma * sigma.transpose();
    let gamma = spec.drag().eval(t, q);
    ensure_finite_mat(&gamma, "drag gamma")?;
    let residual = (&sigma2 - gamma * (2.0 * kbt)).norm();
    if residual > 1e-10 * sigma2.norm().max(1.0) {
        return Err(Error::FluctuationDissipation { residual });
    }
    let inv = inverse_drag(spec, t, q)?;
    let mut s = Vector::from_fn(n, |i, _| (0..n).map(|j| inv.d_inv[j][(i, j)]).sum::<f64>());
    if mode == FluctDissMode::Manifold {
        let a = spec.metric().eval(t, q);
        let a_inv = invert(&a)?;
        let da = metric_partials(spec, t, q)?;
        let traces: Vec<f64> = da.iter().map(|d| (&a_inv * d).trace()).collect();
        for i in 0..n {
            s[i] -= 0.5 * (0..n).map(|k| inv.inv[(i, k)] * traces[k]).sum::<f64>();
        }
    }
    Ok(s * kbt)
}
