//! Dense kernels: matrix exponential, spectral bounds and the Lyapunov
//! equation `B J + J Bᵀ = R`.

use nalgebra::linalg::Schur;

use crate::error::{Error, Result};
use crate::model::Matrix;

fn ensure_square(m: &Matrix, context: &'static str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected: "square matrix".into(),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        })
    }
}

fn ensure_finite(m: &Matrix) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// `(M + Mᵀ)/2`.
pub fn sym_part(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

fn one_norm(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Matrix exponential
// ---------------------------------------------------------------------------

#[allow(clippy::excessive_precision)]
const THETA: [f64; 5] = [
    1.495585217958292e-2,
    2.539398330063230e-1,
    9.504178996162932e-1,
    2.097847961257068e0,
    5.371920351148152e0,
];

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Diagonal Padé approximant of degree `b.len() - 1` (odd, ≤ 9).
fn pade_low(a: &Matrix, b: &[f64]) -> Result<Matrix> {
    let n = a.nrows();
    let id = Matrix::identity(n, n);
    let a2 = a * a;
    let mut u_inner = &id * b[1];
    let mut v = &id * b[0];
    let mut power = id.clone();
    let mut k = 2;
    while k < b.len() {
        power = &power * &a2;
        v += &power * b[k];
        u_inner += &power * b[k + 1];
        k += 2;
    }
    let u = a * u_inner;
    solve_pade(&u, &v)
}

fn pade13(a: &Matrix) -> Result<Matrix> {
    let b = &B13;
    let n = a.nrows();
    let id = Matrix::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_hi = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = a * (u_hi + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let v_hi = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = v_hi + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    solve_pade(&u, &v)
}

fn solve_pade(u: &Matrix, v: &Matrix) -> Result<Matrix> {
    let p = v + u;
    let q = v - u;
    q.lu().solve(&p).ok_or(Error::Singular)
}

/// Matrix exponential by scaling and squaring with diagonal Padé approximants
/// of degree 3, 5, 7, 9 or 13 chosen from the 1-norm.
pub fn expm(m: &Matrix) -> Result<Matrix> {
    ensure_square(m, "expm")?;
    ensure_finite(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(m.clone());
    }
    let norm = one_norm(m);
    for (theta, b) in THETA[..4].iter().zip([&B3[..], &B5[..], &B7[..], &B9[..]]) {
        if norm <= *theta {
            return pade_low(m, b);
        }
    }
    let s = if norm > THETA[4] {
        (norm / THETA[4]).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = m / 2f64.powi(s);
    let mut r = pade13(&scaled)?;
    for _ in 0..s {
        r = &r * &r;
    }
    ensure_finite(&r)?;
    Ok(r)
}

// ---------------------------------------------------------------------------
// Spectral bounds
// ---------------------------------------------------------------------------

/// `min Re λ(M)`.
pub fn stability_margin(m: &Matrix) -> Result<f64> {
    ensure_square(m, "stability_margin")?;
    ensure_finite(m)?;
    match m.nrows() {
        0 => Err(Error::InvalidArgument("empty matrix".into())),
        1 => Ok(m[(0, 0)]),
        2 => {
            // Re λ = tr/2 ± Re √(tr²/4 − det)
            let tr = m[(0, 0)] + m[(1, 1)];
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            let disc = tr * tr / 4.0 - det;
            Ok(if disc > 0.0 {
                tr / 2.0 - disc.sqrt()
            } else {
                tr / 2.0
            })
        }
        _ => {
            let schur = Schur::try_new(m.clone(), f64::EPSILON, 10_000).ok_or(Error::Eigen)?;
            let eig = schur.complex_eigenvalues();
            eig.iter()
                .map(|z| z.re)
                .fold(None, |acc: Option<f64>, x| {
                    Some(acc.map_or(x, |a| a.min(x)))
                })
                .filter(|x| x.is_finite())
                .ok_or(Error::Eigen)
        }
    }
}

/// Smallest eigenvalue of a symmetric matrix. Asymmetry beyond
/// `1e-12 · ‖M‖_F` is rejected.
pub fn spd_floor(m: &Matrix) -> Result<f64> {
    Ok(symmetric_spectrum(m)?.0)
}

/// `(min, max)` eigenvalue of a symmetric matrix.
pub fn symmetric_spectrum(m: &Matrix) -> Result<(f64, f64)> {
    ensure_square(m, "spd_floor")?;
    ensure_finite(m)?;
    let norm = m.norm();
    let asym = (m - m.transpose()).norm();
    let tolerance = 1e-12 * norm;
    if asym > tolerance {
        return Err(Error::Asymmetric {
            asymmetry: asym,
            tolerance,
        });
    }
    match m.nrows() {
        0 => Err(Error::InvalidArgument("empty matrix".into())),
        1 => Ok((m[(0, 0)], m[(0, 0)])),
        _ => {
            let eig = sym_part(m).symmetric_eigenvalues();
            let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if lo.is_finite() && hi.is_finite() {
                Ok((lo, hi))
            } else {
                Err(Error::Eigen)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Lyapunov equation
// ---------------------------------------------------------------------------

/// `B J + J Bᵀ = rhs` with every eigenvalue of `B` in the open right half-plane.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovProblem {
    pub b: Matrix,
    pub rhs: Matrix,
}

impl LyapunovProblem {
    pub fn new(b: Matrix, rhs: Matrix) -> Result<Self> {
        ensure_square(&b, "Lyapunov B")?;
        if rhs.shape() != b.shape() {
            return Err(Error::Dimension {
                context: "Lyapunov right-hand side",
                expected: format!("{}x{}", b.nrows(), b.ncols()),
                got: format!("{}x{}", rhs.nrows(), rhs.ncols()),
            });
        }
        ensure_finite(&b)?;
        ensure_finite(&rhs)?;
        Ok(Self { b, rhs })
    }

    pub fn dim(&self) -> usize {
        self.b.nrows()
    }

    pub fn residual(&self, j: &Matrix) -> f64 {
        (&self.b * j + j * self.b.transpose() - &self.rhs).norm()
    }

    fn require_stable(&self) -> Result<f64> {
        let margin = stability_margin(&self.b)?;
        if margin > 0.0 {
            Ok(margin)
        } else {
            Err(Error::Unsolvable { margin })
        }
    }
}

/// Direct solve of the `n² × n²` linear system `(I ⊗ B + B ⊗ I) vec J = vec R`.
pub fn lyap_solve(prob: &LyapunovProblem) -> Result<Matrix> {
    let n = prob.dim();
    match n {
        0 => return Ok(Matrix::zeros(0, 0)),
        1 => {
            let b = prob.b[(0, 0)];
            if b <= 0.0 {
                return Err(Error::Unsolvable { margin: b });
            }
            return Ok(Matrix::from_element(1, 1, prob.rhs[(0, 0)] / (2.0 * b)));
        }
        _ => {}
    }
    prob.require_stable()?;
    let id = Matrix::identity(n, n);
    let op = id.kronecker(&prob.b) + prob.b.kronecker(&id);
    let rhs = nalgebra::DVector::from_column_slice(prob.rhs.as_slice());
    let sol = op.lu().solve(&rhs).ok_or(Error::Singular)?;
    let j = Matrix::from_column_slice(n, n, sol.as_slice());
    Ok(sym_part(&j))
}

// 15-point Kronrod nodes (non-negative half) and weights, with the embedded
// 7-point Gauss weights on the odd-indexed nodes.
#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

struct Integrand<'a> {
    prob: &'a LyapunovProblem,
    evals: usize,
}

impl Integrand<'_> {
    fn at(&mut self, y: f64) -> Result<Matrix> {
        self.evals += 1;
        let e = expm(&(&self.prob.b * -y))?;
        Ok(&e * &self.prob.rhs * e.transpose())
    }

    /// Kronrod estimate and Kronrod − Gauss difference norm on `[a, b]`.
    fn gk15(&mut self, a: f64, b: f64) -> Result<(Matrix, f64)> {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let n = self.prob.dim();
        let mut kron = Matrix::zeros(n, n);
        let mut gauss = Matrix::zeros(n, n);
        for (i, (&x, &w)) in XGK.iter().zip(WGK.iter()).enumerate() {
            let pts: &[f64] = if x == 0.0 { &[0.0] } else { &[-1.0, 1.0] };
            for &sgn in pts {
                let f = self.at(c + sgn * h * x)?;
                kron += &f * w;
                if i % 2 == 1 {
                    gauss += &f * WG[i / 2];
                }
            }
        }
        kron *= h;
        gauss *= h;
        let err = (&kron - &gauss).norm();
        Ok((kron, err))
    }
}

const QUADRATURE_EVAL_BUDGET: usize = 2_000_000;

/// Evaluates `∫₀^∞ e^{−yB} R e^{−yBᵀ} dy` by adaptive Gauss–Kronrod panels.
///
/// The horizon starts at `ln(‖R‖/tol) / (2·margin)` and is extended until the
/// integrand, bounded by its decay rate, contributes less than `tol` beyond it.
pub fn lyap_quadrature(prob: &LyapunovProblem, tol: f64) -> Result<Matrix> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tol must be positive, got {tol}"
        )));
    }
    let margin = prob.require_stable()?;
    let n = prob.dim();
    let r_norm = prob.rhs.norm();
    if r_norm == 0.0 {
        return Ok(Matrix::zeros(n, n));
    }
    let mut f = Integrand { prob, evals: 0 };
    let mut y_max = ((r_norm / tol).ln() / (2.0 * margin)).max(1.0 / margin);
    loop {
        let tail = f.at(y_max)?.norm() / (2.0 * margin);
        if tail <= tol {
            break;
        }
        y_max *= 1.5;
        if f.evals > 10_000 {
            return Err(Error::Quadrature {
                achieved: tail,
                requested: tol,
            });
        }
    }

    // Panels of width ~1/margin keep each one well resolved; bisect on demand.
    let panels = ((y_max * margin).ceil() as usize).clamp(1, 100_000);
    let width = y_max / panels as f64;
    let density = tol / y_max;
    let mut total = Matrix::zeros(n, n);
    let mut achieved = 0.0;
    let mut stack: Vec<(f64, f64, u32)> = (0..panels)
        .rev()
        .map(|i| (i as f64 * width, (i + 1) as f64 * width, 0))
        .collect();
    while let Some((a, b, depth)) = stack.pop() {
        let (est, err) = f.gk15(a, b)?;
        if err <= density * (b - a) || depth >= 40 {
            total += est;
            achieved += err;
            continue;
        }
        if f.evals > QUADRATURE_EVAL_BUDGET {
            return Err(Error::Quadrature {
                achieved: achieved + err,
                requested: tol,
            });
        }
        let mid = 0.5 * (a + b);
        stack.push((mid, b, depth + 1));
        stack.push((a, mid, depth + 1));
    }
    if achieved > 10.0 * tol {
        return Err(Error::Quadrature {
            achieved,
            requested: tol,
        });
    }
    Ok(sym_part(&total))
}
