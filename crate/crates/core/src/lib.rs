//! Small-mass limits of noisy, dissipative Hamiltonian systems.
//!
//! The crate integrates the stiff full system
//!
//! ```text
//! dq = ∇_p H^ε dt
//! dp = (−γ ∇_p H^ε − ∇_q H^ε + F) dt + σ dW
//! ```
//!
//! alongside its homogenized ε → 0 limit, assembles the limiting drift
//! (including the noise-induced term obtained from a Lyapunov equation), and
//! measures strong convergence rates by coupled Monte Carlo.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod homogenize;
pub mod linalg;
pub mod model;
pub mod noise;
pub mod registry;
pub mod sde;
pub mod validate;

pub use error::{BlowUpState, Error, Leg, Result};
pub use experiments::{
    energy_boundedness, fit_rate, momentum_decay_sweep, run_ensemble, strong_error_sweep,
    ConvergenceReport, DtHalving, DtRule, EnergyTable, EnsembleSummary, ErrorMode, LegSummary,
    Observables, Quantity, RateFit, SeriesStats, SweepConfig,
};
pub use homogenize::{
    fluctdiss_drift, j_matrix, limiting_coeffs, noise_drift, q_tensor, tilde_gamma, DriftAssembly,
    FluctDissMode, QTensor,
};
pub use linalg::{expm, lyap_quadrature, lyap_solve, spd_floor, stability_margin, LyapunovProblem};
pub use model::{
    eval_kinetic, grad_p_h, grad_q_h, hamiltonian, ForceField, KineticEnergyModel, Matrix,
    MatrixField, NoiseField, NuclearScaling, PolynomialRadial, ScalarField, State, SystemSpec,
    TimeCoefficient, Vector, VectorField,
};
pub use noise::{NoisePath, TimeGrid};
pub use registry::{make_builtin, manifest, ParamValue, Params};
pub use sde::{
    integrate_full, integrate_limit, integrate_pair, step_full, step_limit, step_limit_with,
    NoiseDrift, PairPath, Scheme,
};
pub use validate::{
    check_assumptions, confinement_check, lyapunov_diagnostic, AssumptionEntry, AssumptionReport,
    Confinement, LyapunovTrace, SampleBox, Status, Witness,
};
