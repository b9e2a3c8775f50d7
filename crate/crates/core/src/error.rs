use std::fmt;

use thiserror::Error;

use crate::model::State;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which leg of a coupled simulation produced a failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Leg {
    Full,
    Limit,
}

impl fmt::Display for Leg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Leg::Full => f.write_str("full"),
            Leg::Limit => f.write_str("limit"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value while evaluating {field}")]
    Evaluation { field: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("matrix has non-finite entries")]
    NonFinite,

    #[error(
        "matrix is not symmetric (asymmetry {asymmetry:.3e} exceeds tolerance {tolerance:.3e})"
    )]
    Asymmetric { asymmetry: f64, tolerance: f64 },

    #[error("eigenvalue computation failed")]
    Eigen,

    #[error("matrix is singular")]
    Singular,

    #[error("Lyapunov problem unsolvable: stability margin {margin:.3e} <= 0, every eigenvalue of B needs a positive real part")]
    Unsolvable { margin: f64 },

    #[error("quadrature did not converge: achieved {achieved:.3e}, requested {requested:.3e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("{leg} leg blew up at t = {t}")]
    BlowUp {
        leg: Leg,
        t: f64,
        last_finite: Box<BlowUpState>,
    },

    #[error("unknown builtin system '{0}'")]
    UnknownSystem(String),

    #[error("missing parameter '{param}' for system '{system}'")]
    MissingParameter { system: String, param: String },

    #[error("invalid parameter '{param}' for system '{system}': {reason}")]
    InvalidParameter {
        system: String,
        param: String,
        reason: String,
    },

    #[error("fluctuation-dissipation relation violated: |Sigma - 2 kBT gamma|_F = {residual:.3e}")]
    FluctuationDissipation { residual: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate regression: {0}")]
    Degenerate(String),

    #[error("experiment invalid: {0}")]
    ExperimentInvalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Last finite state recorded before a blow-up.
#[derive(Debug, Clone)]
pub enum BlowUpState {
    Full(State),
    Limit { t: f64, q: Vec<f64> },
}

impl Error {
    pub(crate) fn blow_up_full(last: State) -> Self {
        Error::BlowUp {
            leg: Leg::Full,
            t: last.t,
            last_finite: Box::new(BlowUpState::Full(last)),
        }
    }

    pub(crate) fn blow_up_limit(t: f64, q: &[f64]) -> Self {
        Error::BlowUp {
            leg: Leg::Limit,
            t,
            last_finite: Box::new(BlowUpState::Limit { t, q: q.to_vec() }),
        }
    }

    /// True for failures that abort a single path rather than the whole run.
    pub fn is_blow_up(&self) -> bool {
        matches!(self, Error::BlowUp { .. })
    }
}
