use thiserror::Error;

use crate::expr::{EvalError, ParseError};
use crate::geometry::Regime;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (largest asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("discount factor {value} is invalid for the {regime} regime")]
    InvalidDiscount { value: f64, regime: Regime },

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("{source} (while evaluating {context})")]
    Eval {
        context: String,
        #[source]
        source: EvalError,
    },

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("drift does not vanish at the origin: f(0) = {0:?}")]
    DriftAtOrigin(Vec<f64>),

    /// A sampled check of the standing assumptions (R(x) > 0, g(x) of full
    /// rank) failed at a concrete state.
    #[error("model assumption violated: {what} at x = {state:?}")]
    ModelAssumption { what: String, state: Vec<f64> },

    #[error("operation requires the {expected} regime")]
    Regime { expected: Regime },

    #[error("operation requires a single input, system has m = {0}")]
    SingleInputOnly(usize),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("closed-loop trajectory diverged at step {step}")]
    Divergence { step: usize },

    #[error("brute-force minimizer stayed on the search box boundary (u_max = {u_max:e}) at x = {state:?}")]
    OracleBoundary { u_max: f64, state: Vec<f64> },

    #[error("config: {0}")]
    Config(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn assumption(what: impl Into<String>, state: &[f64]) -> Self {
        Error::ModelAssumption {
            what: what.into(),
            state: state.to_vec(),
        }
    }

    /// True for violations of the model's standing assumptions, as opposed to
    /// malformed input.
    pub fn is_model_assumption(&self) -> bool {
        matches!(
            self,
            Error::ModelAssumption { .. } | Error::DriftAtOrigin(_) | Error::Eval { .. }
        )
    }
}
