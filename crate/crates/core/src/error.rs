use thiserror::Error;

use crate::expr::{EvalError, ParseError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("evaluating `{expr}`: {source}")]
    Eval {
        expr: String,
        #[source]
        source: EvalError,
    },

    #[error("conjugate gradient stalled after {iterations} iterations (relative residual {residual:.3e})")]
    CgNotConverged { iterations: usize, residual: f64 },

    #[error("penalty iteration stalled after {iterations} iterations (relative residual {residual:.3e})")]
    FixedPointNotConverged { iterations: usize, residual: f64 },

    #[error("projected Gauss-Seidel exhausted {sweeps} sweeps (last change {change:.3e})")]
    SweepBudgetExhausted { sweeps: usize, change: f64 },

    #[error("projected Gauss-Seidel energy increased by {increase:.3e} in sweep {sweep}")]
    EnergyIncrease { sweep: usize, increase: f64 },

    #[error("initial datum leaves the unit ball at node {node} (|u0| = {norm})")]
    Inadmissible { node: usize, norm: f64 },

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::Step {
            step,
            source: Box::new(self),
        }
    }
}
