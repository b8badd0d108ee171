use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("state space mismatch: {0}")]
    SpaceMismatch(String),
    #[error("length mismatch: expected {expected}, got {got} ({what})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("position {x} lies outside the grid [{lo}, {hi})")]
    OutsideGrid { x: f64, lo: f64, hi: f64 },
    #[error("eigensolver did not converge for state {state} within {steps} steps")]
    NoConvergence { state: usize, steps: usize },
    #[error("norm drifted from {expected} to {got} during propagation")]
    NormLoss { expected: f64, got: f64 },
    #[error("field vanished: {0}")]
    DegenerateField(String),
    #[error("filter output is not real: imaginary residue {residue:e} exceeds {bound:e}")]
    NotReal { residue: f64, bound: f64 },
    #[error("time {t} lies outside [0, {t_final}]")]
    OutsideTime { t: f64, t_final: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("closure did not terminate within {rounds} commutator rounds")]
    ClosureCap { rounds: usize },
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
