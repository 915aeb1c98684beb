use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Failure modes shared by every solver layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    IndexOutOfRange { index: usize, len: usize },
    DimensionMismatch { expected: usize, found: usize },
    InvalidGrid(&'static str),
    /// Two paths were expected to cover the same interval `[0, T]`.
    EndTimeMismatch { left: f64, right: f64 },
    InvalidParameter(String),
    NoConvergence { iterations: usize, residual: f64 },
    OutsideProxTube { distance_estimate: f64, limit: f64 },
    NotOnBoundary { level: f64 },
    InfeasibleInitialState { level: f64 },
    SweepGateViolated { step: usize, demand: f64, limit: f64, refinement: usize },
    BoundarySearchFailed { failures: usize, total: usize },
    NotAContraction { delta: f64 },
    InvalidEpsilon { epsilon: f64, delta_star: f64 },
    MaxIterExceeded { iterations: usize, last_distance: f64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::IndexOutOfRange { index, len } => {
                write!(f, "index {index} out of range for length {len}")
            }
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::InvalidGrid(msg) => write!(f, "invalid time grid: {msg}"),
            Error::EndTimeMismatch { left, right } => {
                write!(f, "paths end at different times ({left} vs {right})")
            }
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::NoConvergence { iterations, residual } => write!(
                f,
                "projection did not converge after {iterations} iterations (residual {residual:e})"
            ),
            Error::OutsideProxTube { distance_estimate, limit } => write!(
                f,
                "point is too far from the constraint: distance {distance_estimate} >= {limit}"
            ),
            Error::NotOnBoundary { level } => {
                write!(f, "point is not on the boundary (G = {level})")
            }
            Error::InfeasibleInitialState { level } => {
                write!(f, "initial state violates the constraint (G = {level})")
            }
            Error::SweepGateViolated { step, demand, limit, refinement } => write!(
                f,
                "sweep gate violated at step {step}: {demand} > {limit}; refine the grid by a factor of at least {refinement}"
            ),
            Error::BoundarySearchFailed { failures, total } => {
                write!(f, "boundary search failed on {failures} of {total} rays")
            }
            Error::NotAContraction { delta } => {
                write!(f, "feedback is not a contraction: delta = {delta} >= 1")
            }
            Error::InvalidEpsilon { epsilon, delta_star } => write!(
                f,
                "epsilon = {epsilon} gives delta* = {delta_star} >= 1"
            ),
            Error::MaxIterExceeded { iterations, last_distance } => write!(
                f,
                "fixed-point iteration stopped after {iterations} iterations (last distance {last_distance:e})"
            ),
        }
    }
}

impl core::error::Error for Error {}
