use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A vector or matrix did not have the length the contract requires.
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// Problem data violates a stated invariant (e.g. `rho <= 0`, empty input box).
    InvalidProblem(String),
    NotPositiveDefinite,
    /// Every restart of the MPC solver produced a non-finite cost.
    SolverFailure {
        restarts: usize,
    },
    /// Training produced a non-finite loss or gradient.
    TrainingFailure {
        epoch: usize,
        reason: &'static str,
    },
    /// The operation is not defined for this configuration (e.g. input gridding with `n_u > 1`).
    Unsupported(&'static str),
    EmptyInput(&'static str),
    /// A policy produced a non-finite input during a closed-loop rollout.
    NonFiniteInput {
        step: usize,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch {
                what,
                expected,
                got,
            } => {
                write!(
                    f,
                    "dimension mismatch for {what}: expected {expected}, got {got}"
                )
            }
            Error::InvalidProblem(msg) => write!(f, "invalid problem: {msg}"),
            Error::NotPositiveDefinite => f.write_str("matrix is not positive definite"),
            Error::SolverFailure { restarts } => {
                write!(f, "solver failure: all {restarts} restarts diverged")
            }
            Error::TrainingFailure { epoch, reason } => {
                write!(f, "training failure at epoch {epoch}: {reason}")
            }
            Error::Unsupported(what) => write!(f, "unsupported configuration: {what}"),
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::NonFiniteInput { step } => {
                write!(f, "policy returned a non-finite input at step {step}")
            }
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
