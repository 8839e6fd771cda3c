use alloc::boxed::Box;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("size error: {0}")]
    Size(&'static str),

    #[error("geometry error: {0}")]
    Geometry(&'static str),

    #[error("domain error: {what} (got {value})")]
    Domain { what: &'static str, value: f64 },

    #[error("structural error: {what} (expected {expected}, got {got})")]
    Structural {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("stale eigenpair: relative residual {residual:e} exceeds {tol:e}")]
    StaleEigenpair { residual: f64, tol: f64 },

    #[error("eigensolver did not converge after {iterations} iterations (worst residual {worst:e})")]
    Convergence {
        iterations: usize,
        worst: f64,
        residuals: Vec<f64>,
    },

    #[error("assembly contract violated: {0}")]
    Assembly(&'static str),

    #[error("infeasible mass target {target} (reachable {reachable})")]
    Feasibility { target: f64, reachable: f64 },

    #[error("numerical failure: {0}")]
    Numerical(&'static str),

    #[error("iteration {iteration} of restart {restart}: {source}")]
    Optimization {
        restart: usize,
        iteration: usize,
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn domain(what: &'static str, value: f64) -> Self {
        Error::Domain { what, value }
    }

    pub(crate) fn structural(what: &'static str, expected: usize, got: usize) -> Self {
        Error::Structural { what, expected, got }
    }

    pub(crate) fn in_optimization(self, restart: usize, iteration: usize) -> Self {
        Error::Optimization {
            restart,
            iteration,
            source: Box::new(self),
        }
    }
}
