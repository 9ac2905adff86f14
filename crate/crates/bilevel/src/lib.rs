//! Proximal-gradient solvers for simple convex bilevel problems.
//!
//! The bilevel problem minimizes an outer convex composite function over the
//! solution set of an inner convex composite minimization problem. Both levels
//! are handled through one proximal-gradient step per iteration on the
//! regularized combination `inner + sigma_k * outer` with a vanishing schedule
//! `sigma_k = k^(-beta)`, in a plain (`ire_pg`) and an accelerated (`ire_apg`)
//! variant. When the joint proximal operator of the combined nonsmooth parts
//! is not available, a problem can be lifted onto duplicated variables with a
//! quadratic coupling so that the proximal step decomposes blockwise (see
//! [`surrogate`]).
//!
//! Beyond the solvers, the crate ships the machinery used to verify their
//! guaranteed convergence rates on generated instances: oracle self-checks
//! ([`model::validate`]), per-iteration inequality instrumentation
//! ([`solver::Mode::Verify`]), explicit rate-bound evaluation
//! ([`solver::check_rate_bounds`]), and a deterministic signal-recovery
//! instance family with a high-accuracy reference oracle ([`experiments`]).

pub mod experiments;
pub mod linalg;
pub mod model;
pub mod oracle;
pub(crate) mod rng;
pub mod series;
pub mod solver;
pub mod step;
pub mod surrogate;

use ndarray::Array1;

/// Errors shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("proximal operator unavailable for {0}")]
    ProxUnavailable(String),

    #[error("problem has no joint proximal oracle; lift it onto the surrogate form first")]
    MissingJointProx,

    #[error("backtracking did not satisfy the sufficient-decrease condition after {reductions} reductions (t = {last_t:.3e}); declared oracle constants are likely inconsistent")]
    BacktrackingStalled { reductions: usize, last_t: f64 },

    #[error("power iteration did not converge within {iterations} iterations (last estimate {last_estimate})")]
    PowerIterationStalled {
        iterations: usize,
        last_estimate: f64,
    },

    #[error("numeric failure (non-finite iterate) at iteration {k}")]
    NumericFailure {
        k: usize,
        trace: Box<solver::SolverTrace>,
    },

    #[error("best-iterate window K = {0} is not covered by this trace")]
    WindowNotCovered(usize),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(x: &Array1<f64>, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
