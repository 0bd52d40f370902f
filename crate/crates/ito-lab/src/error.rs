//! Error type shared by every module of the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while building inputs or running a solver.
///
/// `InvalidArgument` marks caller mistakes (bad grids, mismatched dimensions,
/// points outside a domain). The remaining variants are numerical failures
/// detected at run time; none of them is ever silently swallowed, because
/// dropping bad paths from a Monte Carlo average would bias the estimate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A precondition on caller-supplied data does not hold.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A simulated state became non-finite (overflow or NaN).
    #[error("divergence at step {step} (t = {t}): state became non-finite")]
    Divergence { step: usize, t: f64 },

    /// Too many sample paths diverged for the average to be trusted.
    #[error("{n_diverged} of {n_paths} paths diverged (> {limit_percent}% limit)")]
    ExcessiveDivergence {
        n_diverged: usize,
        n_paths: usize,
        limit_percent: f64,
    },

    /// A fixed-point iteration ran out of iterations before reaching `tol`.
    #[error(
        "no convergence after {iterations} iterations \
         (last sup-norm update {last_update:e}, last contraction ratio {last_ratio})"
    )]
    NonConvergence {
        iterations: usize,
        last_update: f64,
        last_ratio: f64,
    },

    /// An order fit was requested on data it cannot support
    /// (for example an error level that is exactly zero).
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// Too many exit-time paths hit the time cap instead of leaving the
    /// domain; either the exit-time assumption fails or the cap is too small.
    #[error(
        "{n_capped} of {n_paths} paths hit the time cap {t_cap} before exiting \
         (>= {limit_percent}% limit)"
    )]
    CappedExits {
        n_capped: usize,
        n_paths: usize,
        t_cap: f64,
        limit_percent: f64,
    },
}

impl Error {
    /// Shorthand used throughout the crate.
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
