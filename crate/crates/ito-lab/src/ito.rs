//! Discrete Itô calculus on sampled paths: non-anticipating stochastic
//! integrals, quadratic and total variation, and statistical checks of the
//! isometry, zero-mean, and maximal-inequality laws.
//!
//! Every integral here is a left-endpoint sum: the integrand is evaluated at
//! the left node of each interval and multiplied by the increment over that
//! interval. Midpoint or right-endpoint evaluation converges to different
//! objects and is deliberately not available.

use crate::brownian::BrownianPath;
use crate::error::{Error, Result};
use crate::estimators::{compensated_sum_by, reduce, McEstimate};
use crate::grid::TimeGrid;
use crate::rng::SeedSpec;

/// Read-only view of a path up to (and including) one grid index.
///
/// Integrand evaluators receive this view instead of the whole path, which
/// makes non-anticipation structural: values after the current time are not
/// reachable through the API.
#[derive(Debug, Clone, Copy)]
pub struct PathPrefix<'a> {
    path: &'a BrownianPath,
    upto: usize,
}

impl<'a> PathPrefix<'a> {
    /// Current time (the latest visible grid point).
    pub fn t(&self) -> f64 {
        self.path.grid().points()[self.upto]
    }

    /// Number of visible grid points.
    pub fn len(&self) -> usize {
        self.upto + 1
    }

    /// Always false: at least the starting point is visible.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Path dimension m.
    pub fn dim(&self) -> usize {
        self.path.dim()
    }

    /// Path value at the current time.
    pub fn latest(&self) -> &'a [f64] {
        self.path.value(self.upto)
    }

    /// Scalar path value at the current time (1-d paths).
    pub fn w(&self) -> f64 {
        debug_assert_eq!(self.path.dim(), 1, "w() is for 1-d paths");
        self.path.value(self.upto)[0]
    }

    /// Grid time of visible index `i` (`i <= len() - 1`).
    pub fn time(&self, i: usize) -> f64 {
        assert!(i <= self.upto, "index {i} is beyond the visible prefix");
        self.path.grid().points()[i]
    }

    /// Path value at visible index `i`.
    pub fn value(&self, i: usize) -> &'a [f64] {
        assert!(i <= self.upto, "index {i} is beyond the visible prefix");
        self.path.value(i)
    }
}

/// Evaluator filling a row-major matrix from a path prefix.
type PrefixEval = Box<dyn Fn(&PathPrefix<'_>, &mut [f64]) + Send + Sync>;

/// A non-anticipating integrand: a matrix-valued function of time and the
/// path seen so far.
///
/// The evaluator fills a row-major `rows x cols` buffer; `cols` must match
/// the dimension of the driving path when integrating. Square-integrability
/// along paths cannot be machine-checked and is the caller's declaration,
/// recorded in `description`.
pub struct AdaptedProcess {
    description: String,
    rows: usize,
    cols: usize,
    eval: PrefixEval,
}

impl AdaptedProcess {
    /// General matrix-valued integrand filling `rows x cols` buffers.
    pub fn new(
        description: impl Into<String>,
        rows: usize,
        cols: usize,
        eval: impl Fn(&PathPrefix<'_>, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        assert!(
            rows > 0 && cols > 0,
            "integrand dimensions must be positive"
        );
        AdaptedProcess {
            description: description.into(),
            rows,
            cols,
            eval: Box::new(eval),
        }
    }

    /// Scalar integrand against a 1-d driving path.
    pub fn scalar(
        description: impl Into<String>,
        f: impl Fn(&PathPrefix<'_>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        AdaptedProcess::new(description, 1, 1, move |prefix, out| {
            out[0] = f(prefix);
        })
    }

    /// The constant scalar integrand `X == c`.
    pub fn constant(c: f64) -> Self {
        AdaptedProcess::scalar(format!("constant {c}"), move |_| c)
    }

    /// Caller-declared description (integrability note, label).
    pub fn description(&self) -> &str {
        &self.description
    }

    /// Output rows d.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Output columns m (must equal the driving path's dimension).
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Evaluates into `out` (`rows * cols` long, row-major).
    pub fn eval_into(&self, prefix: &PathPrefix<'_>, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.rows * self.cols);
        (self.eval)(prefix, out);
    }
}

impl std::fmt::Debug for AdaptedProcess {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdaptedProcess")
            .field("description", &self.description)
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish_non_exhaustive()
    }
}

/// Running left-endpoint stochastic integral along one path.
///
/// `values(k)` is the d-vector `sum_{j<k} X(t_j) (W_{t_{j+1}} - W_{t_j})`;
/// index 0 is zero by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ItoSum {
    grid: TimeGrid,
    /// Row-major `grid.len() x dim`.
    values: Vec<f64>,
    dim: usize,
}

impl ItoSum {
    /// Grid the running sum lives on.
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Output dimension d of the integrand.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Running value at grid index `k`.
    pub fn values(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// Value at the final grid point.
    pub fn final_value(&self) -> &[f64] {
        self.values(self.grid.len() - 1)
    }

    /// Scalar final value (1-d integrands).
    pub fn final_scalar(&self) -> f64 {
        debug_assert_eq!(self.dim, 1, "final_scalar() is for scalar integrands");
        self.final_value()[0]
    }

    /// Scalar running value at grid index `k` (1-d integrands).
    pub fn scalar_at(&self, k: usize) -> f64 {
        debug_assert_eq!(self.dim, 1, "scalar_at() is for scalar integrands");
        self.values(k)[0]
    }
}

/// Left-endpoint Itô integral of `x` along `path`.
///
/// Row `i` of the integrand is contracted against the m-vector increment:
/// `values(k)[i] = sum_{j<k} sum_l X(t_j)[i,l] * (W_{t_{j+1}}[l] - W_{t_j}[l])`.
///
/// # Errors
/// `InvalidArgument` if the integrand's column count differs from the
/// path's dimension.
pub fn ito_integral(x: &AdaptedProcess, path: &BrownianPath) -> Result<ItoSum> {
    ito_integral_inner(x, path, None)
}

/// Itô integral stopped at time `tau`: computed on the full grid as the
/// integral of `X` times the indicator of `[0, tau)`, with `tau` rounded
/// down to the nearest grid point. The running sum is frozen from the
/// rounded stopping index onward.
///
/// A `tau` at or before the first grid point yields the zero sum; a `tau`
/// at or beyond the last grid point reproduces the plain integral.
///
/// # Errors
/// `InvalidArgument` for NaN `tau` or a column/dimension mismatch.
pub fn stopped_integral(x: &AdaptedProcess, path: &BrownianPath, tau: f64) -> Result<ItoSum> {
    if tau.is_nan() {
        return Err(Error::invalid("stopping time must not be NaN"));
    }
    let points = path.grid().points();
    // Largest index whose grid time is <= tau (tau rounded down).
    let cutoff = match points.partition_point(|&t| t <= tau) {
        0 => 0,
        n => n - 1,
    };
    ito_integral_inner(x, path, Some(cutoff))
}

fn ito_integral_inner(
    x: &AdaptedProcess,
    path: &BrownianPath,
    cutoff: Option<usize>,
) -> Result<ItoSum> {
    let m = path.dim();
    if x.cols() != m {
        return Err(Error::invalid(format!(
            "integrand has {} columns but the path has dimension {m}",
            x.cols()
        )));
    }
    let d = x.rows();
    let n = path.grid().len();
    let active_steps = cutoff.unwrap_or(n - 1).min(n - 1);
    let mut values = vec![0.0f64; n * d];
    let mut buf = vec![0.0f64; d * m];
    for k in 0..n - 1 {
        if k < active_steps {
            let prefix = PathPrefix { path, upto: k };
            x.eval_into(&prefix, &mut buf);
            for i in 0..d {
                let mut acc = values[k * d + i];
                for j in 0..m {
                    acc += buf[i * m + j] * path.increment(k, j);
                }
                values[(k + 1) * d + i] = acc;
            }
        } else {
            values.copy_within(k * d..(k + 1) * d, (k + 1) * d);
        }
    }
    Ok(ItoSum {
        grid: path.grid().clone(),
        values,
        dim: d,
    })
}

/// Sum of squared increment norms of `path` over `[s, t]`:
/// `sum_k ||W_{t_{k+1}} - W_{t_k}||^2` across the grid points inside the
/// window. For a 1-d path this is the classical quadratic-variation sum,
/// which concentrates on `t - s` as the mesh shrinks.
///
/// # Errors
/// `InvalidArgument` if `s` or `t` is not a grid point or `s >= t`.
pub fn quadratic_variation(path: &BrownianPath, s: f64, t: f64) -> Result<f64> {
    let (i, j) = window_indices(path, s, t)?;
    let m = path.dim();
    Ok(compensated_sum_by(j - i, &|k| {
        let mut sq = 0.0;
        for c in 0..m {
            let d = path.increment(i + k, c);
            sq += d * d;
        }
        sq
    }))
}

/// Sum of increment norms of `path` over `[s, t]`:
/// `sum_k ||W_{t_{k+1}} - W_{t_k}||`. Diverges as the mesh shrinks —
/// Brownian paths have infinite total variation — at the rate
/// `sqrt(2 n / pi)` in expectation for n uniform steps of a 1-d path.
///
/// # Errors
/// As [`quadratic_variation`].
pub fn total_variation(path: &BrownianPath, s: f64, t: f64) -> Result<f64> {
    let (i, j) = window_indices(path, s, t)?;
    let m = path.dim();
    Ok(compensated_sum_by(j - i, &|k| {
        let mut sq = 0.0;
        for c in 0..m {
            let d = path.increment(i + k, c);
            sq += d * d;
        }
        sq.sqrt()
    }))
}

fn window_indices(path: &BrownianPath, s: f64, t: f64) -> Result<(usize, usize)> {
    if s >= t {
        return Err(Error::invalid(format!("need s < t, got [{s}, {t}]")));
    }
    let grid = path.grid();
    let i = grid
        .index_of(s)
        .ok_or_else(|| Error::invalid(format!("{s} is not a grid point")))?;
    let j = grid
        .index_of(t)
        .ok_or_else(|| Error::invalid(format!("{t} is not a grid point")))?;
    Ok((i, j))
}

/// Monte Carlo verdict on the Itô isometry and the zero-mean law for one
/// integrand.
#[derive(Debug, Clone)]
pub struct IsometryCheck {
    /// Estimate of `E[(∫ X dW)^2]`.
    pub square: McEstimate,
    /// Estimate of `E[∫ ||X||^2 ds]` (left Riemann sums along each path).
    pub time_integral: McEstimate,
    /// Estimate of `E[∫ X dW]`, which the zero-mean law puts at 0.
    pub mean: McEstimate,
}

impl IsometryCheck {
    /// Absolute gap between the two isometry sides.
    pub fn isometry_gap(&self) -> f64 {
        (self.square.mean - self.time_integral.mean).abs()
    }

    /// Standard error of the gap (the sides are estimated from the same
    /// paths, so this is conservative).
    pub fn combined_stderr(&self) -> f64 {
        self.square.stderr.hypot(self.time_integral.stderr)
    }

    /// True if both laws hold within `k` standard errors.
    pub fn passes(&self, k: f64) -> bool {
        self.isometry_gap() <= k * self.combined_stderr() && self.mean.within(0.0, k)
    }
}

/// Estimates both sides of the Itô isometry `E[(∫ X dW)^2] = E[∫ ||X||^2 ds]`
/// and the zero-mean estimate `E[∫ X dW]`, for a scalar-valued integrand
/// (`rows == 1`; the column count may match any path dimension).
///
/// All three statistics are computed from the same `n_paths` paths on a
/// uniform grid of `n_steps` steps over `[0, horizon]`, reduced in ascending
/// stream order.
///
/// # Errors
/// `InvalidArgument` for non-scalar integrands, bad grid parameters, or
/// `n_paths < 2`.
pub fn check_isometry(
    x: &AdaptedProcess,
    horizon: f64,
    n_steps: usize,
    n_paths: usize,
    seed: SeedSpec,
) -> Result<IsometryCheck> {
    if x.rows() != 1 {
        return Err(Error::invalid(
            "isometry check expects a scalar-valued integrand (rows == 1)",
        ));
    }
    let grid = crate::grid::make_uniform_grid(0.0, horizon, n_steps)?;
    let m = x.cols();
    let samples = crate::estimators::sample_streams(n_paths, seed, |spec| {
        let path = crate::brownian::sample_path(&grid, m, spec).expect("dims checked");
        let sum = ito_integral(x, &path).expect("dims checked");
        let final_value = sum.final_scalar();
        let sq_time = compensated_sum_by(grid.n_steps(), &|k| {
            let prefix = PathPrefix {
                path: &path,
                upto: k,
            };
            // Squared norm of the 1 x m row evaluated at the left node.
            let mut row = vec![0.0f64; m];
            x.eval_into(&prefix, &mut row);
            let frob: f64 = row.iter().map(|v| v * v).sum();
            frob * grid.dt(k)
        });
        [final_value * final_value, sq_time, final_value]
    });
    let column = |idx: usize| -> Result<McEstimate> {
        let xs: Vec<f64> = samples.iter().map(|s| s[idx]).collect();
        reduce(&xs, seed.root_seed)
    };
    Ok(IsometryCheck {
        square: column(0)?,
        time_integral: column(1)?,
        mean: column(2)?,
    })
}

/// The constant `C_p = (4 p^3 / (2p - 1))^p` of the moment inequality
/// `E[sup |∫ X dW|^{2p}] <= C_p T^{p-1} E[∫ |X|^{2p} ds]`.
/// For p = 1 this is Doob's constant 4; for p = 2 it is (32/3)^2.
pub fn moment_inequality_constant(p: u32) -> f64 {
    let pf = p as f64;
    (4.0 * pf.powi(3) / (2.0 * pf - 1.0)).powi(p as i32)
}

/// Monte Carlo verdict on the maximal-moment inequalities for one integrand.
#[derive(Debug, Clone)]
pub struct MaximalCheck {
    /// Moment order p (the inequality controls the 2p-th moment).
    pub p: u32,
    /// Full constant `C_p (d T)^{p-1}` multiplying the right-hand side.
    pub constant: f64,
    /// Estimate of `E[sup_k ||running integral at k||^{2p}]`.
    pub sup_moment: McEstimate,
    /// Estimate of `E[∫ ||X||_F^{2p} ds]`.
    pub integrand_moment: McEstimate,
}

impl MaximalCheck {
    /// Right-hand side of the inequality: `constant * integrand_moment`.
    pub fn rhs(&self) -> f64 {
        self.constant * self.integrand_moment.mean
    }

    /// Combined relative standard error of the two estimates.
    pub fn relative_stderr(&self) -> f64 {
        let rel = |e: &McEstimate| {
            if e.mean == 0.0 {
                0.0
            } else {
                (e.stderr / e.mean).abs()
            }
        };
        rel(&self.sup_moment) + rel(&self.integrand_moment)
    }

    /// True if `LHS <= RHS * (1 + 3 * relative stderr)` (with the degenerate
    /// all-zero case counting as satisfied).
    pub fn satisfied(&self) -> bool {
        let slack = self.rhs() * (1.0 + 3.0 * self.relative_stderr());
        self.sup_moment.mean <= slack || (self.sup_moment.mean == 0.0 && self.rhs() == 0.0)
    }
}

/// Estimates `E[sup_{t <= T} ||∫_0^t X dW||^{2p}]` against its moment bound
/// `C_p (d T)^{p-1} E[∫_0^T ||X||_F^{2p} ds]`, sampling `n_paths` paths on a
/// uniform grid of `n_steps` steps. For p = 1 the bound is Doob's
/// `4 E[∫ ||X||^2 ds]`.
///
/// # Errors
/// `InvalidArgument` for `p == 0`, bad grid parameters, or `n_paths < 2`.
pub fn check_maximal_inequalities(
    x: &AdaptedProcess,
    horizon: f64,
    p: u32,
    n_steps: usize,
    n_paths: usize,
    seed: SeedSpec,
) -> Result<MaximalCheck> {
    if p == 0 {
        return Err(Error::invalid("moment order p must be at least 1"));
    }
    let grid = crate::grid::make_uniform_grid(0.0, horizon, n_steps)?;
    let d = x.rows();
    let m = x.cols();
    let samples = crate::estimators::sample_streams(n_paths, seed, |spec| {
        let path = crate::brownian::sample_path(&grid, m, spec).expect("dims checked");
        let sum = ito_integral(x, &path).expect("dims checked");
        let mut sup_sq = 0.0f64;
        for k in 0..grid.len() {
            let v = sum.values(k);
            let norm_sq: f64 = v.iter().map(|a| a * a).sum();
            sup_sq = sup_sq.max(norm_sq);
        }
        let integrand = compensated_sum_by(grid.n_steps(), &|k| {
            let prefix = PathPrefix {
                path: &path,
                upto: k,
            };
            let mut buf = vec![0.0f64; d * m];
            x.eval_into(&prefix, &mut buf);
            let frob_sq: f64 = buf.iter().map(|v| v * v).sum();
            frob_sq.powi(p as i32) * grid.dt(k)
        });
        [sup_sq.powi(p as i32), integrand]
    });
    let column = |idx: usize| -> Result<McEstimate> {
        let xs: Vec<f64> = samples.iter().map(|s| s[idx]).collect();
        reduce(&xs, seed.root_seed)
    };
    let t_span = horizon;
    let constant = moment_inequality_constant(p) * ((d as f64) * t_span).powi(p as i32 - 1);
    Ok(MaximalCheck {
        p,
        constant,
        sup_moment: column(0)?,
        integrand_moment: column(1)?,
    })
}
