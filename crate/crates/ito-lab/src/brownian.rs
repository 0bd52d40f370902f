//! Brownian (Wiener) paths on a time grid: direct sampling from independent
//! Gaussian increments, and dyadic refinement by midpoint bridge draws.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::rng::SeedSpec;

/// An m-dimensional Brownian trajectory sampled on a [`TimeGrid`].
///
/// Values are stored row-major, one m-vector per grid point, with
/// `value(0) = 0` always. A path is immutable once built and cheap to share
/// across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    grid: TimeGrid,
    /// Row-major `grid.len() x dim`.
    values: Vec<f64>,
    dim: usize,
}

impl BrownianPath {
    /// Wraps explicit values (mostly for tests and deterministic fixtures).
    ///
    /// # Errors
    /// `InvalidArgument` if `dim == 0`, the value count is not
    /// `grid.len() * dim`, any value is non-finite, or the first vector is
    /// not exactly zero.
    pub fn from_values(grid: TimeGrid, values: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("path dimension must be positive"));
        }
        if values.len() != grid.len() * dim {
            return Err(Error::invalid(format!(
                "expected {} values for {} grid points x dim {}, got {}",
                grid.len() * dim,
                grid.len(),
                dim,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("path values must be finite"));
        }
        if values[..dim].iter().any(|&v| v != 0.0) {
            return Err(Error::invalid("a Brownian path must start at 0"));
        }
        Ok(BrownianPath { grid, values, dim })
    }

    /// The grid the path lives on.
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Number of components m.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The m-vector at grid index `k`.
    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// Scalar value at grid index `k`; only meaningful for 1-d paths.
    pub fn scalar(&self, k: usize) -> f64 {
        debug_assert_eq!(self.dim, 1, "scalar() is for 1-d paths");
        self.values[k * self.dim]
    }

    /// Component `j` of the increment over interval `k`,
    /// `W_{t_{k+1}}[j] - W_{t_k}[j]`.
    pub fn increment(&self, k: usize, j: usize) -> f64 {
        self.values[(k + 1) * self.dim + j] - self.values[k * self.dim + j]
    }
}

/// Samples a Brownian path on `grid`: `W_0 = 0` and each increment over
/// `[t_k, t_{k+1}]` drawn independently as N(0, (t_{k+1} - t_k) I_m).
///
/// The draw order is fixed (steps outermost, components innermost) and the
/// whole path is a pure function of `(grid, dim, seed)`, so results do not
/// depend on thread count or call site.
///
/// # Errors
/// `InvalidArgument` if `dim == 0`.
pub fn sample_path(grid: &TimeGrid, dim: usize, seed: SeedSpec) -> Result<BrownianPath> {
    if dim == 0 {
        return Err(Error::invalid("path dimension must be positive"));
    }
    let n = grid.len();
    let mut values = vec![0.0f64; n * dim];
    let mut rng = seed.rng();
    for k in 1..n {
        let sqrt_dt = grid.dt(k - 1).sqrt();
        for j in 0..dim {
            values[k * dim + j] = values[(k - 1) * dim + j] + sqrt_dt * rng.next_standard_normal();
        }
    }
    Ok(BrownianPath {
        grid: grid.clone(),
        values,
        dim,
    })
}

/// Refines a path onto the dyadic refinement of its grid.
///
/// Every original grid point keeps its value bit-for-bit; each new midpoint
/// of an interval `[a, b]` is drawn from the Brownian bridge law
/// N((W_a + W_b)/2, (b - a)/4) per component, using the given seed
/// (intervals outermost, components innermost). Pass a fresh stream for
/// every refinement level so levels stay independent.
pub fn refine_dyadic(path: &BrownianPath, seed: SeedSpec) -> BrownianPath {
    let coarse = path.grid();
    let fine_grid = coarse.refine_dyadic();
    let dim = path.dim();
    let mut values = vec![0.0f64; fine_grid.len() * dim];
    let mut rng = seed.rng();
    for k in 0..coarse.n_steps() {
        let half_sd = 0.5 * coarse.dt(k).sqrt(); // sqrt((b - a) / 4)
        let left = path.value(k);
        let right = path.value(k + 1);
        values[2 * k * dim..(2 * k + 1) * dim].copy_from_slice(left);
        for j in 0..dim {
            values[(2 * k + 1) * dim + j] =
                0.5 * (left[j] + right[j]) + half_sd * rng.next_standard_normal();
        }
    }
    let last = coarse.n_steps();
    values[2 * last * dim..(2 * last + 1) * dim].copy_from_slice(path.value(last));
    BrownianPath {
        grid: fine_grid,
        values,
        dim,
    }
}

/// Restricts a path to every `stride`-th grid point (keeping the first and
/// the last). The restriction of a Brownian path to a subgrid is again a
/// Brownian path on that subgrid, which makes this the natural coupling
/// between resolutions in convergence studies.
///
/// # Errors
/// `InvalidArgument` if `stride == 0` or the step count is not divisible by
/// `stride`.
pub fn restrict_stride(path: &BrownianPath, stride: usize) -> Result<BrownianPath> {
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    let n_steps = path.grid().n_steps();
    if !n_steps.is_multiple_of(stride) {
        return Err(Error::invalid(format!(
            "{n_steps} steps cannot be restricted by stride {stride}"
        )));
    }
    if stride == 1 {
        return Ok(path.clone());
    }
    let dim = path.dim();
    let coarse_points: Vec<f64> = path
        .grid()
        .points()
        .iter()
        .step_by(stride)
        .copied()
        .collect();
    let coarse_grid = TimeGrid::new(coarse_points)?;
    let mut values = Vec::with_capacity(coarse_grid.len() * dim);
    for k in (0..path.grid().len()).step_by(stride) {
        values.extend_from_slice(path.value(k));
    }
    Ok(BrownianPath {
        grid: coarse_grid,
        values,
        dim,
    })
}
