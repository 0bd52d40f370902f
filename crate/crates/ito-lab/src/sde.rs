//! Itô SDE solving: Euler–Maruyama, Picard fixed-point iteration, and
//! statistical diagnostics (moment bounds, increment scaling, strong-order
//! fitting, noise-coupling stability).
//!
//! State updates are shared between the Euler–Maruyama recursion and the
//! Picard map, so the Picard map fixes the Euler–Maruyama path bit-for-bit
//! on the same grid and noise; converged Picard iterates agree with it to
//! the solve tolerance.

use crate::brownian::{restrict_stride, sample_path, BrownianPath};
use crate::error::{Error, Result};
use crate::estimators::{
    compensated_sum_by, fit_affine, fit_order, reduce, sample_streams, ConvergenceReport,
    McEstimate,
};
use crate::grid::{make_uniform_grid, TimeGrid};
use crate::rng::{SeedSpec, StreamRng};

/// Evaluator writing a drift vector or dispersion matrix into a buffer.
type CoefficientFn = Box<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Drift and dispersion of an Itô SDE `dX = b(t, X) dt + sigma(t, X) dW`,
/// together with caller-declared Lipschitz and growth constants.
///
/// The closures write into caller-provided buffers: the drift fills a
/// `dim_state`-vector, the dispersion a row-major `dim_state x dim_noise`
/// matrix. The declared constants cannot be proven by the library; they are
/// sampled by [`Coefficients::spot_check`], which reports violations as
/// warnings rather than errors (declared constants may legitimately be
/// conservative, and a finite sample can only ever disprove them).
pub struct Coefficients {
    description: String,
    dim_state: usize,
    dim_noise: usize,
    lipschitz_k: f64,
    growth_k: f64,
    drift: CoefficientFn,
    dispersion: CoefficientFn,
}

impl Coefficients {
    /// General coefficients writing into `dim_state` / `dim_state * dim_noise`
    /// buffers.
    pub fn new(
        description: impl Into<String>,
        dim_state: usize,
        dim_noise: usize,
        lipschitz_k: f64,
        growth_k: f64,
        drift: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        dispersion: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        if dim_state == 0 || dim_noise == 0 {
            return Err(Error::invalid(
                "state and noise dimensions must be positive",
            ));
        }
        if !(lipschitz_k.is_finite() && lipschitz_k >= 0.0)
            || !(growth_k.is_finite() && growth_k >= 0.0)
        {
            return Err(Error::invalid(
                "Lipschitz and growth constants must be finite and nonnegative",
            ));
        }
        Ok(Coefficients {
            description: description.into(),
            dim_state,
            dim_noise,
            lipschitz_k,
            growth_k,
            drift: Box::new(drift),
            dispersion: Box::new(dispersion),
        })
    }

    /// Scalar SDE `dX = b(t, X) dt + sigma(t, X) dW`.
    pub fn scalar(
        description: impl Into<String>,
        lipschitz_k: f64,
        growth_k: f64,
        b: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        sigma: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        Coefficients::new(
            description,
            1,
            1,
            lipschitz_k,
            growth_k,
            move |t, x, out| out[0] = b(t, x[0]),
            move |t, x, out| out[0] = sigma(t, x[0]),
        )
    }

    /// Driftless unit-dispersion coefficients: the solution is the driving
    /// Brownian motion itself (shifted by the initial state).
    pub fn brownian(dim_state: usize, dim_noise: usize) -> Result<Self> {
        Coefficients::new(
            format!("brownian d={dim_state} m={dim_noise}"),
            dim_state,
            dim_noise,
            0.0,
            1.0,
            |_, _, out| out.fill(0.0),
            move |_, _, out| {
                out.fill(0.0);
                for i in 0..dim_state.min(dim_noise) {
                    out[i * dim_noise + i] = 1.0;
                }
            },
        )
    }

    /// Geometric Brownian motion `dX = beta X dt + gamma X dW`.
    pub fn geometric_brownian(beta: f64, gamma: f64) -> Result<Self> {
        let k = beta.abs() + gamma.abs();
        let g = beta.hypot(gamma);
        Coefficients::scalar(
            format!("gbm beta={beta} gamma={gamma}"),
            k,
            g,
            move |_, x| beta * x,
            move |_, x| gamma * x,
        )
    }

    /// Ornstein–Uhlenbeck process `dX = -theta X dt + sigma dW`
    /// (additive noise).
    pub fn ornstein_uhlenbeck(theta: f64, sigma: f64) -> Result<Self> {
        Coefficients::scalar(
            format!("ou theta={theta} sigma={sigma}"),
            theta.abs(),
            theta.abs() + sigma.abs(),
            move |_, x| -theta * x,
            move |_, _| sigma,
        )
    }

    /// Caller-supplied label.
    pub fn description(&self) -> &str {
        &self.description
    }

    /// State dimension d.
    pub fn dim_state(&self) -> usize {
        self.dim_state
    }

    /// Noise dimension m.
    pub fn dim_noise(&self) -> usize {
        self.dim_noise
    }

    /// Declared Lipschitz constant.
    pub fn lipschitz_k(&self) -> f64 {
        self.lipschitz_k
    }

    /// Declared linear-growth constant.
    pub fn growth_k(&self) -> f64 {
        self.growth_k
    }

    /// Evaluates the drift into a `dim_state` buffer.
    pub fn drift_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim_state);
        debug_assert_eq!(out.len(), self.dim_state);
        (self.drift)(t, x, out);
    }

    /// Evaluates the dispersion into a row-major `dim_state x dim_noise`
    /// buffer.
    pub fn dispersion_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim_state);
        debug_assert_eq!(out.len(), self.dim_state * self.dim_noise);
        (self.dispersion)(t, x, out);
    }

    /// Evaluates the diffusion matrix `a = sigma sigma^T` into a row-major
    /// `dim_state x dim_state` buffer, using `scratch` (`dim_state *
    /// dim_noise` long) for the dispersion.
    pub fn diffusion_matrix_into(&self, t: f64, x: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        let (d, m) = (self.dim_state, self.dim_noise);
        debug_assert_eq!(scratch.len(), d * m);
        debug_assert_eq!(out.len(), d * d);
        self.dispersion_into(t, x, scratch);
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for l in 0..m {
                    acc += scratch[i * m + l] * scratch[j * m + l];
                }
                out[i * d + j] = acc;
            }
        }
    }

    /// Samples the declared Lipschitz and growth bounds at `n_samples`
    /// random points of `[t_lo, t_hi] x [-5, 5]^d` and counts violations.
    ///
    /// Violations are reported, not raised: a clean report cannot prove the
    /// constants, and a dirty one means the declarations are too small on
    /// the sampled box. Callers (the CLI in particular) surface them as
    /// warnings.
    pub fn spot_check(&self, t_lo: f64, t_hi: f64, n_samples: usize, seed: SeedSpec) -> SpotCheck {
        let (d, m) = (self.dim_state, self.dim_noise);
        let mut rng = seed.rng();
        let draw_point = |rng: &mut StreamRng| {
            let t = t_lo + (t_hi - t_lo) * rng.next_uniform();
            let x: Vec<f64> = (0..d).map(|_| -5.0 + 10.0 * rng.next_uniform()).collect();
            (t, x)
        };
        let mut bx = vec![0.0; d];
        let mut by = vec![0.0; d];
        let mut sx = vec![0.0; d * m];
        let mut sy = vec![0.0; d * m];
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let mut report = SpotCheck {
            n_samples,
            lipschitz_violations: 0,
            growth_violations: 0,
            worst_lipschitz_ratio: 0.0,
            worst_growth_ratio: 0.0,
        };
        for _ in 0..n_samples {
            let (t, x) = draw_point(&mut rng);
            let (_, y) = draw_point(&mut rng);
            self.drift_into(t, &x, &mut bx);
            self.drift_into(t, &y, &mut by);
            self.dispersion_into(t, &x, &mut sx);
            self.dispersion_into(t, &y, &mut sy);
            let db: Vec<f64> = bx.iter().zip(&by).map(|(a, b)| a - b).collect();
            let ds: Vec<f64> = sx.iter().zip(&sy).map(|(a, b)| a - b).collect();
            let dxy = norm(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
            if dxy > 0.0 {
                let ratio = (norm(&db) + norm(&ds)) / (self.lipschitz_k * dxy);
                if ratio.is_nan() || ratio > 1.0 + 1e-9 {
                    report.lipschitz_violations += 1;
                }
                report.worst_lipschitz_ratio = report.worst_lipschitz_ratio.max(ratio);
            }
            let growth_sq = norm(&bx).powi(2) + norm(&sx).powi(2);
            let bound = self.growth_k.powi(2) * (1.0 + norm(&x).powi(2));
            let ratio = growth_sq / bound;
            if ratio.is_nan() || ratio > 1.0 + 1e-9 {
                report.growth_violations += 1;
            }
            report.worst_growth_ratio = report.worst_growth_ratio.max(ratio);
        }
        report
    }
}

impl std::fmt::Debug for Coefficients {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Coefficients")
            .field("description", &self.description)
            .field("dim_state", &self.dim_state)
            .field("dim_noise", &self.dim_noise)
            .field("lipschitz_k", &self.lipschitz_k)
            .field("growth_k", &self.growth_k)
            .finish_non_exhaustive()
    }
}

/// Outcome of sampling declared coefficient bounds on a box.
#[derive(Debug, Clone, Copy)]
pub struct SpotCheck {
    /// Number of sampled points.
    pub n_samples: usize,
    /// Points where the Lipschitz quotient exceeded the declared constant.
    pub lipschitz_violations: usize,
    /// Points where `|b|^2 + |sigma|^2 > K^2 (1 + |x|^2)` failed.
    pub growth_violations: usize,
    /// Largest observed Lipschitz quotient divided by the declared constant.
    pub worst_lipschitz_ratio: f64,
    /// Largest observed growth ratio against its bound.
    pub worst_growth_ratio: f64,
}

impl SpotCheck {
    /// True if no sampled point contradicted the declarations.
    pub fn is_clean(&self) -> bool {
        self.lipschitz_violations == 0 && self.growth_violations == 0
    }
}

/// An initial-value SDE problem on `[t0, t_end]`.
#[derive(Debug)]
pub struct SdeProblem {
    /// Drift/dispersion pair with declared constants.
    pub coeffs: Coefficients,
    /// Initial time.
    pub t0: f64,
    /// Initial state (length `coeffs.dim_state()`).
    pub x0: Vec<f64>,
    /// Final time.
    pub t_end: f64,
}

impl SdeProblem {
    /// Validates dimensions and the time interval.
    pub fn new(coeffs: Coefficients, t0: f64, x0: Vec<f64>, t_end: f64) -> Result<Self> {
        if x0.len() != coeffs.dim_state() {
            return Err(Error::invalid(format!(
                "initial state has length {} but the state dimension is {}",
                x0.len(),
                coeffs.dim_state()
            )));
        }
        if !x0.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("initial state must be finite"));
        }
        if !(t0.is_finite() && t_end.is_finite() && t_end > t0) {
            return Err(Error::invalid(format!(
                "need finite t0 < t_end, got [{t0}, {t_end}]"
            )));
        }
        Ok(SdeProblem {
            coeffs,
            t0,
            x0,
            t_end,
        })
    }

    /// Uniform grid with `n_steps` steps over the problem's interval.
    pub fn uniform_grid(&self, n_steps: usize) -> Result<TimeGrid> {
        make_uniform_grid(self.t0, self.t_end, n_steps)
    }
}

/// A simulated SDE solution sampled on a grid (row-major `len x dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPath {
    grid: TimeGrid,
    states: Vec<f64>,
    dim: usize,
}

impl SolutionPath {
    /// Grid the solution lives on.
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// State dimension d.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// State at grid index `k`.
    pub fn value(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    /// Scalar state at grid index `k` (1-d problems).
    pub fn scalar(&self, k: usize) -> f64 {
        debug_assert_eq!(self.dim, 1, "scalar() is for 1-d solutions");
        self.states[k]
    }

    /// State at the final grid point.
    pub fn final_value(&self) -> &[f64] {
        self.value(self.grid.len() - 1)
    }

    /// Flat row-major state storage.
    pub fn states(&self) -> &[f64] {
        &self.states
    }
}

/// One shared Euler–Maruyama update:
/// `out[i] = x[i] + b_i(t, base) dt + sum_j sigma_ij(t, base) dw[j]`,
/// evaluated at `base` (which equals `x` for the plain recursion and the
/// previous iterate for the Picard map). The accumulation order is fixed so
/// both solvers produce bit-identical floats at a fixed point.
#[allow(clippy::too_many_arguments)]
fn em_update(
    coeffs: &Coefficients,
    t: f64,
    base: &[f64],
    x: &[f64],
    dt: f64,
    dw: &[f64],
    drift_buf: &mut [f64],
    disp_buf: &mut [f64],
    out: &mut [f64],
) {
    let (d, m) = (coeffs.dim_state(), coeffs.dim_noise());
    coeffs.drift_into(t, base, drift_buf);
    coeffs.dispersion_into(t, base, disp_buf);
    for i in 0..d {
        let mut acc = x[i] + drift_buf[i] * dt;
        for j in 0..m {
            acc += disp_buf[i * m + j] * dw[j];
        }
        out[i] = acc;
    }
}

/// Runs the Euler–Maruyama recursion along a driving Brownian path.
///
/// The path's grid must start at the problem's `t0`; the recursion covers
/// the whole grid (its final point need not match `t_end`, so callers can
/// integrate on refinements or extensions).
///
/// # Errors
/// `InvalidArgument` on dimension/grid mismatches; `Divergence` as soon as
/// any state component stops being finite.
pub fn euler_maruyama(prob: &SdeProblem, noise: &BrownianPath) -> Result<SolutionPath> {
    let coeffs = &prob.coeffs;
    let (d, m) = (coeffs.dim_state(), coeffs.dim_noise());
    if noise.dim() != m {
        return Err(Error::invalid(format!(
            "driving path has dimension {} but the noise dimension is {m}",
            noise.dim()
        )));
    }
    let grid = noise.grid();
    if grid.t0() != prob.t0 {
        return Err(Error::invalid(format!(
            "driving grid starts at {} but the problem starts at {}",
            grid.t0(),
            prob.t0
        )));
    }
    let n = grid.len();
    let mut states = vec![0.0f64; n * d];
    states[..d].copy_from_slice(&prob.x0);
    let mut drift_buf = vec![0.0f64; d];
    let mut disp_buf = vec![0.0f64; d * m];
    let mut dw = vec![0.0f64; m];
    for k in 0..n - 1 {
        let t = grid.points()[k];
        for (j, w) in dw.iter_mut().enumerate() {
            *w = noise.increment(k, j);
        }
        let (lo, hi) = (k * d, (k + 1) * d);
        let (prev, next) = states.split_at_mut(hi);
        let x = &prev[lo..hi];
        em_update(
            coeffs,
            t,
            x,
            x,
            grid.dt(k),
            &dw,
            &mut drift_buf,
            &mut disp_buf,
            &mut next[..d],
        );
        if !next[..d].iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                step: k + 1,
                t: grid.points()[k + 1],
            });
        }
    }
    Ok(SolutionPath {
        grid: grid.clone(),
        states,
        dim: d,
    })
}

/// Incremental Euler–Maruyama stepper with a fixed step size, for open-ended
/// integration (exit problems) where the number of steps is not known in
/// advance. Draws `dim_noise` Gaussian increments per step, in component
/// order.
pub struct EmStepper<'a> {
    coeffs: &'a Coefficients,
    t: f64,
    x: Vec<f64>,
    dt: f64,
    sqrt_dt: f64,
    rng: StreamRng,
    steps_taken: usize,
    drift_buf: Vec<f64>,
    disp_buf: Vec<f64>,
    dw: Vec<f64>,
    next: Vec<f64>,
}

impl<'a> EmStepper<'a> {
    /// Starts at `(t0, x0)` with step `dt`, drawing noise from `rng`.
    pub fn new(
        coeffs: &'a Coefficients,
        t0: f64,
        x0: &[f64],
        dt: f64,
        rng: StreamRng,
    ) -> Result<Self> {
        if x0.len() != coeffs.dim_state() {
            return Err(Error::invalid(format!(
                "initial state has length {} but the state dimension is {}",
                x0.len(),
                coeffs.dim_state()
            )));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid(format!(
                "step size must be positive, got {dt}"
            )));
        }
        let (d, m) = (coeffs.dim_state(), coeffs.dim_noise());
        Ok(EmStepper {
            coeffs,
            t: t0,
            x: x0.to_vec(),
            dt,
            sqrt_dt: dt.sqrt(),
            rng,
            steps_taken: 0,
            drift_buf: vec![0.0; d],
            disp_buf: vec![0.0; d * m],
            dw: vec![0.0; m],
            next: vec![0.0; d],
        })
    }

    /// Current time `t0 + steps_taken * dt`.
    pub fn t(&self) -> f64 {
        self.t
    }

    /// Current state.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// Number of steps taken so far.
    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    /// Step size.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances one step.
    ///
    /// # Errors
    /// `Divergence` if the new state is not finite.
    pub fn step(&mut self) -> Result<()> {
        for j in 0..self.coeffs.dim_noise() {
            self.dw[j] = self.sqrt_dt * self.rng.next_standard_normal();
        }
        em_update(
            self.coeffs,
            self.t,
            &self.x,
            &self.x,
            self.dt,
            &self.dw,
            &mut self.drift_buf,
            &mut self.disp_buf,
            &mut self.next,
        );
        self.steps_taken += 1;
        self.t += self.dt;
        if !self.next.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                step: self.steps_taken,
                t: self.t,
            });
        }
        std::mem::swap(&mut self.x, &mut self.next);
        Ok(())
    }
}

/// A converged Picard iteration.
#[derive(Debug, Clone)]
pub struct PicardSolution {
    /// The converged iterate: within the solve tolerance (sup norm) of the
    /// exact fixed point, which is the Euler–Maruyama path bit-for-bit.
    pub path: SolutionPath,
    /// Iterations performed until the update fell below tolerance.
    pub iterations: usize,
    /// Sup-norm distance between successive iterates, one entry per
    /// iteration.
    pub updates: Vec<f64>,
}

/// Solves the integral-equation fixed point on the grid by Picard iteration
/// starting from the constant initial iterate `X == x0`.
///
/// Each iteration applies the map
/// `Phi(X)_{k+1} = Phi(X)_k + b(t_k, X_k) dt_k + sigma(t_k, X_k) dW_k`
/// (left-endpoint sums), whose fixed point is exactly the Euler–Maruyama
/// recursion — the update is shared code, so applying the map to the
/// Euler–Maruyama path reproduces it bit-for-bit. Iteration stops when the
/// sup-norm update is at most `tol`, leaving the returned iterate within
/// that tolerance of the fixed point.
///
/// # Errors
/// `NonConvergence` if `max_iter` iterations do not reach `tol`;
/// `Divergence` if an iterate stops being finite.
pub fn picard_solve(
    prob: &SdeProblem,
    noise: &BrownianPath,
    tol: f64,
    max_iter: usize,
) -> Result<PicardSolution> {
    let n = noise.grid().len();
    let d = prob.coeffs.dim_state();
    let mut initial = vec![0.0f64; n * d];
    for k in 0..n {
        initial[k * d..(k + 1) * d].copy_from_slice(&prob.x0);
    }
    picard_solve_from(prob, noise, &initial, tol, max_iter)
}

/// [`picard_solve`] from a caller-supplied initial iterate (row-major
/// `grid.len() x dim_state`, first row must equal `x0`).
pub fn picard_solve_from(
    prob: &SdeProblem,
    noise: &BrownianPath,
    initial: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<PicardSolution> {
    let coeffs = &prob.coeffs;
    let (d, m) = (coeffs.dim_state(), coeffs.dim_noise());
    if noise.dim() != m {
        return Err(Error::invalid(format!(
            "driving path has dimension {} but the noise dimension is {m}",
            noise.dim()
        )));
    }
    let grid = noise.grid();
    if grid.t0() != prob.t0 {
        return Err(Error::invalid(format!(
            "driving grid starts at {} but the problem starts at {}",
            grid.t0(),
            prob.t0
        )));
    }
    let n = grid.len();
    if initial.len() != n * d {
        return Err(Error::invalid(format!(
            "initial iterate has {} entries, expected {}",
            initial.len(),
            n * d
        )));
    }
    if initial[..d] != prob.x0[..] {
        return Err(Error::invalid(
            "initial iterate must start at the problem's initial state",
        ));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::invalid(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let mut current = initial.to_vec();
    let mut next = vec![0.0f64; n * d];
    let mut drift_buf = vec![0.0f64; d];
    let mut disp_buf = vec![0.0f64; d * m];
    let mut dw = vec![0.0f64; m];
    let mut updates = Vec::new();
    for iter in 1..=max_iter {
        next[..d].copy_from_slice(&prob.x0);
        for k in 0..n - 1 {
            let t = grid.points()[k];
            for (j, w) in dw.iter_mut().enumerate() {
                *w = noise.increment(k, j);
            }
            let base = &current[k * d..(k + 1) * d];
            let (head, tail) = next.split_at_mut((k + 1) * d);
            em_update(
                coeffs,
                t,
                base,
                &head[k * d..],
                grid.dt(k),
                &dw,
                &mut drift_buf,
                &mut disp_buf,
                &mut tail[..d],
            );
        }
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                step: iter,
                t: grid.t_end(),
            });
        }
        let update = current
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        updates.push(update);
        std::mem::swap(&mut current, &mut next);
        if update <= tol {
            return Ok(PicardSolution {
                path: SolutionPath {
                    grid: grid.clone(),
                    states: current,
                    dim: d,
                },
                iterations: iter,
                updates,
            });
        }
    }
    let last_update = *updates.last().unwrap_or(&f64::NAN);
    let last_ratio = if updates.len() >= 2 {
        let prev = updates[updates.len() - 2];
        if prev > 0.0 {
            last_update / prev
        } else {
            f64::NAN
        }
    } else {
        f64::NAN
    };
    Err(Error::NonConvergence {
        iterations: max_iter,
        last_update,
        last_ratio,
    })
}

/// Runs Picard iteration from two different initial iterates (the constant
/// `x0` and the line from `x0` to `2 x0`) on the same noise and returns the
/// sup-norm distance between the two converged paths. Uniqueness of the
/// fixed point predicts a distance within a small multiple of `tol`.
pub fn uniqueness_check(
    prob: &SdeProblem,
    n_steps: usize,
    seed: SeedSpec,
    tol: f64,
    max_iter: usize,
) -> Result<f64> {
    let grid = prob.uniform_grid(n_steps)?;
    let noise = sample_path(&grid, prob.coeffs.dim_noise(), seed)?;
    let n = grid.len();
    let d = prob.coeffs.dim_state();
    let from_const = picard_solve(prob, &noise, tol, max_iter)?;
    let mut ramp = vec![0.0f64; n * d];
    for k in 0..n {
        let frac = k as f64 / (n - 1) as f64;
        for i in 0..d {
            ramp[k * d + i] = prob.x0[i] * (1.0 + frac);
        }
    }
    let from_ramp = picard_solve_from(prob, &noise, &ramp, tol, max_iter)?;
    let dist = from_const
        .path
        .states()
        .iter()
        .zip(from_ramp.path.states())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    Ok(dist)
}

/// Moment and increment-scaling diagnostics for an SDE solution.
#[derive(Debug, Clone)]
pub struct MomentProbe {
    /// Moment order p (the probe looks at 2p-th moments).
    pub p: u32,
    /// Estimate of `E[sup_k ||X_k||^{2p}]` over the grid.
    pub sup_moment: McEstimate,
    /// Mean-square increment `E||X_{t+h} - X_t||^2` per probed lag,
    /// as `(lag h, McEstimate)` pairs.
    pub increment_moments: Vec<(f64, McEstimate)>,
    /// Fitted exponent of `E||X_{t+h} - X_t||^2 ~ C h^s` (1.0 for a
    /// diffusion with nondegenerate dispersion).
    pub increment_exponent: f64,
}

/// Estimates `E[sup ||X||^{2p}]` and the increment-scaling exponent for
/// `prob` on a uniform grid of `n_steps` steps, from `n_paths` simulated
/// paths. Increments are probed at dyadic lags `dt, 2 dt, ..., 16 dt`,
/// averaged over all start indices.
///
/// # Errors
/// `InvalidArgument` for `p == 0`, too-coarse grids (`n_steps < 32`), or
/// `n_paths < 2`; `Divergence` propagated from the solver.
pub fn moment_probe(
    prob: &SdeProblem,
    p: u32,
    n_steps: usize,
    n_paths: usize,
    seed: SeedSpec,
) -> Result<MomentProbe> {
    if p == 0 {
        return Err(Error::invalid("moment order p must be at least 1"));
    }
    if n_steps < 32 {
        return Err(Error::invalid("increment probing needs at least 32 steps"));
    }
    let grid = prob.uniform_grid(n_steps)?;
    let m = prob.coeffs.dim_noise();
    let d = prob.coeffs.dim_state();
    let lags = [1usize, 2, 4, 8, 16];
    let per_path: Vec<Result<[f64; 6]>> = sample_streams(n_paths, seed, |spec| {
        let noise = sample_path(&grid, m, spec)?;
        let path = euler_maruyama(prob, &noise)?;
        let norm_sq = |k: usize| -> f64 { path.value(k).iter().map(|v| v * v).sum::<f64>() };
        let mut sup_sq = 0.0f64;
        for k in 0..grid.len() {
            sup_sq = sup_sq.max(norm_sq(k));
        }
        let mut out = [0.0f64; 6];
        out[0] = sup_sq.powi(p as i32);
        for (li, &lag) in lags.iter().enumerate() {
            let n_starts = grid.len() - lag;
            let mean_sq = compensated_sum_by(n_starts, &|k| {
                let mut sq = 0.0;
                for i in 0..d {
                    let diff = path.value(k + lag)[i] - path.value(k)[i];
                    sq += diff * diff;
                }
                sq
            }) / n_starts as f64;
            out[1 + li] = mean_sq;
        }
        Ok(out)
    });
    let per_path: Vec<[f64; 6]> = per_path.into_iter().collect::<Result<_>>()?;
    let column = |idx: usize| -> Result<McEstimate> {
        let xs: Vec<f64> = per_path.iter().map(|s| s[idx]).collect();
        reduce(&xs, seed.root_seed)
    };
    let sup_moment = column(0)?;
    let dt = grid.mesh();
    let mut increment_moments = Vec::with_capacity(lags.len());
    let mut log_pts = Vec::with_capacity(lags.len());
    for (li, &lag) in lags.iter().enumerate() {
        let est = column(1 + li)?;
        let h = lag as f64 * dt;
        if est.mean > 0.0 {
            log_pts.push((h.ln(), est.mean.ln()));
        }
        increment_moments.push((h, est));
    }
    if log_pts.len() < 2 {
        return Err(Error::DegenerateFit(
            "increment moments vanish; no exponent to fit".into(),
        ));
    }
    let xs: Vec<f64> = log_pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = log_pts.iter().map(|p| p.1).collect();
    let (_, slope) = fit_affine(&xs, &ys)?;
    Ok(MomentProbe {
        p,
        sup_moment,
        increment_moments,
        increment_exponent: slope,
    })
}

/// Fits the strong convergence order of Euler–Maruyama for `prob`.
///
/// Level `l` (for `l` in `k0..=k1`) uses `2^l` uniform steps. All levels of
/// one Monte Carlo replication share a single driving Brownian path sampled
/// at the reference resolution `2^(k1+4)` and restricted by striding, so
/// errors are coupled; the reference solution is Euler–Maruyama at the
/// reference resolution. Reported error per level is the RMS terminal gap
/// `sqrt(E||X_T^level - X_T^ref||^2)`, and the fitted order is the slope of
/// log error against log mesh.
///
/// # Errors
/// `InvalidArgument` for empty/oversized level ranges or `n_paths < 2`;
/// solver errors propagate.
pub fn strong_order_study(
    prob: &SdeProblem,
    k0: u32,
    k1: u32,
    n_paths: usize,
    seed: SeedSpec,
) -> Result<ConvergenceReport> {
    if k0 < 1 || k1 < k0 {
        return Err(Error::invalid(format!(
            "need 1 <= k0 <= k1 for dyadic levels, got {k0}..{k1}"
        )));
    }
    let k_ref = k1 + 4;
    if k_ref > 24 {
        return Err(Error::invalid(
            "levels above 2^20 steps are not supported by the study",
        ));
    }
    let n_levels = (k1 - k0 + 1) as usize;
    let fine_grid = prob.uniform_grid(1usize << k_ref)?;
    let m = prob.coeffs.dim_noise();
    let per_path: Vec<Result<Vec<f64>>> = sample_streams(n_paths, seed, |spec| {
        let fine = sample_path(&fine_grid, m, spec)?;
        let reference = euler_maruyama(prob, &fine)?;
        let x_ref = reference.final_value().to_vec();
        let mut sq_errors = Vec::with_capacity(n_levels);
        for level in k0..=k1 {
            let stride = 1usize << (k_ref - level);
            let coarse = restrict_stride(&fine, stride)?;
            let solution = euler_maruyama(prob, &coarse)?;
            let mut sq = 0.0;
            for (got, want) in solution.final_value().iter().zip(&x_ref) {
                let diff = got - want;
                sq += diff * diff;
            }
            sq_errors.push(sq);
        }
        Ok(sq_errors)
    });
    let per_path: Vec<Vec<f64>> = per_path.into_iter().collect::<Result<_>>()?;
    let span = prob.t_end - prob.t0;
    let mut levels = Vec::with_capacity(n_levels);
    for (li, level) in (k0..=k1).enumerate() {
        let sq: Vec<f64> = per_path.iter().map(|s| s[li]).collect();
        let rms = reduce(&sq, seed.root_seed)?.mean.max(0.0).sqrt();
        let mesh = span / (1u64 << level) as f64;
        levels.push((mesh, rms));
    }
    fit_order(&levels)
}

/// Sup-norm distance over the grid between two Euler–Maruyama solutions of
/// the same coefficients driven by the same noise but started at different
/// points. Continuity in the initial condition bounds this by
/// `C ||x0 - y0||` pathwise on average.
pub fn coupled_initial_condition_gap(
    coeffs: &Coefficients,
    t0: f64,
    x0: &[f64],
    y0: &[f64],
    t_end: f64,
    n_steps: usize,
    seed: SeedSpec,
) -> Result<f64> {
    if x0.len() != coeffs.dim_state() || y0.len() != coeffs.dim_state() {
        return Err(Error::invalid(
            "initial states must match the state dimension",
        ));
    }
    let grid = make_uniform_grid(t0, t_end, n_steps)?;
    let noise = sample_path(&grid, coeffs.dim_noise(), seed)?;
    let d = coeffs.dim_state();
    let run = |start: &[f64]| -> Result<SolutionPath> {
        let n = grid.len();
        let mut states = vec![0.0f64; n * d];
        states[..d].copy_from_slice(start);
        let mut drift_buf = vec![0.0f64; d];
        let mut disp_buf = vec![0.0f64; d * coeffs.dim_noise()];
        let mut dw = vec![0.0f64; coeffs.dim_noise()];
        for k in 0..n - 1 {
            let t = grid.points()[k];
            for (j, w) in dw.iter_mut().enumerate() {
                *w = noise.increment(k, j);
            }
            let (lo, hi) = (k * d, (k + 1) * d);
            let (prev, next) = states.split_at_mut(hi);
            let x = &prev[lo..hi];
            em_update(
                coeffs,
                t,
                x,
                x,
                grid.dt(k),
                &dw,
                &mut drift_buf,
                &mut disp_buf,
                &mut next[..d],
            );
            if !next[..d].iter().all(|v| v.is_finite()) {
                return Err(Error::Divergence {
                    step: k + 1,
                    t: grid.points()[k + 1],
                });
            }
        }
        Ok(SolutionPath {
            grid: grid.clone(),
            states,
            dim: d,
        })
    };
    let a = run(x0)?;
    let b = run(y0)?;
    let dist = a
        .states()
        .iter()
        .zip(b.states())
        .map(|(u, v)| (u - v).abs())
        .fold(0.0f64, f64::max);
    Ok(dist)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gbm_problem(n: f64) -> SdeProblem {
        let coeffs = Coefficients::geometric_brownian(0.1, 0.2).unwrap();
        SdeProblem::new(coeffs, 0.0, vec![n], 1.0).unwrap()
    }

    #[test]
    fn pure_drift_recursion_matches_hand_computation() {
        // dX = 2 dt with no noise: X_k = x0 + 2 * k * dt exactly in floats
        // when dt is a power of two.
        let coeffs = Coefficients::scalar("line", 0.0, 2.0, |_, _| 2.0, |_, _| 0.0).unwrap();
        let prob = SdeProblem::new(coeffs, 0.0, vec![1.0], 1.0).unwrap();
        let grid = prob.uniform_grid(8).unwrap();
        let noise = sample_path(&grid, 1, SeedSpec::new(3, 0)).unwrap();
        let path = euler_maruyama(&prob, &noise).unwrap();
        for k in 0..=8 {
            assert_eq!(path.scalar(k), 1.0 + 2.0 * (k as f64) * 0.125);
        }
    }

    #[test]
    fn single_step_matches_update_formula() {
        let prob = gbm_problem(2.0);
        let grid = prob.uniform_grid(1).unwrap();
        let noise = sample_path(&grid, 1, SeedSpec::new(7, 0)).unwrap();
        let path = euler_maruyama(&prob, &noise).unwrap();
        let dw = noise.increment(0, 0);
        let expect = 2.0 + (0.1 * 2.0) * 1.0 + (0.2 * 2.0) * dw;
        assert_eq!(path.scalar(1), expect);
    }

    #[test]
    fn dimension_and_grid_mismatches_are_rejected() {
        let prob = gbm_problem(1.0);
        let grid = make_uniform_grid(0.5, 1.0, 4).unwrap();
        let noise = sample_path(&grid, 1, SeedSpec::new(0, 0)).unwrap();
        assert!(matches!(
            euler_maruyama(&prob, &noise),
            Err(Error::InvalidArgument(_))
        ));
        let grid2 = make_uniform_grid(0.0, 1.0, 4).unwrap();
        let noise2 = sample_path(&grid2, 2, SeedSpec::new(0, 0)).unwrap();
        assert!(euler_maruyama(&prob, &noise2).is_err());
    }

    #[test]
    fn explosive_drift_reports_divergence() {
        let coeffs =
            Coefficients::scalar("explosive", 1.0, 1.0, |_, x| x * x * 1e4, |_, _| 0.0).unwrap();
        let prob = SdeProblem::new(coeffs, 0.0, vec![1e3], 1.0).unwrap();
        let grid = prob.uniform_grid(64).unwrap();
        let noise = sample_path(&grid, 1, SeedSpec::new(0, 0)).unwrap();
        match euler_maruyama(&prob, &noise) {
            Err(Error::Divergence { step, t }) => {
                assert!(step >= 1 && t > 0.0);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn stepper_agrees_with_batch_solver_shape() {
        let prob = gbm_problem(1.0);
        let rng = SeedSpec::new(11, 5).rng();
        let mut stepper = EmStepper::new(&prob.coeffs, 0.0, &prob.x0, 0.01, rng).unwrap();
        for _ in 0..100 {
            stepper.step().unwrap();
        }
        assert_eq!(stepper.steps_taken(), 100);
        assert!((stepper.t() - 1.0).abs() < 1e-12);
        assert!(stepper.x()[0].is_finite());
    }

    #[test]
    fn picard_map_fixes_the_euler_path_bitwise() {
        let prob = gbm_problem(1.5);
        let grid = prob.uniform_grid(64).unwrap();
        let noise = sample_path(&grid, 1, SeedSpec::new(21, 0)).unwrap();
        let em = euler_maruyama(&prob, &noise).unwrap();
        // Starting the iteration at the Euler path must fix it immediately:
        // the very first update is exactly zero.
        let fixed = picard_solve_from(&prob, &noise, em.states(), 1e-300, 2).unwrap();
        assert_eq!(fixed.iterations, 1);
        assert_eq!(fixed.updates, vec![0.0]);
        for (a, b) in fixed.path.states().iter().zip(em.states()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn picard_converges_to_the_euler_path_within_tolerance() {
        let prob = gbm_problem(1.5);
        let grid = prob.uniform_grid(64).unwrap();
        let noise = sample_path(&grid, 1, SeedSpec::new(21, 0)).unwrap();
        let em = euler_maruyama(&prob, &noise).unwrap();
        let pic = picard_solve(&prob, &noise, 1e-10, 200).unwrap();
        let dist = pic
            .path
            .states()
            .iter()
            .zip(em.states())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(
            dist <= 1e-9,
            "converged iterate is {dist} from the fixed point"
        );
        assert!(*pic.updates.last().unwrap() <= 1e-10);
    }

    #[test]
    fn picard_rejects_bad_initial_iterates() {
        let prob = gbm_problem(1.0);
        let grid = prob.uniform_grid(4).unwrap();
        let noise = sample_path(&grid, 1, SeedSpec::new(0, 0)).unwrap();
        let wrong_len = vec![1.0; 3];
        assert!(picard_solve_from(&prob, &noise, &wrong_len, 1e-10, 10).is_err());
        let wrong_start = vec![2.0; 5];
        assert!(picard_solve_from(&prob, &noise, &wrong_start, 1e-10, 10).is_err());
    }

    #[test]
    fn uniqueness_distance_is_within_tolerance_multiple() {
        let prob = gbm_problem(1.0);
        let dist = uniqueness_check(&prob, 64, SeedSpec::new(33, 0), 1e-10, 200).unwrap();
        assert!(
            dist <= 1e-9,
            "fixed points from two initial iterates differ by {dist}"
        );
    }

    #[test]
    fn spot_check_confirms_honest_constants_and_flags_dishonest_ones() {
        let honest = Coefficients::geometric_brownian(0.1, 0.2).unwrap();
        let report = honest.spot_check(0.0, 1.0, 1000, SeedSpec::new(5, 0));
        assert!(report.is_clean(), "{report:?}");
        // Declare a Lipschitz constant that is far too small.
        let dishonest =
            Coefficients::scalar("understated", 0.01, 0.01, |_, x| x, |_, _| 1.0).unwrap();
        let report = dishonest.spot_check(0.0, 1.0, 1000, SeedSpec::new(5, 0));
        assert!(report.lipschitz_violations > 0);
        assert!(report.growth_violations > 0);
        assert!(!report.is_clean());
    }

    #[test]
    fn brownian_coefficients_reproduce_the_driving_path() {
        let coeffs = Coefficients::brownian(2, 2).unwrap();
        let prob = SdeProblem::new(coeffs, 0.0, vec![0.0, 0.0], 1.0).unwrap();
        let grid = prob.uniform_grid(32).unwrap();
        let noise = sample_path(&grid, 2, SeedSpec::new(8, 0)).unwrap();
        let path = euler_maruyama(&prob, &noise).unwrap();
        for k in 0..=32 {
            for i in 0..2 {
                assert!((path.value(k)[i] - noise.value(k)[i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn problem_validation_rejects_bad_inputs() {
        let c = || Coefficients::geometric_brownian(0.1, 0.2).unwrap();
        assert!(SdeProblem::new(c(), 0.0, vec![1.0, 2.0], 1.0).is_err());
        assert!(SdeProblem::new(c(), 0.0, vec![f64::NAN], 1.0).is_err());
        assert!(SdeProblem::new(c(), 1.0, vec![1.0], 0.5).is_err());
        assert!(SdeProblem::new(c(), 0.0, vec![1.0], 1.0).is_ok());
    }

    #[test]
    fn coupled_gap_scales_with_initial_separation() {
        let coeffs = Coefficients::geometric_brownian(0.1, 0.2).unwrap();
        let gap_small = coupled_initial_condition_gap(
            &coeffs,
            0.0,
            &[1.0],
            &[1.001],
            1.0,
            256,
            SeedSpec::new(17, 0),
        )
        .unwrap();
        let coeffs = Coefficients::geometric_brownian(0.1, 0.2).unwrap();
        let gap_large = coupled_initial_condition_gap(
            &coeffs,
            0.0,
            &[1.0],
            &[2.0],
            1.0,
            256,
            SeedSpec::new(17, 0),
        )
        .unwrap();
        assert!(gap_small < gap_large);
        assert!(gap_small <= 0.001 * 3.0, "gap {gap_small} too large");
    }
}
