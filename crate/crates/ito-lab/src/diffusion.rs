//! Observing a diffusion locally: recovering drift and diffusion matrices
//! from short-time increment statistics, and checking that the
//! infinitesimal generator matches difference quotients of test functions.

use crate::brownian::sample_path;
use crate::error::{Error, Result};
use crate::estimators::{reduce, sample_streams, McEstimate};
use crate::rng::SeedSpec;
use crate::sde::Coefficients;

/// Number of Euler sub-steps used to cross one probing horizon `h`, so the
/// discretization bias of the probe is driven by `h` itself rather than by
/// the integrator.
const SUB_STEPS: usize = 64;

/// Threshold (in state-space distance) beyond which an increment counts as
/// "large" for the tail-rate diagnostic.
const TAIL_THRESHOLD: f64 = 0.5;

/// Scalar evaluator `(t, x) -> value`.
type ScalarEval = Box<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Evaluator writing derivatives of `(t, x)` into a buffer.
type BufferEval = Box<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// A C^{1,2} test function with caller-supplied derivatives and a declared
/// polynomial growth bound `|f(t, x)| <= C (1 + |x|^beta)`.
///
/// The derivative closures are cross-checked against central finite
/// differences at construction, so a mistyped gradient or Hessian fails
/// fast instead of corrupting generator statistics.
pub struct GeneratorInput {
    description: String,
    dim: usize,
    f: ScalarEval,
    df_dt: ScalarEval,
    grad: BufferEval,
    hessian: BufferEval,
    growth_c: f64,
    growth_beta: f64,
}

impl GeneratorInput {
    /// Builds a test function and verifies the declared derivatives against
    /// central finite differences (step `1e-5`, mixed tolerance `1e-5`) at
    /// ten fixed pseudo-random points of `[0, 1] x [-2, 2]^dim`.
    ///
    /// # Errors
    /// `InvalidArgument` if dimensions or growth declarations are bad, or a
    /// derivative disagrees with its finite-difference estimate.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        description: impl Into<String>,
        dim: usize,
        f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        df_dt: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        hessian: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        growth_c: f64,
        growth_beta: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("test-function dimension must be positive"));
        }
        if !(growth_c.is_finite() && growth_c >= 0.0)
            || !(growth_beta.is_finite() && growth_beta >= 0.0)
        {
            return Err(Error::invalid(
                "growth declaration must be finite and nonnegative",
            ));
        }
        let gi = GeneratorInput {
            description: description.into(),
            dim,
            f: Box::new(f),
            df_dt: Box::new(df_dt),
            grad: Box::new(grad),
            hessian: Box::new(hessian),
            growth_c,
            growth_beta,
        };
        gi.check_derivatives()?;
        Ok(gi)
    }

    /// `f(t, x) = |x|^2` in `dim` variables.
    pub fn space_square(dim: usize) -> Self {
        GeneratorInput::new(
            "|x|^2",
            dim,
            |_, x| x.iter().map(|v| v * v).sum(),
            |_, _| 0.0,
            |_, x, g| {
                for (gi, xi) in g.iter_mut().zip(x) {
                    *gi = 2.0 * xi;
                }
            },
            move |_, x, h| {
                let d = x.len();
                h.fill(0.0);
                for i in 0..d {
                    h[i * d + i] = 2.0;
                }
            },
            1.0,
            2.0,
        )
        .expect("analytic derivatives of |x|^2 are exact")
    }

    /// `f(t, x) = t + |x|^2` in `dim` variables.
    pub fn time_plus_square(dim: usize) -> Self {
        GeneratorInput::new(
            "t + |x|^2",
            dim,
            |t, x| t + x.iter().map(|v| v * v).sum::<f64>(),
            |_, _| 1.0,
            |_, x, g| {
                for (gi, xi) in g.iter_mut().zip(x) {
                    *gi = 2.0 * xi;
                }
            },
            move |_, x, h| {
                let d = x.len();
                h.fill(0.0);
                for i in 0..d {
                    h[i * d + i] = 2.0;
                }
            },
            2.0,
            2.0,
        )
        .expect("analytic derivatives of t + |x|^2 are exact")
    }

    /// `f(t, x) = x^4` in one variable.
    pub fn fourth_power() -> Self {
        GeneratorInput::new(
            "x^4",
            1,
            |_, x| x[0].powi(4),
            |_, _| 0.0,
            |_, x, g| g[0] = 4.0 * x[0].powi(3),
            |_, x, h| h[0] = 12.0 * x[0] * x[0],
            1.0,
            4.0,
        )
        .expect("analytic derivatives of x^4 are exact")
    }

    /// Caller-supplied label.
    pub fn description(&self) -> &str {
        &self.description
    }

    /// State dimension the function expects.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Declared growth constant C.
    pub fn growth_c(&self) -> f64 {
        self.growth_c
    }

    /// Declared growth exponent beta.
    pub fn growth_beta(&self) -> f64 {
        self.growth_beta
    }

    /// Evaluates `f(t, x)`.
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        (self.f)(t, x)
    }

    /// Evaluates the time derivative.
    pub fn eval_dt(&self, t: f64, x: &[f64]) -> f64 {
        (self.df_dt)(t, x)
    }

    /// Evaluates the spatial gradient into a `dim` buffer.
    pub fn eval_grad(&self, t: f64, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        (self.grad)(t, x, out);
    }

    /// Evaluates the Hessian into a row-major `dim x dim` buffer.
    pub fn eval_hessian(&self, t: f64, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim * self.dim);
        (self.hessian)(t, x, out);
    }

    fn check_derivatives(&self) -> Result<()> {
        let d = self.dim;
        let step = 1e-5;
        let tol = 1e-5;
        let mut rng = SeedSpec::new(0x6469_6666_6572, 0).rng();
        let mut grad = vec![0.0; d];
        let mut hess = vec![0.0; d * d];
        let mixed_err = |got: f64, want: f64| (got - want).abs() / (1.0 + want.abs());
        for _ in 0..10 {
            let t = rng.next_uniform();
            let x: Vec<f64> = (0..d).map(|_| -2.0 + 4.0 * rng.next_uniform()).collect();
            let fd_t = ((self.f)(t + step, &x) - (self.f)(t - step, &x)) / (2.0 * step);
            if mixed_err((self.df_dt)(t, &x), fd_t) > tol {
                return Err(Error::invalid(format!(
                    "time derivative of '{}' disagrees with finite differences at t={t}",
                    self.description
                )));
            }
            (self.grad)(t, &x, &mut grad);
            (self.hessian)(t, &x, &mut hess);
            let mut xp = x.clone();
            for i in 0..d {
                xp[i] = x[i] + step;
                let up = (self.f)(t, &xp);
                xp[i] = x[i] - step;
                let dn = (self.f)(t, &xp);
                xp[i] = x[i];
                if mixed_err(grad[i], (up - dn) / (2.0 * step)) > tol {
                    return Err(Error::invalid(format!(
                        "gradient component {i} of '{}' disagrees with finite differences",
                        self.description
                    )));
                }
            }
            let mut xq = x.clone();
            for i in 0..d {
                for j in 0..d {
                    let fd = if i == j {
                        let f0 = (self.f)(t, &x);
                        xq[i] = x[i] + step;
                        let up = (self.f)(t, &xq);
                        xq[i] = x[i] - step;
                        let dn = (self.f)(t, &xq);
                        xq[i] = x[i];
                        (up - 2.0 * f0 + dn) / (step * step)
                    } else {
                        let mut corner = |si: f64, sj: f64| {
                            xq[i] = x[i] + si * step;
                            xq[j] = x[j] + sj * step;
                            let v = (self.f)(t, &xq);
                            xq[i] = x[i];
                            xq[j] = x[j];
                            v
                        };
                        (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0)
                            + corner(-1.0, -1.0))
                            / (4.0 * step * step)
                    };
                    if mixed_err(hess[i * d + j], fd) > tol.max(1e-4) {
                        return Err(Error::invalid(format!(
                            "Hessian entry ({i},{j}) of '{}' disagrees with finite differences",
                            self.description
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

impl std::fmt::Debug for GeneratorInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GeneratorInput")
            .field("description", &self.description)
            .field("dim", &self.dim)
            .field("growth_c", &self.growth_c)
            .field("growth_beta", &self.growth_beta)
            .finish_non_exhaustive()
    }
}

/// Drift vector and diffusion matrix recovered from short-time increments.
#[derive(Debug, Clone)]
pub struct DriftDiffusionEstimate {
    /// Probing horizon h.
    pub h: f64,
    /// Componentwise estimates of `E[X_{t+h} - x] / h` (length d).
    pub drift: Vec<McEstimate>,
    /// Entrywise estimates of `E[(X_{t+h} - x)(X_{t+h} - x)^T] / h`
    /// (row-major d x d; symmetric sample-by-sample by construction).
    pub diffusion: Vec<McEstimate>,
    /// Estimated rate of large increments `P(|X_{t+h} - x| > 0.5) / h`.
    /// Vanishes as h -> 0 for a diffusion; reported for inspection, never
    /// asserted against.
    pub tail_rate: McEstimate,
}

/// Recovers the local drift `b(t, x)` and diffusion `a(t, x) = sigma sigma^T`
/// of `coeffs` from `n_paths` simulated increments over `[t, t + h]`,
/// integrating each path with 64 Euler sub-steps.
///
/// As `h -> 0` the drift estimate converges to `b(t, x)`, the diffusion
/// estimate to `a(t, x)`, and the tail rate to zero; at finite `h` all carry
/// O(h) bias, so probe at a few horizons when precision matters.
///
/// # Errors
/// `InvalidArgument` for bad dimensions/horizons or `n_paths < 2`;
/// `Divergence` propagated from the integrator.
pub fn estimate_drift_diffusion(
    coeffs: &Coefficients,
    t: f64,
    x: &[f64],
    h: f64,
    n_paths: usize,
    seed: SeedSpec,
) -> Result<DriftDiffusionEstimate> {
    let d = coeffs.dim_state();
    if x.len() != d {
        return Err(Error::invalid(format!(
            "probe point has length {}, state dimension is {d}",
            x.len()
        )));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid(format!(
            "probing horizon must be positive, got {h}"
        )));
    }
    let grid = crate::grid::make_uniform_grid(t, t + h, SUB_STEPS)?;
    let m = coeffs.dim_noise();
    let width = d + d * d + 1;
    let per_path: Vec<Result<Vec<f64>>> = sample_streams(n_paths, seed, |spec| {
        let noise = sample_path(&grid, m, spec)?;
        let terminal = euler_from(coeffs, t, x, &noise)?;
        let mut row = Vec::with_capacity(width);
        let delta: Vec<f64> = terminal.iter().zip(x).map(|(a, b)| a - b).collect();
        for di in &delta {
            row.push(di / h);
        }
        for i in 0..d {
            for j in 0..d {
                row.push(delta[i] * delta[j] / h);
            }
        }
        let dist = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.push(if dist > TAIL_THRESHOLD { 1.0 / h } else { 0.0 });
        Ok(row)
    });
    let per_path: Vec<Vec<f64>> = per_path.into_iter().collect::<Result<_>>()?;
    let column = |idx: usize| -> Result<McEstimate> {
        let xs: Vec<f64> = per_path.iter().map(|s| s[idx]).collect();
        reduce(&xs, seed.root_seed)
    };
    let mut drift = Vec::with_capacity(d);
    for i in 0..d {
        drift.push(column(i)?);
    }
    let mut diffusion = Vec::with_capacity(d * d);
    for ij in 0..d * d {
        diffusion.push(column(d + ij)?);
    }
    let tail_rate = column(d + d * d)?;
    Ok(DriftDiffusionEstimate {
        h,
        drift,
        diffusion,
        tail_rate,
    })
}

// Runs the Euler recursion from an arbitrary start, keeping only the
// terminal state (the probes never need the interior of the path).
fn euler_from(
    coeffs: &Coefficients,
    t0: f64,
    x0: &[f64],
    noise: &crate::brownian::BrownianPath,
) -> Result<Vec<f64>> {
    let (d, m) = (coeffs.dim_state(), coeffs.dim_noise());
    debug_assert_eq!(noise.dim(), m);
    let grid = noise.grid();
    debug_assert_eq!(grid.t0(), t0);
    let mut x = x0.to_vec();
    let mut next = vec![0.0f64; d];
    let mut drift_buf = vec![0.0f64; d];
    let mut disp_buf = vec![0.0f64; d * m];
    for k in 0..grid.n_steps() {
        let tk = grid.points()[k];
        coeffs.drift_into(tk, &x, &mut drift_buf);
        coeffs.dispersion_into(tk, &x, &mut disp_buf);
        let dt = grid.dt(k);
        for i in 0..d {
            let mut acc = x[i] + drift_buf[i] * dt;
            for j in 0..m {
                acc += disp_buf[i * m + j] * noise.increment(k, j);
            }
            next[i] = acc;
        }
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                step: k + 1,
                t: grid.points()[k + 1],
            });
        }
        std::mem::swap(&mut x, &mut next);
    }
    Ok(x)
}

/// Applies the generator
/// `A f = df/dt + sum_i b_i df/dx_i + (1/2) sum_ij a_ij d2f/dx_i dx_j`
/// of `coeffs` to the test function at `(t, x)`.
///
/// # Errors
/// `InvalidArgument` if the test function's dimension differs from the
/// state dimension.
pub fn apply_generator(
    coeffs: &Coefficients,
    gi: &GeneratorInput,
    t: f64,
    x: &[f64],
) -> Result<f64> {
    let d = coeffs.dim_state();
    if gi.dim() != d {
        return Err(Error::invalid(format!(
            "test function expects dimension {}, state dimension is {d}",
            gi.dim()
        )));
    }
    if x.len() != d {
        return Err(Error::invalid("evaluation point has the wrong length"));
    }
    let mut b = vec![0.0; d];
    coeffs.drift_into(t, x, &mut b);
    let mut scratch = vec![0.0; d * coeffs.dim_noise()];
    let mut a = vec![0.0; d * d];
    coeffs.diffusion_matrix_into(t, x, &mut scratch, &mut a);
    let mut grad = vec![0.0; d];
    gi.eval_grad(t, x, &mut grad);
    let mut hess = vec![0.0; d * d];
    gi.eval_hessian(t, x, &mut hess);
    let mut value = gi.eval_dt(t, x);
    for i in 0..d {
        value += b[i] * grad[i];
    }
    for i in 0..d {
        for j in 0..d {
            value += 0.5 * a[i * d + j] * hess[i * d + j];
        }
    }
    Ok(value)
}

/// One probing horizon of a generator limit check.
#[derive(Debug, Clone)]
pub struct GeneratorLevel {
    /// Horizon h.
    pub h: f64,
    /// Monte Carlo estimate of `(E[f(t+h, X_{t+h})] - f(t, x)) / h`.
    pub quotient: McEstimate,
    /// `quotient.mean - A f(t, x)`.
    pub gap: f64,
}

/// Difference quotients of a test function against the generator value, at
/// several probing horizons.
#[derive(Debug, Clone)]
pub struct GeneratorLimitCheck {
    /// `A f(t, x)` computed from coefficients and derivatives.
    pub generator_value: f64,
    /// Per-horizon quotients, in the order the horizons were given.
    pub levels: Vec<GeneratorLevel>,
    /// Slope of the through-origin fit `gap ~ slope * h`, separating the
    /// O(h) discretization bias from statistical noise.
    pub bias_slope: f64,
}

impl GeneratorLimitCheck {
    /// True if every horizon satisfies
    /// `|gap| <= k * stderr + |bias_slope| * h`.
    pub fn passes(&self, k: f64) -> bool {
        self.levels
            .iter()
            .all(|l| l.gap.abs() <= k * l.quotient.stderr + self.bias_slope.abs() * l.h)
    }
}

/// Estimates `(E[f(t+h, X_{t+h})] - f(t, x)) / h` at each horizon in `hs`
/// (each with `n_paths` fresh paths and 64 Euler sub-steps) and compares
/// against `A f(t, x)`. The gaps should shrink linearly in `h` up to Monte
/// Carlo noise; [`GeneratorLimitCheck::passes`] encodes that acceptance.
///
/// # Errors
/// `InvalidArgument` for empty/bad horizons or dimension mismatches; solver
/// errors propagate.
pub fn check_generator_limit(
    coeffs: &Coefficients,
    gi: &GeneratorInput,
    t: f64,
    x: &[f64],
    hs: &[f64],
    n_paths: usize,
    seed: SeedSpec,
) -> Result<GeneratorLimitCheck> {
    if hs.is_empty() {
        return Err(Error::invalid("need at least one probing horizon"));
    }
    let generator_value = apply_generator(coeffs, gi, t, x)?;
    let m = coeffs.dim_noise();
    let f_at_start = gi.eval(t, x);
    let mut levels = Vec::with_capacity(hs.len());
    for (li, &h) in hs.iter().enumerate() {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::invalid(format!(
                "probing horizon must be positive, got {h}"
            )));
        }
        let grid = crate::grid::make_uniform_grid(t, t + h, SUB_STEPS)?;
        let level_seed = seed.child(li as u64);
        let per_path: Vec<Result<f64>> = sample_streams(n_paths, level_seed, |spec| {
            let noise = sample_path(&grid, m, spec)?;
            let terminal = euler_from(coeffs, t, x, &noise)?;
            Ok((gi.eval(t + h, &terminal) - f_at_start) / h)
        });
        let per_path: Vec<f64> = per_path.into_iter().collect::<Result<_>>()?;
        let quotient = reduce(&per_path, level_seed.root_seed)?;
        levels.push(GeneratorLevel {
            h,
            gap: quotient.mean - generator_value,
            quotient,
        });
    }
    let num: f64 = levels.iter().map(|l| l.gap * l.h).sum();
    let den: f64 = levels.iter().map(|l| l.h * l.h).sum();
    let bias_slope = num / den;
    Ok(GeneratorLimitCheck {
        generator_value,
        levels,
        bias_slope,
    })
}
