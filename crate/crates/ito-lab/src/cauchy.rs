//! Parabolic PDE solving by Monte Carlo: the backward Kolmogorov equation
//! (terminal-value problems for the generator of a diffusion) and the full
//! discounted/source-carrying Cauchy problem via the Feynman–Kac
//! representation
//! `v(t, x) = E[ f(X_T) Z_T - int_t^T h(s, X_s) Z_s ds ]` with
//! `Z_s = exp(-int_t^s c(r, X_r) dr)`.
//!
//! Discount and source integrals use left-endpoint sums, matching the Itô
//! convention everywhere else in the crate, so all time discretizations
//! share one O(dt) weak-bias regime.

use crate::brownian::sample_path;
use crate::error::{Error, Result};
use crate::estimators::{fit_affine, reduce, sample_streams, McEstimate};
use crate::grid::make_uniform_grid;
use crate::rng::SeedSpec;
use crate::sde::Coefficients;

/// Caller's declaration about the size of problem data: either a polynomial
/// bound `|f| <= l (1 + |x|^(2 lambda))`, or plain nonnegativity (which is
/// what the representation needs when no growth bound is available). The
/// declaration used is recorded on the field and surfaced by spot checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GrowthClass {
    /// `|f(x)| <= l (1 + |x|^(2 lambda))` on the whole domain.
    Polynomial {
        /// Multiplicative constant l.
        l: f64,
        /// Half-exponent lambda.
        lambda: f64,
    },
    /// `f >= 0` everywhere (no growth bound declared).
    NonNegative,
}

/// Scalar function of state alone.
type StateFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Scalar function of time and state.
type SpaceTimeFn = Box<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Scalar function of state `x -> f(x)` with a growth declaration.
///
/// Used for terminal payoffs, boundary data, space-only sources, and
/// space-only discount rates.
pub struct ScalarField {
    description: String,
    growth: GrowthClass,
    f: StateFn,
}

impl ScalarField {
    /// Wraps a payoff closure with its declared growth class.
    pub fn new(
        description: impl Into<String>,
        growth: GrowthClass,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ScalarField {
            description: description.into(),
            growth,
            f: Box::new(f),
        }
    }

    /// Evaluates the payoff.
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    /// The declared growth class.
    pub fn growth(&self) -> GrowthClass {
        self.growth
    }

    /// Caller-supplied label.
    pub fn description(&self) -> &str {
        &self.description
    }
}

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarField")
            .field("description", &self.description)
            .field("growth", &self.growth)
            .finish_non_exhaustive()
    }
}

/// A field `(t, x) -> real` (discount rate or source term) with its growth
/// declaration.
pub struct SpaceTimeField {
    description: String,
    growth: GrowthClass,
    f: SpaceTimeFn,
}

impl SpaceTimeField {
    /// Wraps a field closure with its declared growth class.
    pub fn new(
        description: impl Into<String>,
        growth: GrowthClass,
        f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        SpaceTimeField {
            description: description.into(),
            growth,
            f: Box::new(f),
        }
    }

    /// The constant field `c0` (nonnegative constants are the common case
    /// for discounts).
    pub fn constant(c0: f64) -> Self {
        let growth = if c0 >= 0.0 {
            GrowthClass::NonNegative
        } else {
            GrowthClass::Polynomial {
                l: c0.abs(),
                lambda: 0.0,
            }
        };
        SpaceTimeField::new(format!("constant {c0}"), growth, move |_, _| c0)
    }

    /// Evaluates the field.
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        (self.f)(t, x)
    }

    /// The declared growth class.
    pub fn growth(&self) -> GrowthClass {
        self.growth
    }

    /// Caller-supplied label.
    pub fn description(&self) -> &str {
        &self.description
    }
}

impl std::fmt::Debug for SpaceTimeField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpaceTimeField")
            .field("description", &self.description)
            .field("growth", &self.growth)
            .finish_non_exhaustive()
    }
}

/// A Cauchy problem `dv/dt + L v = h + c v` on `[*, T]` with terminal value
/// `v(T, .) = f`, to be solved backwards from a query point `(t, x)`.
///
/// `discount` (c) and `source` (h) are optional; absent fields are treated
/// as identically zero and never evaluated.
#[derive(Debug)]
pub struct CauchyProblem {
    /// Dynamics of the underlying diffusion.
    pub coeffs: Coefficients,
    /// Final time T at which the terminal condition applies.
    pub t_end: f64,
    /// Terminal payoff f.
    pub terminal: ScalarField,
    /// Discount rate field c >= 0, if any.
    pub discount: Option<SpaceTimeField>,
    /// Source field h, if any.
    pub source: Option<SpaceTimeField>,
}

impl CauchyProblem {
    /// Problem with neither discount nor source (backward Kolmogorov).
    pub fn new(coeffs: Coefficients, t_end: f64, terminal: ScalarField) -> Result<Self> {
        if !t_end.is_finite() {
            return Err(Error::invalid("final time must be finite"));
        }
        Ok(CauchyProblem {
            coeffs,
            t_end,
            terminal,
            discount: None,
            source: None,
        })
    }

    /// Attaches a discount rate field (must be >= 0; spot-checked at solve
    /// time).
    pub fn with_discount(mut self, c: SpaceTimeField) -> Self {
        self.discount = Some(c);
        self
    }

    /// Attaches a source field.
    pub fn with_source(mut self, h: SpaceTimeField) -> Self {
        self.source = Some(h);
        self
    }

    /// Samples the declared growth bounds of the terminal payoff and source
    /// on `[t_lo, T] x [-5, 5]^d` and counts violations. A `NonNegative`
    /// declaration is checked as `f >= 0` instead of a growth bound.
    ///
    /// Violations mean a declaration is understated on the sampled box;
    /// they are reported for the caller (the CLI prints them as warnings),
    /// not raised, because declarations may be conservative and samples
    /// cannot prove them.
    pub fn spot_check_growth(&self, t_lo: f64, n_samples: usize) -> GrowthSpotCheck {
        let d = self.coeffs.dim_state();
        let mut rng = SeedSpec::new(0x6361_7563_6879, 1).rng();
        let mut report = GrowthSpotCheck {
            n_samples,
            terminal_violations: 0,
            source_violations: 0,
        };
        let span = self.t_end - t_lo;
        for _ in 0..n_samples {
            let t = t_lo + span * rng.next_uniform();
            let x: Vec<f64> = (0..d).map(|_| -5.0 + 10.0 * rng.next_uniform()).collect();
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            // Negated comparisons on purpose: a NaN value must count as a
            // violation, and `NaN <= bound` is false.
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            let violates = |value: f64, growth: GrowthClass| -> bool {
                match growth {
                    GrowthClass::Polynomial { l, lambda } => {
                        !(value.abs() <= l * (1.0 + norm.powf(2.0 * lambda)) + 1e-12)
                    }
                    GrowthClass::NonNegative => !(value >= 0.0),
                }
            };
            if violates(self.terminal.eval(&x), self.terminal.growth()) {
                report.terminal_violations += 1;
            }
            if let Some(h) = &self.source {
                if violates(h.eval(t, &x), h.growth()) {
                    report.source_violations += 1;
                }
            }
        }
        report
    }

    /// Hard check that the discount field is nonnegative on sampled points
    /// of `[t_lo, T] x [-5, 5]^d`. A negative discount invalidates the
    /// stochastic representation, so any sampled violation is an error.
    fn check_discount_sign(&self, t_lo: f64) -> Result<()> {
        let Some(c) = &self.discount else {
            return Ok(());
        };
        let d = self.coeffs.dim_state();
        let mut rng = SeedSpec::new(0x6361_7563_6879, 2).rng();
        let span = self.t_end - t_lo;
        for _ in 0..1000 {
            let t = t_lo + span * rng.next_uniform();
            let x: Vec<f64> = (0..d).map(|_| -5.0 + 10.0 * rng.next_uniform()).collect();
            let value = c.eval(t, &x);
            // Negated on purpose: a NaN rate must be rejected too.
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            let negative_or_nan = !(value >= 0.0);
            if negative_or_nan {
                return Err(Error::invalid(format!(
                    "discount field '{}' is negative ({value}) at t={t}, x={x:?}",
                    c.description()
                )));
            }
        }
        Ok(())
    }
}

/// Counts of sampled growth-declaration violations.
#[derive(Debug, Clone, Copy)]
pub struct GrowthSpotCheck {
    /// Number of sampled points.
    pub n_samples: usize,
    /// Terminal-payoff declaration violations.
    pub terminal_violations: usize,
    /// Source-field declaration violations.
    pub source_violations: usize,
}

impl GrowthSpotCheck {
    /// True if no sampled point contradicted a declaration.
    pub fn is_clean(&self) -> bool {
        self.terminal_violations == 0 && self.source_violations == 0
    }
}

/// A Monte Carlo PDE point estimate with its reproduction metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeEstimate {
    /// Query time (0 for elliptic problems).
    pub t: f64,
    /// Query point.
    pub x: Vec<f64>,
    /// Estimated solution value with standard error and seed provenance.
    pub value: McEstimate,
    /// Time steps per path (for elliptic problems, the per-path step cap).
    pub n_steps: usize,
    /// Paths requested.
    pub n_paths: usize,
    /// Paths excluded from the average (diverged or capped) — always below
    /// the hard-error threshold, counted here for transparency.
    pub n_excluded: usize,
}

// Paths are excluded rather than poisoning the mean, but only a tiny
// fraction may be: more than 1 in 1000 (strictly) is a bias risk and aborts
// the estimate. Integer arithmetic avoids float-threshold edge cases.
fn divergence_gate(n_diverged: usize, n_paths: usize) -> Result<()> {
    if n_diverged * 1000 > n_paths {
        Err(Error::ExcessiveDivergence {
            n_diverged,
            n_paths,
            limit_percent: 0.1,
        })
    } else {
        Ok(())
    }
}

fn solve_parabolic(
    prob: &CauchyProblem,
    t: f64,
    x: &[f64],
    n_steps: usize,
    n_paths: usize,
    seed: SeedSpec,
    evaluate_discount_source: bool,
) -> Result<PdeEstimate> {
    let d = prob.coeffs.dim_state();
    if x.len() != d {
        return Err(Error::invalid(format!(
            "query point has length {}, state dimension is {d}",
            x.len()
        )));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("query point must be finite"));
    }
    if !(t.is_finite() && t < prob.t_end) {
        return Err(Error::invalid(format!(
            "query time {t} must precede the final time {}",
            prob.t_end
        )));
    }
    if evaluate_discount_source {
        prob.check_discount_sign(t)?;
    }
    let grid = make_uniform_grid(t, prob.t_end, n_steps)?;
    let m = prob.coeffs.dim_noise();
    let coeffs = &prob.coeffs;
    let discount = if evaluate_discount_source {
        prob.discount.as_ref()
    } else {
        None
    };
    let source = if evaluate_discount_source {
        prob.source.as_ref()
    } else {
        None
    };
    let per_path: Vec<Result<f64>> = sample_streams(n_paths, seed, |spec| {
        let noise = sample_path(&grid, m, spec)?;
        let mut state = x.to_vec();
        let mut next = vec![0.0f64; d];
        let mut drift_buf = vec![0.0f64; d];
        let mut disp_buf = vec![0.0f64; d * m];
        let mut z = 1.0f64;
        let mut source_acc = 0.0f64;
        for k in 0..n_steps {
            let tk = grid.points()[k];
            let dt = grid.dt(k);
            if let Some(h) = source {
                source_acc += h.eval(tk, &state) * z * dt;
            }
            if let Some(c) = discount {
                z *= (-c.eval(tk, &state) * dt).exp();
            }
            coeffs.drift_into(tk, &state, &mut drift_buf);
            coeffs.dispersion_into(tk, &state, &mut disp_buf);
            for i in 0..d {
                let mut acc = state[i] + drift_buf[i] * dt;
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
            std::mem::swap(&mut state, &mut next);
        }
        // f * Z - S is computed unconditionally: with no discount Z is the
        // constant 1.0 and with no source S is 0.0, and IEEE 754 guarantees
        // y * 1.0 == y and y - 0.0 == y bit-for-bit, which is what makes
        // the zero-field reduction to the Kolmogorov solver exact.
        Ok(prob.terminal.eval(&state) * z - source_acc)
    });
    let mut kept = Vec::with_capacity(n_paths);
    let mut n_excluded = 0usize;
    for r in per_path {
        match r {
            Ok(v) if v.is_finite() => kept.push(v),
            Ok(_) | Err(Error::Divergence { .. }) => n_excluded += 1,
            Err(e) => return Err(e),
        }
    }
    divergence_gate(n_excluded, n_paths)?;
    let value = reduce(&kept, seed.root_seed)?;
    Ok(PdeEstimate {
        t,
        x: x.to_vec(),
        value,
        n_steps,
        n_paths,
        n_excluded,
    })
}

/// Estimates the backward Kolmogorov solution `u(t, x) = E[f(X_T^{t,x})]`
/// by averaging the terminal payoff over Euler–Maruyama paths started at
/// `(t, x)`.
///
/// Any discount or source attached to the problem is ignored (never
/// evaluated); use [`feynman_kac_solve`] for the full representation.
///
/// # Errors
/// `InvalidArgument` for bad query points/times or `n_paths < 2`;
/// `ExcessiveDivergence` if more than 0.1% of paths blow up (smaller
/// fractions are excluded from the average and counted in the estimate).
pub fn kolmogorov_solve(
    prob: &CauchyProblem,
    t: f64,
    x: &[f64],
    n_steps: usize,
    n_paths: usize,
    seed: SeedSpec,
) -> Result<PdeEstimate> {
    solve_parabolic(prob, t, x, n_steps, n_paths, seed, false)
}

/// Estimates the Feynman–Kac representation
/// `v(t, x) = E[ f(X_T) Z_T - sum_k h(t_k, X_k) Z_k dt_k ]` with the
/// left-endpoint discount `Z_{k+1} = Z_k exp(-c(t_k, X_k) dt_k)`.
///
/// With no discount and no source attached — or with fields that evaluate
/// identically to zero — this reduces bit-for-bit to [`kolmogorov_solve`]
/// on the same seed.
///
/// # Errors
/// As [`kolmogorov_solve`], plus `InvalidArgument` if the discount field is
/// negative on any spot-checked sample.
pub fn feynman_kac_solve(
    prob: &CauchyProblem,
    t: f64,
    x: &[f64],
    n_steps: usize,
    n_paths: usize,
    seed: SeedSpec,
) -> Result<PdeEstimate> {
    solve_parabolic(prob, t, x, n_steps, n_paths, seed, true)
}

/// A PDE estimate together with a weak-error calibration from a Richardson
/// ladder.
#[derive(Debug, Clone)]
pub struct CalibratedEstimate {
    /// The finest-level estimate.
    pub estimate: PdeEstimate,
    /// Ladder estimates, finest first (`n`, `n/2`, `n/4` steps).
    pub ladder: Vec<PdeEstimate>,
    /// Affine extrapolation of the ladder means to `dt = 0`.
    pub extrapolated: f64,
    /// Fitted weak-error coefficient `C_w` in `mean(dt) ~ u + C_w dt`.
    pub weak_slope: f64,
    /// Acceptance band `4 * stderr + |C_w| * dt` at the finest level.
    pub band: f64,
}

/// Runs `solve` at `n_steps`, `n_steps/2`, and `n_steps/4` steps (with
/// independent child seeds) over a horizon of length `span`, fits the means
/// affinely in `dt`, and returns the finest estimate with the extrapolation
/// and the band `4 * stderr + |C_w| * dt`.
///
/// The band is how weak O(dt) bias is budgeted in assertions: statistical
/// error via the standard error, discretization bias via the fitted slope.
///
/// # Errors
/// `InvalidArgument` if `n_steps` is not divisible by 4 or `span` is not
/// positive; solver errors propagate.
pub fn richardson_calibrated(
    span: f64,
    n_steps: usize,
    seed: SeedSpec,
    solve: impl Fn(usize, SeedSpec) -> Result<PdeEstimate>,
) -> Result<CalibratedEstimate> {
    if !n_steps.is_multiple_of(4) || n_steps == 0 {
        return Err(Error::invalid(
            "Richardson calibration needs a step count divisible by 4",
        ));
    }
    if !(span.is_finite() && span > 0.0) {
        return Err(Error::invalid("horizon span must be positive"));
    }
    let counts = [n_steps, n_steps / 2, n_steps / 4];
    let mut ladder = Vec::with_capacity(3);
    for (li, &n) in counts.iter().enumerate() {
        ladder.push(solve(n, seed.child(li as u64))?);
    }
    let dts: Vec<f64> = counts.iter().map(|&n| span / n as f64).collect();
    let means: Vec<f64> = ladder.iter().map(|e| e.value.mean).collect();
    let (extrapolated, weak_slope) = fit_affine(&dts, &means)?;
    let finest = ladder[0].clone();
    let band = 4.0 * finest.value.stderr + weak_slope.abs() * dts[0];
    Ok(CalibratedEstimate {
        estimate: finest,
        ladder,
        extrapolated,
        weak_slope,
        band,
    })
}
