//! Elliptic boundary-value problems solved by stopped diffusions.
//!
//! A time-homogeneous diffusion started inside a bounded domain is run until
//! it first leaves the domain.  Averaging boundary data at the exit point —
//! together with a running discount factor and source integral accumulated
//! along the way — yields a Monte Carlo estimate of the Dirichlet solution at
//! the starting point, exactly as the parabolic solver in [`crate::cauchy`]
//! does for terminal-value problems.
//!
//! The exit itself is located in two stages: the Euler–Maruyama walk runs
//! until the first grid state outside the domain, then the crossing is
//! refined by bisecting the final segment against the membership predicate
//! (no distributional bridge correction is applied).  The refined crossing
//! fraction feeds both the reported exit time and the partial-step discount
//! and source contributions, and the exit point is obtained by projecting the
//! bracketing pair onto the boundary.
//!
//! Paths that neither exit nor diverge by a configurable time cap are
//! excluded from the average; if they reach 0.1% of the requested paths the
//! solve fails hard rather than return a silently biased estimate.

use std::fmt;

use crate::cauchy::{PdeEstimate, ScalarField};
use crate::error::{Error, Result};
use crate::estimators::{reduce, sample_streams, McEstimate};
use crate::rng::{SeedSpec, StreamRng};
use crate::sde::{Coefficients, EmStepper};

/// Bisection steps spent refining the exit crossing on the final segment.
const BISECTION_ITERATIONS: usize = 60;

/// Interior points requested by the coefficient/discount probe.
const PROBE_SAMPLES: usize = 1000;

/// Smallest admissible probed diffusion scale; below this the generator is
/// treated as degenerate and the problem is rejected.
const MIN_DIFFUSION_SCALE: f64 = 1e-12;

/// Fraction (as per-mille) of excluded paths at which a solve fails hard.
const EXCLUDED_PER_MILLE: usize = 1;

/// Open-domain membership predicate.
type MembershipFn = Box<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// Maps an interior/exterior pair to a boundary point on the segment.
type ProjectorFn = Box<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;

/// A bounded open domain described by a membership predicate, a boundary
/// projector, and a bounding radius.
///
/// The three pieces must be mutually consistent: for an interior point
/// `x_in` and an exterior point `x_out`, `boundary_project(x_in, x_out)`
/// returns a point of the segment `[x_in, x_out]` lying on the boundary —
/// `contains` must reject it, while stepping `1e-9 * bounding_radius` back
/// towards `x_in` must land inside.  [`Domain::new`] validates this on
/// sampled segments and rejects inconsistent triples; the built-in
/// constructors ([`Domain::interval`], [`Domain::ball`],
/// [`Domain::hyper_box`]) satisfy it exactly.
pub struct Domain {
    description: String,
    dim: usize,
    bounding_radius: f64,
    contains: MembershipFn,
    project: ProjectorFn,
}

impl fmt::Debug for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Domain")
            .field("description", &self.description)
            .field("dim", &self.dim)
            .field("bounding_radius", &self.bounding_radius)
            .finish_non_exhaustive()
    }
}

impl Domain {
    /// Wraps a custom membership predicate and boundary projector, after
    /// validating their mutual consistency on sampled interior/exterior
    /// segments.
    ///
    /// `bounding_radius` must be the radius of an origin-centred ball
    /// containing the whole domain; it calibrates sampling boxes, the
    /// consistency tolerance, and the default time cap.
    ///
    /// # Errors
    /// `InvalidArgument` if the dimensions or radius are out of range, if no
    /// interior points can be found inside the bounding ball, or if the
    /// projector is inconsistent with the predicate on any sampled segment.
    pub fn new(
        description: impl Into<String>,
        dim: usize,
        bounding_radius: f64,
        contains: impl Fn(&[f64]) -> bool + Send + Sync + 'static,
        project: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        let domain = Domain {
            description: description.into(),
            dim,
            bounding_radius,
            contains: Box::new(contains),
            project: Box::new(project),
        };
        domain.validate_shape()?;
        domain.consistency_check()?;
        Ok(domain)
    }

    /// The open interval `(a, b)` on the line.
    pub fn interval(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::invalid(format!(
                "interval endpoints must be finite with a < b, got ({a}, {b})"
            )));
        }
        Domain::new(
            format!("interval ({a}, {b})"),
            1,
            a.abs().max(b.abs()),
            move |x: &[f64]| a < x[0] && x[0] < b,
            move |_x_in: &[f64], x_out: &[f64]| vec![if x_out[0] >= b { b } else { a }],
        )
    }

    /// The open ball of the given radius centred at the origin.
    pub fn ball(dim: usize, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::invalid(format!(
                "ball radius must be positive and finite, got {radius}"
            )));
        }
        let r2 = radius * radius;
        Domain::new(
            format!("ball of radius {radius} in dimension {dim}"),
            dim,
            radius,
            move |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() < r2,
            move |x_in: &[f64], x_out: &[f64]| {
                // Solve |x_in + theta (x_out - x_in)|^2 = r^2 for the root in
                // (0, 1]; x_in is strictly inside so the constant term is
                // negative and the positive root is the crossing.
                let d = x_in.len();
                let mut a = 0.0;
                let mut b = 0.0;
                let mut c = -r2;
                for i in 0..d {
                    let diff = x_out[i] - x_in[i];
                    a += diff * diff;
                    b += diff * x_in[i];
                    c += x_in[i] * x_in[i];
                }
                let theta = if a > 0.0 {
                    ((b * b - a * c).max(0.0).sqrt() - b) / a
                } else {
                    0.0
                };
                let mut p: Vec<f64> = (0..d)
                    .map(|i| x_in[i] + theta * (x_out[i] - x_in[i]))
                    .collect();
                // Rounding can leave the crossing a few ulps inside; rescale
                // onto the sphere and nudge outward until membership fails.
                let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    let scale = radius / norm;
                    for v in &mut p {
                        *v *= scale;
                    }
                }
                let mut guard = 0;
                while p.iter().map(|v| v * v).sum::<f64>() < r2 && guard < 64 {
                    for v in &mut p {
                        *v *= 1.0 + 2.0 * f64::EPSILON;
                    }
                    guard += 1;
                }
                p
            },
        )
    }

    /// The open axis-aligned box with corners `lo` and `hi`.
    pub fn hyper_box(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::invalid(format!(
                "box corners must be non-empty and of equal length, got {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        for i in 0..lo.len() {
            if !(lo[i].is_finite() && hi[i].is_finite() && lo[i] < hi[i]) {
                return Err(Error::invalid(format!(
                    "box must satisfy lo < hi coordinate-wise, got ({}, {}) at index {i}",
                    lo[i], hi[i]
                )));
            }
        }
        let radius = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| a.abs().max(b.abs()).powi(2))
            .sum::<f64>()
            .sqrt();
        let dim = lo.len();
        let (lo_c, hi_c) = (lo.clone(), hi.clone());
        Domain::new(
            format!("box {lo:?} to {hi:?}"),
            dim,
            radius,
            move |x: &[f64]| {
                x.iter()
                    .enumerate()
                    .all(|(i, v)| lo_c[i] < *v && *v < hi_c[i])
            },
            move |x_in: &[f64], x_out: &[f64]| {
                // First face crossed along the segment; the crossing
                // coordinate is pinned exactly to the face value so the
                // strict membership test rejects the result.
                let mut theta_min = f64::INFINITY;
                let mut face = 0usize;
                let mut face_value = 0.0;
                for i in 0..x_in.len() {
                    let diff = x_out[i] - x_in[i];
                    let (target, crossed) = if x_out[i] >= hi[i] {
                        (hi[i], true)
                    } else if x_out[i] <= lo[i] {
                        (lo[i], true)
                    } else {
                        (0.0, false)
                    };
                    if crossed && diff != 0.0 {
                        let theta = (target - x_in[i]) / diff;
                        if theta < theta_min {
                            theta_min = theta;
                            face = i;
                            face_value = target;
                        }
                    }
                }
                let theta = theta_min.clamp(0.0, 1.0);
                let mut p: Vec<f64> = x_in
                    .iter()
                    .zip(x_out)
                    .map(|(a, b)| a + theta * (b - a))
                    .collect();
                p[face] = face_value;
                p
            },
        )
    }

    /// State dimension of the domain.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Radius of an origin-centred ball containing the domain.
    pub fn bounding_radius(&self) -> f64 {
        self.bounding_radius
    }

    /// Human-readable label.
    pub fn description(&self) -> &str {
        &self.description
    }

    /// Whether `x` lies inside the (open) domain.
    ///
    /// # Panics
    /// If `x` has the wrong length.
    pub fn contains_point(&self, x: &[f64]) -> bool {
        assert_eq!(x.len(), self.dim, "point dimension mismatch");
        (self.contains)(x)
    }

    /// Projects the segment from interior `x_in` to exterior `x_out` onto
    /// the boundary.
    ///
    /// # Panics
    /// If either point has the wrong length.
    pub fn boundary_project(&self, x_in: &[f64], x_out: &[f64]) -> Vec<f64> {
        assert_eq!(x_in.len(), self.dim, "point dimension mismatch");
        assert_eq!(x_out.len(), self.dim, "point dimension mismatch");
        (self.project)(x_in, x_out)
    }

    fn validate_shape(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("domain dimension must be at least 1"));
        }
        if !(self.bounding_radius.is_finite() && self.bounding_radius > 0.0) {
            return Err(Error::invalid(format!(
                "bounding radius must be positive and finite, got {}",
                self.bounding_radius
            )));
        }
        Ok(())
    }

    /// Draws interior points from the bounding box by rejection.  Returns
    /// fewer than `n` points when the domain fills little of the box.
    fn sample_interior(&self, n: usize, rng: &mut StreamRng) -> Vec<Vec<f64>> {
        let mut points = Vec::with_capacity(n);
        let mut candidate = vec![0.0; self.dim];
        for _ in 0..n * 200 {
            if points.len() == n {
                break;
            }
            for v in &mut candidate {
                *v = (2.0 * rng.next_uniform() - 1.0) * self.bounding_radius;
            }
            if (self.contains)(&candidate) {
                points.push(candidate.clone());
            }
        }
        points
    }

    /// Checks predicate/projector consistency on sampled segments.
    fn consistency_check(&self) -> Result<()> {
        let mut rng = SeedSpec::new(0x646f_6d61_696e, 0).rng();
        let interior = self.sample_interior(64, &mut rng);
        if interior.len() < 16 {
            return Err(Error::invalid(format!(
                "could not sample interior points of '{}' inside its bounding \
                 radius {} — membership predicate and radius look inconsistent",
                self.description, self.bounding_radius
            )));
        }
        let eps = 1e-9 * self.bounding_radius;
        let mut checked = 0usize;
        for x_in in &interior {
            // Walk outward along a random direction until outside.
            let mut dir: Vec<f64> = (0..self.dim).map(|_| rng.next_standard_normal()).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            for v in &mut dir {
                *v /= norm;
            }
            let mut len = 0.05 * self.bounding_radius;
            let mut x_out = None;
            while len <= 8.0 * self.bounding_radius {
                let candidate: Vec<f64> = x_in.iter().zip(&dir).map(|(a, d)| a + len * d).collect();
                if !(self.contains)(&candidate) {
                    x_out = Some(candidate);
                    break;
                }
                len *= 2.0;
            }
            let Some(x_out) = x_out else { continue };
            let p = (self.project)(x_in, &x_out);
            if p.len() != self.dim {
                return Err(Error::invalid(format!(
                    "boundary projector of '{}' returned a point of length {}, expected {}",
                    self.description,
                    p.len(),
                    self.dim
                )));
            }
            if (self.contains)(&p) {
                return Err(Error::invalid(format!(
                    "boundary projector of '{}' returned an interior point — \
                     the membership predicate must reject projected points",
                    self.description
                )));
            }
            let gap: f64 = p
                .iter()
                .zip(x_in.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if gap < 1e-6 * self.bounding_radius {
                continue;
            }
            let back: Vec<f64> = p
                .iter()
                .zip(x_in.iter())
                .map(|(pi, xi)| pi + eps * (xi - pi) / gap)
                .collect();
            if !(self.contains)(&back) {
                return Err(Error::invalid(format!(
                    "boundary projector of '{}' is inconsistent: stepping \
                     1e-9 * bounding_radius back towards the interior point \
                     does not re-enter the domain",
                    self.description
                )));
            }
            checked += 1;
        }
        if checked < 8 {
            return Err(Error::invalid(format!(
                "could not validate the boundary projector of '{}' — too few \
                 usable interior/exterior segments",
                self.description
            )));
        }
        Ok(())
    }
}

/// Summary of the interior coefficient probe run before every solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipticityProbe {
    /// Interior points actually sampled.
    pub n_samples: usize,
    /// Minimum over sampled points of the largest diffusion-matrix diagonal
    /// entry — the scale that must stay positive for exits to happen.
    pub min_diffusion_scale: f64,
}

/// An elliptic boundary-value problem: time-homogeneous dynamics inside a
/// bounded domain, boundary data `f`, and optional space-only source `h` and
/// discount rate `c >= 0`.
///
/// The estimated quantity at a starting point `x` is the expectation of
/// `f(X_tau) Z_tau - sum h(X_k) Z_k dt_k` over paths run until their first
/// exit at time `tau`, where `Z` is the running discount
/// `exp(-sum c(X_k) dt_k)` accumulated with the left-endpoint rule — the
/// same convention as the parabolic solver.
pub struct DirichletProblem {
    coeffs: Coefficients,
    domain: Domain,
    boundary: ScalarField,
    source: Option<ScalarField>,
    discount: Option<ScalarField>,
}

impl fmt::Debug for DirichletProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DirichletProblem")
            .field("coeffs", &self.coeffs.description())
            .field("domain", &self.domain)
            .field("boundary", &self.boundary.description())
            .field("has_source", &self.source.is_some())
            .field("has_discount", &self.discount.is_some())
            .finish()
    }
}

impl DirichletProblem {
    /// Couples dynamics, a domain, and boundary data.
    ///
    /// The coefficient evaluators must ignore their time argument (this is
    /// spot-checked before every solve, not assumed).
    ///
    /// # Errors
    /// `InvalidArgument` if the state dimension and domain dimension differ.
    pub fn new(coeffs: Coefficients, domain: Domain, boundary: ScalarField) -> Result<Self> {
        if coeffs.dim_state() != domain.dim() {
            return Err(Error::invalid(format!(
                "state dimension {} does not match domain dimension {}",
                coeffs.dim_state(),
                domain.dim()
            )));
        }
        Ok(DirichletProblem {
            coeffs,
            domain,
            boundary,
            source: None,
            discount: None,
        })
    }

    /// Attaches a space-only source term `h`.
    #[must_use]
    pub fn with_source(mut self, h: ScalarField) -> Self {
        self.source = Some(h);
        self
    }

    /// Attaches a space-only discount rate `c >= 0` (sign is spot-checked at
    /// solve time, and a negative sample is a hard error).
    #[must_use]
    pub fn with_discount(mut self, c: ScalarField) -> Self {
        self.discount = Some(c);
        self
    }

    /// Dynamics of the underlying diffusion.
    pub fn coeffs(&self) -> &Coefficients {
        &self.coeffs
    }

    /// Domain the diffusion is stopped on.
    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Boundary data.
    pub fn boundary(&self) -> &ScalarField {
        &self.boundary
    }

    /// Samples interior points and validates that the problem is usable:
    /// coefficients must not depend on time, the diffusion matrix must have
    /// a positive diagonal scale somewhere at every sampled point, and any
    /// attached discount rate must be non-negative.  All three failures are
    /// hard errors.
    ///
    /// The probed diffusion scale also calibrates the default time cap; see
    /// [`DirichletProblem::default_t_cap`].
    pub fn ellipticity_probe(&self) -> Result<EllipticityProbe> {
        let mut rng = SeedSpec::new(0x6469_7269_6368, 0).rng();
        let points = self.domain.sample_interior(PROBE_SAMPLES, &mut rng);
        if points.len() < 16 {
            return Err(Error::invalid(format!(
                "could not sample interior points of '{}' for the coefficient probe",
                self.domain.description
            )));
        }
        let d = self.coeffs.dim_state();
        let m = self.coeffs.dim_noise();
        let mut buf_a = vec![0.0; d.max(d * m)];
        let mut buf_b = vec![0.0; d.max(d * m)];
        let mut scratch = vec![0.0; d * m];
        let mut diffusion = vec![0.0; d * d];
        let mut min_scale = f64::INFINITY;
        for x in &points {
            self.coeffs.drift_into(0.0, x, &mut buf_a[..d]);
            self.coeffs.drift_into(0.75, x, &mut buf_b[..d]);
            if buf_a[..d] != buf_b[..d] {
                return Err(Error::invalid(
                    "drift depends on time — this solver requires \
                     time-homogeneous coefficients",
                ));
            }
            self.coeffs.dispersion_into(0.0, x, &mut buf_a[..d * m]);
            self.coeffs.dispersion_into(0.75, x, &mut buf_b[..d * m]);
            if buf_a[..d * m] != buf_b[..d * m] {
                return Err(Error::invalid(
                    "dispersion depends on time — this solver requires \
                     time-homogeneous coefficients",
                ));
            }
            self.coeffs
                .diffusion_matrix_into(0.0, x, &mut scratch, &mut diffusion);
            let max_diag = (0..d)
                .map(|i| diffusion[i * d + i])
                .fold(f64::NEG_INFINITY, f64::max);
            min_scale = min_scale.min(max_diag);
            if let Some(c) = &self.discount {
                let v = c.eval(x);
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::invalid(format!(
                        "discount rate must be non-negative and finite, got \
                         {v} at a sampled interior point"
                    )));
                }
            }
        }
        if !(min_scale.is_finite() && min_scale > MIN_DIFFUSION_SCALE) {
            return Err(Error::invalid(format!(
                "diffusion is degenerate on the sampled interior (largest \
                 diagonal entry {min_scale:e}) — paths would not exit"
            )));
        }
        Ok(EllipticityProbe {
            n_samples: points.len(),
            min_diffusion_scale: min_scale,
        })
    }

    /// Default per-path time cap: `100 r^2 d / s` for bounding radius `r`,
    /// dimension `d`, and probed diffusion scale `s` — two orders of
    /// magnitude above the natural exit-time scale, so that capping stays
    /// a rare event for well-posed problems.
    pub fn default_t_cap(&self, probe: &EllipticityProbe) -> f64 {
        100.0 * self.domain.bounding_radius.powi(2) * self.coeffs.dim_state() as f64
            / probe.min_diffusion_scale
    }
}

/// One simulated exit from the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitSample {
    /// Bisection-refined exit time.
    pub tau: f64,
    /// Grid time of the first state outside the domain (never below `tau`;
    /// upward-biased by up to one step).
    pub tau_raw: f64,
    /// Projected boundary point at the crossing.  When the path was capped
    /// this is the last interior state instead and carries no meaning.
    pub exit_point: Vec<f64>,
    /// Whether the time cap was reached before any exit.
    pub capped: bool,
}

/// Exit sample plus the discount factor and source integral accumulated up
/// to the (refined) exit time.
struct WalkResult {
    sample: ExitSample,
    z: f64,
    source_acc: f64,
}

/// Left-endpoint accumulation over a (possibly partial) step of length
/// `len` starting at `x_left`: the source uses the discount factor *before*
/// this step's discount update.
fn accumulate_running(
    source: &Option<ScalarField>,
    discount: &Option<ScalarField>,
    x_left: &[f64],
    len: f64,
    z: &mut f64,
    source_acc: &mut f64,
) {
    if let Some(h) = source {
        *source_acc += h.eval(x_left) * *z * len;
    }
    if let Some(c) = discount {
        *z *= (-c.eval(x_left) * len).exp();
    }
}

/// Bisects the segment from `inside` to `outside` against the membership
/// predicate, returning the final bracketing fractions `(theta_lo,
/// theta_hi)` and materialising the bracketing states into the buffers.
fn bisect_crossing(
    domain: &Domain,
    inside: &[f64],
    outside: &[f64],
    lo_buf: &mut [f64],
    hi_buf: &mut [f64],
    mid: &mut [f64],
) -> (f64, f64) {
    let mut theta_lo = 0.0_f64;
    let mut theta_hi = 1.0_f64;
    for _ in 0..BISECTION_ITERATIONS {
        let theta_m = 0.5 * (theta_lo + theta_hi);
        if theta_m <= theta_lo || theta_m >= theta_hi {
            break;
        }
        for i in 0..mid.len() {
            mid[i] = inside[i] + theta_m * (outside[i] - inside[i]);
        }
        if (domain.contains)(mid) {
            theta_lo = theta_m;
        } else {
            theta_hi = theta_m;
        }
    }
    for i in 0..lo_buf.len() {
        lo_buf[i] = inside[i] + theta_lo * (outside[i] - inside[i]);
        hi_buf[i] = inside[i] + theta_hi * (outside[i] - inside[i]);
    }
    (theta_lo, theta_hi)
}

/// Runs one path until exit, divergence, or the time cap, accumulating the
/// discount and source along the way.
fn walk_to_exit(
    prob: &DirichletProblem,
    x0: &[f64],
    dt: f64,
    rng: StreamRng,
    t_cap: f64,
) -> Result<WalkResult> {
    let d = x0.len();
    let mut stepper = EmStepper::new(&prob.coeffs, 0.0, x0, dt, rng)?;
    let mut prev = x0.to_vec();
    let mut lo_buf = vec![0.0; d];
    let mut hi_buf = vec![0.0; d];
    let mut mid = vec![0.0; d];
    let mut z = 1.0_f64;
    let mut source_acc = 0.0_f64;
    loop {
        let t_prev = stepper.t();
        prev.copy_from_slice(stepper.x());
        stepper.step()?;
        if !(prob.domain.contains)(stepper.x()) {
            let (theta_lo, theta_hi) = bisect_crossing(
                &prob.domain,
                &prev,
                stepper.x(),
                &mut lo_buf,
                &mut hi_buf,
                &mut mid,
            );
            let theta = 0.5 * (theta_lo + theta_hi);
            let exit_point = prob.domain.boundary_project(&lo_buf, &hi_buf);
            accumulate_running(
                &prob.source,
                &prob.discount,
                &prev,
                theta * dt,
                &mut z,
                &mut source_acc,
            );
            return Ok(WalkResult {
                sample: ExitSample {
                    tau: t_prev + theta * dt,
                    tau_raw: stepper.t(),
                    exit_point,
                    capped: false,
                },
                z,
                source_acc,
            });
        }
        accumulate_running(
            &prob.source,
            &prob.discount,
            &prev,
            dt,
            &mut z,
            &mut source_acc,
        );
        if stepper.t() >= t_cap {
            return Ok(WalkResult {
                sample: ExitSample {
                    tau: t_cap,
                    tau_raw: t_cap,
                    exit_point: stepper.x().to_vec(),
                    capped: true,
                },
                z,
                source_acc,
            });
        }
    }
}

fn validate_query(prob: &DirichletProblem, x: &[f64], dt: f64) -> Result<()> {
    if x.len() != prob.domain.dim() {
        return Err(Error::invalid(format!(
            "starting point has length {} but the domain dimension is {}",
            x.len(),
            prob.domain.dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("starting point must be finite"));
    }
    if !prob.domain.contains_point(x) {
        return Err(Error::invalid(
            "starting point must lie strictly inside the domain",
        ));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid(format!(
            "step size must be positive and finite, got {dt}"
        )));
    }
    Ok(())
}

fn resolve_t_cap(
    prob: &DirichletProblem,
    probe: &EllipticityProbe,
    t_cap: Option<f64>,
) -> Result<f64> {
    match t_cap {
        Some(cap) => {
            if !(cap.is_finite() && cap > 0.0) {
                return Err(Error::invalid(format!(
                    "time cap must be positive and finite, got {cap}"
                )));
            }
            Ok(cap)
        }
        None => Ok(prob.default_t_cap(probe)),
    }
}

/// Simulates a single path from `x` until it first leaves the domain.
///
/// The walk advances on the uniform grid of step `dt` until the first state
/// outside the domain, refines the crossing on the final segment by
/// bisection against the membership predicate, and reports the interpolated
/// crossing time together with the projected boundary point.  If the path
/// neither exits nor diverges by `t_cap` the sample comes back with
/// `capped` set.
///
/// # Errors
/// `InvalidArgument` if the starting point is not strictly inside the
/// domain, the shapes disagree, `dt <= 0`, or `t_cap <= 0`; the coefficient
/// probe's errors for degenerate or time-dependent dynamics; `Divergence`
/// if the path blows up before exiting.
pub fn exit_time(
    prob: &DirichletProblem,
    x: &[f64],
    dt: f64,
    seed: SeedSpec,
    t_cap: f64,
) -> Result<ExitSample> {
    prob.ellipticity_probe()?;
    validate_query(prob, x, dt)?;
    if !(t_cap.is_finite() && t_cap > 0.0) {
        return Err(Error::invalid(format!(
            "time cap must be positive and finite, got {t_cap}"
        )));
    }
    walk_to_exit(prob, x, dt, seed.rng(), t_cap).map(|w| w.sample)
}

/// Exit-time statistics over independent paths.
#[derive(Debug, Clone)]
pub struct ExitStats {
    /// Mean refined exit time.
    pub tau: McEstimate,
    /// Mean grid exit time (before bisection refinement; upward-biased).
    pub tau_raw: McEstimate,
    /// Paths requested.
    pub n_paths: usize,
    /// Paths excluded (capped or diverged) — always below the hard-error
    /// threshold.
    pub n_excluded: usize,
    /// Time cap actually used.
    pub t_cap: f64,
}

/// Splits per-path walk outcomes into kept results and an excluded count,
/// propagating any error other than a path-local divergence.
fn partition_walks(outcomes: Vec<Result<WalkResult>>) -> Result<(Vec<WalkResult>, usize)> {
    let mut kept = Vec::with_capacity(outcomes.len());
    let mut excluded = 0usize;
    for outcome in outcomes {
        match outcome {
            Ok(w) if w.sample.capped => excluded += 1,
            Ok(w) => kept.push(w),
            Err(Error::Divergence { .. }) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((kept, excluded))
}

/// Fails hard when excluded paths reach 0.1% of those requested.
fn excluded_gate(n_excluded: usize, n_paths: usize, t_cap: f64) -> Result<()> {
    // Integer arithmetic: excluded/n >= 0.1% exactly when excluded*1000 >= n.
    if n_excluded * 1000 >= n_paths * EXCLUDED_PER_MILLE {
        return Err(Error::CappedExits {
            n_capped: n_excluded,
            n_paths,
            t_cap,
            limit_percent: 0.1,
        });
    }
    Ok(())
}

/// Estimates the mean exit time from `x` over `n_paths` independent paths.
///
/// Both the bisection-refined and the raw grid exit times are reported; the
/// raw one is upward-biased by construction (the walk only notices an exit
/// at the end of a full step), which is visible when comparing runs at `dt`
/// and `dt / 4`.
///
/// # Errors
/// Everything [`exit_time`] can raise, plus `CappedExits` when capped or
/// diverged paths reach 0.1% of `n_paths`.
pub fn exit_time_stats(
    prob: &DirichletProblem,
    x: &[f64],
    dt: f64,
    n_paths: usize,
    seed: SeedSpec,
    t_cap: Option<f64>,
) -> Result<ExitStats> {
    let probe = prob.ellipticity_probe()?;
    validate_query(prob, x, dt)?;
    if n_paths < 2 {
        return Err(Error::invalid("exit statistics need at least 2 paths"));
    }
    let cap = resolve_t_cap(prob, &probe, t_cap)?;
    let outcomes = sample_streams(n_paths, seed, |s| walk_to_exit(prob, x, dt, s.rng(), cap));
    let (kept, n_excluded) = partition_walks(outcomes)?;
    excluded_gate(n_excluded, n_paths, cap)?;
    if kept.len() < 2 {
        return Err(Error::invalid(
            "fewer than 2 paths exited — increase n_paths or the time cap",
        ));
    }
    let taus: Vec<f64> = kept.iter().map(|w| w.sample.tau).collect();
    let raws: Vec<f64> = kept.iter().map(|w| w.sample.tau_raw).collect();
    Ok(ExitStats {
        tau: reduce(&taus, seed.root_seed)?,
        tau_raw: reduce(&raws, seed.root_seed)?,
        n_paths,
        n_excluded,
        t_cap: cap,
    })
}

/// Estimates the Dirichlet solution at `x` by averaging
/// `f(X_tau) Z_tau - sum h Z dt` over stopped paths.
///
/// `t_cap` bounds each path's lifetime; `None` picks the probe-calibrated
/// default (see [`DirichletProblem::default_t_cap`]).  Capped and diverged
/// paths are excluded from the average and counted in `n_excluded`.
///
/// # Errors
/// Everything [`exit_time`] can raise, plus `CappedExits` when excluded
/// paths reach 0.1% of `n_paths`.
pub fn dirichlet_solve(
    prob: &DirichletProblem,
    x: &[f64],
    dt: f64,
    n_paths: usize,
    seed: SeedSpec,
    t_cap: Option<f64>,
) -> Result<PdeEstimate> {
    let probe = prob.ellipticity_probe()?;
    validate_query(prob, x, dt)?;
    if n_paths < 2 {
        return Err(Error::invalid("the solver needs at least 2 paths"));
    }
    let cap = resolve_t_cap(prob, &probe, t_cap)?;
    let outcomes = sample_streams(n_paths, seed, |s| walk_to_exit(prob, x, dt, s.rng(), cap));
    let (kept, mut n_excluded) = partition_walks(outcomes)?;
    let mut payoffs = Vec::with_capacity(kept.len());
    for w in &kept {
        // The discount factor starts at exactly 1.0 and the source
        // accumulator at exactly +0.0, so with no discount and no source
        // this expression reproduces the bare boundary payoff bit for bit.
        let payoff = prob.boundary.eval(&w.sample.exit_point) * w.z - w.source_acc;
        if payoff.is_finite() {
            payoffs.push(payoff);
        } else {
            n_excluded += 1;
        }
    }
    excluded_gate(n_excluded, n_paths, cap)?;
    if payoffs.len() < 2 {
        return Err(Error::invalid(
            "fewer than 2 paths produced a usable payoff — increase n_paths \
             or the time cap",
        ));
    }
    let value = reduce(&payoffs, seed.root_seed)?;
    Ok(PdeEstimate {
        t: 0.0,
        x: x.to_vec(),
        value,
        n_steps: (cap / dt).ceil() as usize,
        n_paths,
        n_excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cauchy::GrowthClass;

    fn unit_interval_problem() -> DirichletProblem {
        DirichletProblem::new(
            Coefficients::brownian(1, 1).unwrap(),
            Domain::interval(-1.0, 1.0).unwrap(),
            ScalarField::new(
                "zero boundary data",
                GrowthClass::Polynomial {
                    l: 1.0,
                    lambda: 0.0,
                },
                |_x: &[f64]| 0.0,
            ),
        )
        .unwrap()
    }

    fn boundary(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> ScalarField {
        ScalarField::new(
            "test boundary data",
            GrowthClass::Polynomial {
                l: 10.0,
                lambda: 1.0,
            },
            f,
        )
    }

    #[test]
    fn interval_domain_reports_membership_and_projects_exactly() {
        let d = Domain::interval(-1.0, 2.0).unwrap();
        assert_eq!(d.dim(), 1);
        assert_eq!(d.bounding_radius(), 2.0);
        assert!(d.contains_point(&[0.0]));
        assert!(!d.contains_point(&[2.0]));
        assert!(!d.contains_point(&[-1.0]));
        assert_eq!(d.boundary_project(&[1.9], &[2.3]), vec![2.0]);
        assert_eq!(d.boundary_project(&[-0.9], &[-1.5]), vec![-1.0]);
    }

    #[test]
    fn ball_projection_lands_on_the_sphere() {
        let d = Domain::ball(3, 2.0).unwrap();
        let p = d.boundary_project(&[0.5, -0.3, 0.1], &[3.0, 1.0, -2.0]);
        let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(!d.contains_point(&p));
        assert!((norm - 2.0).abs() < 1e-12, "norm {norm}");
    }

    #[test]
    fn hyper_box_projection_pins_the_crossing_face() {
        let d = Domain::hyper_box(vec![0.0, 0.5], vec![1.0, 2.0]).unwrap();
        let p = d.boundary_project(&[0.9, 1.0], &[1.5, 1.2]);
        assert_eq!(p[0], 1.0);
        assert!(p[1] > 1.0 && p[1] < 1.2);
        assert!(!d.contains_point(&p));
    }

    #[test]
    fn inconsistent_projector_is_rejected() {
        // Projects to the centre of the interval, which is interior.
        let err = Domain::new(
            "broken projector",
            1,
            1.0,
            |x: &[f64]| x[0].abs() < 1.0,
            |_a: &[f64], _b: &[f64]| vec![0.0],
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)), "{err}");
    }

    #[test]
    fn predicate_inconsistent_with_radius_is_rejected() {
        // Claims a tiny bounding radius; no interior point can be sampled.
        let err = Domain::new(
            "empty inside the bounding ball",
            1,
            1.0,
            |x: &[f64]| x[0] > 5.0 && x[0] < 6.0,
            |_a: &[f64], _b: &[f64]| vec![5.0],
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)), "{err}");
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let err = DirichletProblem::new(
            Coefficients::brownian(1, 1).unwrap(),
            Domain::ball(2, 1.0).unwrap(),
            boundary(|_x| 0.0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)), "{err}");
    }

    #[test]
    fn time_dependent_coefficients_are_rejected() {
        let coeffs = Coefficients::new(
            "drift grows with time",
            1,
            1,
            1.0,
            1.0,
            |t, _x, out| out[0] = t,
            |_t, _x, out| out[0] = 1.0,
        )
        .unwrap();
        let prob = DirichletProblem::new(
            coeffs,
            Domain::interval(-1.0, 1.0).unwrap(),
            boundary(|_x| 0.0),
        )
        .unwrap();
        let err = prob.ellipticity_probe().unwrap_err();
        assert!(err.to_string().contains("time"), "{err}");
    }

    #[test]
    fn degenerate_diffusion_is_rejected() {
        let coeffs = Coefficients::new(
            "pure drift towards the origin",
            1,
            1,
            1.0,
            1.0,
            |_t, x, out| out[0] = -x[0],
            |_t, _x, out| out[0] = 0.0,
        )
        .unwrap();
        let prob = DirichletProblem::new(
            coeffs,
            Domain::interval(-1.0, 1.0).unwrap(),
            boundary(|_x| 0.0),
        )
        .unwrap();
        let err = prob.ellipticity_probe().unwrap_err();
        assert!(err.to_string().contains("degenerate"), "{err}");
    }

    #[test]
    fn negative_discount_is_rejected() {
        let prob = unit_interval_problem().with_discount(ScalarField::new(
            "negative rate",
            GrowthClass::Polynomial {
                l: 1.0,
                lambda: 0.0,
            },
            |_x: &[f64]| -1.0,
        ));
        let err = prob.ellipticity_probe().unwrap_err();
        assert!(err.to_string().contains("non-negative"), "{err}");
    }

    #[test]
    fn exit_requires_an_interior_start() {
        let prob = unit_interval_problem();
        let seed = SeedSpec::new(7, 0);
        assert!(exit_time(&prob, &[1.0], 1e-3, seed, 10.0).is_err());
        assert!(exit_time(&prob, &[2.0], 1e-3, seed, 10.0).is_err());
        assert!(exit_time(&prob, &[0.0], 0.0, seed, 10.0).is_err());
        assert!(exit_time(&prob, &[0.0], 1e-3, seed, -1.0).is_err());
    }

    #[test]
    fn exit_from_a_point_next_to_the_boundary_is_immediate() {
        let prob = unit_interval_problem();
        // With the first Gaussian step pointing right, a start within 1e-12
        // of the endpoint exits during step one and the refined crossing
        // fraction is of order 1e-12 / sqrt(dt).
        let start = 1.0 - 1e-12;
        let mut found = false;
        for stream in 0..8 {
            let s = exit_time(&prob, &[start], 1e-4, SeedSpec::new(41, stream), 10.0).unwrap();
            if s.exit_point == vec![1.0] && s.tau_raw == 1e-4 {
                assert!(s.tau < 1e-9, "refined exit time {} should be tiny", s.tau);
                assert!(!s.capped);
                found = true;
                break;
            }
        }
        assert!(found, "no stream exited right on the first step");
    }

    #[test]
    fn exit_time_is_deterministic() {
        let prob = unit_interval_problem();
        let seed = SeedSpec::new(99, 3);
        let a = exit_time(&prob, &[0.2], 1e-3, seed, 50.0).unwrap();
        let b = exit_time(&prob, &[0.2], 1e-3, seed, 50.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_time_cap_marks_paths_as_capped() {
        let prob = unit_interval_problem();
        let s = exit_time(&prob, &[0.0], 1e-4, SeedSpec::new(5, 0), 3e-4).unwrap();
        assert!(s.capped);
        assert_eq!(s.tau, 3e-4);
        assert_eq!(s.tau_raw, 3e-4);
    }

    #[test]
    fn refined_exit_never_exceeds_the_grid_exit() {
        let prob = unit_interval_problem();
        let dt = 1e-2;
        for stream in 0..50 {
            let s = exit_time(&prob, &[0.5], dt, SeedSpec::new(11, stream), 50.0).unwrap();
            assert!(s.tau <= s.tau_raw, "tau {} > tau_raw {}", s.tau, s.tau_raw);
            assert!(
                s.tau_raw - s.tau <= dt * (1.0 + 1e-12),
                "refinement moved the exit by more than one step"
            );
        }
    }

    #[test]
    fn constant_boundary_data_is_recovered_exactly() {
        let prob = DirichletProblem::new(
            Coefficients::brownian(1, 1).unwrap(),
            Domain::interval(-1.0, 1.0).unwrap(),
            boundary(|_x| 7.0),
        )
        .unwrap();
        let est = dirichlet_solve(&prob, &[0.3], 1e-2, 200, SeedSpec::new(21, 0), None).unwrap();
        assert_eq!(est.value.mean, 7.0);
        assert_eq!(est.value.stderr, 0.0);
        assert_eq!(est.n_excluded, 0);
    }

    #[test]
    fn mean_exit_time_matches_the_interval_law() {
        let prob = unit_interval_problem();
        let stats = exit_time_stats(&prob, &[0.0], 1e-3, 2000, SeedSpec::new(31, 0), None).unwrap();
        // Expected exit time of standard Brownian motion from (-1, 1) is 1;
        // the discrete walk overshoots by O(sqrt(dt)).
        let band = 4.0 * stats.tau.stderr + 0.06;
        assert!(
            (stats.tau.mean - 1.0).abs() <= band,
            "mean {} not within {band} of 1",
            stats.tau.mean
        );
        assert_eq!(stats.n_excluded, 0);
    }

    #[test]
    fn coarser_grids_overshoot_the_exit_time() {
        let prob = unit_interval_problem();
        let coarse = exit_time_stats(
            &prob,
            &[0.0],
            0.04,
            10_000,
            SeedSpec::new(37, 0).child(1),
            None,
        )
        .unwrap();
        let fine = exit_time_stats(
            &prob,
            &[0.0],
            0.01,
            10_000,
            SeedSpec::new(37, 0).child(2),
            None,
        )
        .unwrap();
        assert!(
            coarse.tau_raw.mean > fine.tau_raw.mean,
            "raw exit times should shrink with the step: {} vs {}",
            coarse.tau_raw.mean,
            fine.tau_raw.mean
        );
        assert!(
            coarse.tau.mean > fine.tau.mean,
            "refined exit times should shrink with the step: {} vs {}",
            coarse.tau.mean,
            fine.tau.mean
        );
    }

    #[test]
    fn harmonic_boundary_data_reproduces_the_linear_function() {
        // f(x) = x is harmonic, so the solution equals the starting point.
        let prob = DirichletProblem::new(
            Coefficients::brownian(1, 1).unwrap(),
            Domain::interval(-1.0, 1.0).unwrap(),
            boundary(|x| x[0]),
        )
        .unwrap();
        let est = dirichlet_solve(&prob, &[0.3], 1e-3, 2000, SeedSpec::new(43, 0), None).unwrap();
        let band = 4.0 * est.value.stderr + 0.02;
        assert!(
            (est.value.mean - 0.3).abs() <= band,
            "mean {} not within {band} of 0.3",
            est.value.mean
        );
    }

    #[test]
    fn source_only_solution_is_bitwise_the_mean_exit_time() {
        // With f = 0, h = -1 and no discount the per-path payoff telescopes
        // to the refined exit time itself, so the solver must agree with the
        // exit-time statistics bit for bit on equal seeds.
        let prob = DirichletProblem::new(
            Coefficients::brownian(1, 1).unwrap(),
            Domain::interval(-1.0, 1.0).unwrap(),
            boundary(|_x| 0.0),
        )
        .unwrap()
        .with_source(ScalarField::new(
            "unit running cost",
            GrowthClass::Polynomial {
                l: 1.0,
                lambda: 0.0,
            },
            |_x: &[f64]| -1.0,
        ));
        let seed = SeedSpec::new(47, 0);
        let est = dirichlet_solve(&prob, &[0.5], 1e-3, 500, seed, Some(50.0)).unwrap();
        let stats = exit_time_stats(&prob, &[0.5], 1e-3, 500, seed, Some(50.0)).unwrap();
        assert_eq!(est.value.mean.to_bits(), stats.tau.mean.to_bits());
        assert_eq!(est.value.stderr.to_bits(), stats.tau.stderr.to_bits());
        // And the value matches the closed form 1 - x^2 = 0.75.
        let band = 4.0 * est.value.stderr + 0.06;
        assert!(
            (est.value.mean - 0.75).abs() <= band,
            "mean {}",
            est.value.mean
        );
    }

    #[test]
    fn constant_discount_matches_the_hyperbolic_cosine_law() {
        // For standard Brownian motion on (-1, 1) with unit discount and
        // unit boundary data, u(x) = cosh(x sqrt(2)) / cosh(sqrt(2)).
        let prob = DirichletProblem::new(
            Coefficients::brownian(1, 1).unwrap(),
            Domain::interval(-1.0, 1.0).unwrap(),
            boundary(|_x| 1.0),
        )
        .unwrap()
        .with_discount(ScalarField::new(
            "unit rate",
            GrowthClass::NonNegative,
            |_x: &[f64]| 1.0,
        ));
        let est = dirichlet_solve(&prob, &[0.0], 1e-3, 1500, SeedSpec::new(53, 0), None).unwrap();
        let target = 1.0 / f64::sqrt(2.0).cosh();
        let band = 4.0 * est.value.stderr + 0.02;
        assert!(
            (est.value.mean - target).abs() <= band,
            "mean {} not within {band} of {target}",
            est.value.mean
        );
    }

    #[test]
    fn two_dimensional_disk_mean_exit_time_matches_theory() {
        // u(x) = (1 - |x|^2) / 2 solves the unit-source problem on the unit
        // disk for planar Brownian motion, so u(0) = 1/2.
        let prob = DirichletProblem::new(
            Coefficients::brownian(2, 2).unwrap(),
            Domain::ball(2, 1.0).unwrap(),
            boundary(|_x| 0.0),
        )
        .unwrap()
        .with_source(ScalarField::new(
            "unit running cost",
            GrowthClass::Polynomial {
                l: 1.0,
                lambda: 0.0,
            },
            |_x: &[f64]| -1.0,
        ));
        let est =
            dirichlet_solve(&prob, &[0.0, 0.0], 2e-3, 1500, SeedSpec::new(59, 0), None).unwrap();
        let band = 4.0 * est.value.stderr + 0.05;
        assert!(
            (est.value.mean - 0.5).abs() <= band,
            "mean {} not within {band} of 0.5",
            est.value.mean
        );
    }

    #[test]
    fn default_time_cap_scales_with_the_probe() {
        let prob = unit_interval_problem();
        let probe = prob.ellipticity_probe().unwrap();
        assert_eq!(probe.min_diffusion_scale, 1.0);
        assert_eq!(prob.default_t_cap(&probe), 100.0);
    }

    #[test]
    fn excluded_gate_trips_at_the_threshold() {
        assert!(excluded_gate(0, 1000, 1.0).is_ok());
        assert!(excluded_gate(1, 1001, 1.0).is_ok());
        assert!(excluded_gate(1, 1000, 1.0).is_err());
        assert!(excluded_gate(1, 999, 1.0).is_err());
        let err = excluded_gate(5, 100, 2.5).unwrap_err();
        match err {
            Error::CappedExits {
                n_capped,
                n_paths,
                t_cap,
                ..
            } => {
                assert_eq!((n_capped, n_paths), (5, 100));
                assert_eq!(t_cap, 2.5);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn solver_reports_capped_paths_as_a_hard_error() {
        let prob = unit_interval_problem();
        // A cap of one step leaves essentially every path capped.
        let err = dirichlet_solve(&prob, &[0.0], 1e-3, 100, SeedSpec::new(61, 0), Some(1e-3))
            .unwrap_err();
        assert!(matches!(err, Error::CappedExits { .. }), "{err}");
    }
}
