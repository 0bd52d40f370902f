//! Monte Carlo reduction (means, standard errors) and convergence-order
//! fitting, built on a deterministic compensated summation.
//!
//! Reductions are always a single sequential pass over per-stream results
//! buffered in ascending `stream_id` order. Parallelism only affects who
//! computes each buffered entry, never the accumulation order, so the same
//! inputs give bit-identical estimates on any thread count.

use crate::error::{Error, Result};
use crate::rng::SeedSpec;
use rayon::prelude::*;

/// Sample mean with its standard error and reproduction metadata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    /// Sample mean.
    pub mean: f64,
    /// Sample standard deviation divided by sqrt(n).
    pub stderr: f64,
    /// Number of samples reduced.
    pub n_samples: usize,
    /// Root seed of the stream family that produced the samples.
    pub root_seed: u64,
}

impl McEstimate {
    /// True if `target` lies within `k` standard errors of the mean.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }

    /// Central 95% confidence interval, `mean +/- 1.96 stderr`.
    pub fn ci95(&self) -> (f64, f64) {
        (
            self.mean - 1.96 * self.stderr,
            self.mean + 1.96 * self.stderr,
        )
    }
}

/// Error levels measured at several resolutions, with the fitted power-law
/// order `error ~ resolution^order`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    /// `(resolution, error)` pairs sorted by decreasing resolution.
    pub levels: Vec<(f64, f64)>,
    /// Least-squares slope of `log(error)` against `log(resolution)`.
    pub fitted_order: f64,
    /// Root-mean-square deviation of the log-log fit.
    pub fit_residual: f64,
}

/// Deterministic compensated total of `values` in index order.
///
/// The sum is a fixed binary tree: ranges split at their midpoint down to
/// blocks of at most 32 elements, which are accumulated with Neumaier
/// compensation; partial sums are merged upward with exact two-sum steps so
/// the compensation survives block boundaries. The result is a pure function
/// of the ordered input and exact to a few ulps even under heavy
/// cancellation.
pub fn compensated_sum(values: &[f64]) -> f64 {
    compensated_sum_by(values.len(), &|i| values[i])
}

/// Same tree sum over `f(0), ..., f(n-1)` without materialising the values.
pub fn compensated_sum_by(n: usize, f: &(impl Fn(usize) -> f64 + ?Sized)) -> f64 {
    /// Knuth's exact addition: returns `(s, e)` with `s = fl(a + b)` and
    /// `a + b = s + e` exactly.
    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    /// Sum over `[lo, hi)` as a principal part plus accumulated error.
    fn block(lo: usize, hi: usize, f: &(impl Fn(usize) -> f64 + ?Sized)) -> (f64, f64) {
        if hi - lo <= 32 {
            // Neumaier variant of Kahan summation, compensation kept apart.
            let mut sum = 0.0f64;
            let mut comp = 0.0f64;
            for i in lo..hi {
                let x = f(i);
                let t = sum + x;
                if sum.abs() >= x.abs() {
                    comp += (sum - t) + x;
                } else {
                    comp += (x - t) + sum;
                }
                sum = t;
            }
            (sum, comp)
        } else {
            let mid = lo + (hi - lo) / 2;
            let (s1, e1) = block(lo, mid, f);
            let (s2, e2) = block(mid, hi, f);
            let (s, e) = two_sum(s1, s2);
            (s, e + e1 + e2)
        }
    }

    if n == 0 {
        0.0
    } else {
        let (sum, err) = block(0, n, f);
        sum + err
    }
}

/// Reduces samples (already in canonical ascending-stream order) to a mean
/// and standard error. `root_seed` is carried along as provenance so the
/// estimate records how to regenerate its inputs.
///
/// # Errors
/// `InvalidArgument` for fewer than 2 samples or any non-finite sample
/// (divergent paths must be handled by the caller, never averaged).
pub fn reduce(samples: &[f64], root_seed: u64) -> Result<McEstimate> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::invalid("reduction needs at least 2 samples"));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite sample in reduction"));
    }
    let mean = compensated_sum(samples) / n as f64;
    let ss = compensated_sum_by(n, &|i| {
        let d = samples[i] - mean;
        d * d
    });
    let var = ss / (n - 1) as f64;
    let stderr = (var / n as f64).sqrt();
    Ok(McEstimate {
        mean,
        stderr,
        n_samples: n,
        root_seed,
    })
}

/// Fits `error ~ resolution^order` by least squares in log-log coordinates.
///
/// Levels are sorted by decreasing resolution before fitting; the residual
/// is the RMS deviation of `log(error)` from the fitted line.
///
/// # Errors
/// `InvalidArgument` for fewer than 3 levels or non-finite/non-positive
/// resolutions; `DegenerateFit` if any error is exactly 0 (an exact level
/// means the comparison oracle leaked into the method — the caller must drop
/// it explicitly) or if all resolutions coincide.
pub fn fit_order(levels: &[(f64, f64)]) -> Result<ConvergenceReport> {
    if levels.len() < 3 {
        return Err(Error::invalid("order fit needs at least 3 levels"));
    }
    for &(res, err) in levels {
        if !(res.is_finite() && res > 0.0) {
            return Err(Error::invalid(format!("bad resolution {res}")));
        }
        if !err.is_finite() || err < 0.0 {
            return Err(Error::invalid(format!("bad error value {err}")));
        }
        if err == 0.0 {
            return Err(Error::DegenerateFit(format!(
                "error at resolution {res} is exactly zero"
            )));
        }
    }
    let mut sorted = levels.to_vec();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite resolutions"));

    let xs: Vec<f64> = sorted.iter().map(|&(r, _)| r.ln()).collect();
    let ys: Vec<f64> = sorted.iter().map(|&(_, e)| e.ln()).collect();
    let (intercept, slope) = fit_affine(&xs, &ys)?;
    let n = xs.len() as f64;
    let ss = compensated_sum_by(xs.len(), &|i| {
        let d = ys[i] - (intercept + slope * xs[i]);
        d * d
    });
    Ok(ConvergenceReport {
        levels: sorted,
        fitted_order: slope,
        fit_residual: (ss / n).sqrt(),
    })
}

/// Ordinary least squares line `y = intercept + slope * x`.
///
/// # Errors
/// `InvalidArgument` for fewer than 2 points; `DegenerateFit` if the xs
/// have no spread.
pub fn fit_affine(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid("affine fit needs >= 2 (x, y) pairs"));
    }
    let n = xs.len() as f64;
    let mean_x = compensated_sum(xs) / n;
    let mean_y = compensated_sum(ys) / n;
    let sxx = compensated_sum_by(xs.len(), &|i| (xs[i] - mean_x) * (xs[i] - mean_x));
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all x values coincide".into()));
    }
    let sxy = compensated_sum_by(xs.len(), &|i| (xs[i] - mean_x) * (ys[i] - mean_y));
    let slope = sxy / sxx;
    Ok((mean_y - slope * mean_x, slope))
}

/// Runs `per_stream` once for each of the streams `0..n` of `seed`'s root,
/// possibly in parallel, and returns the outputs in ascending stream order.
///
/// This is the only sanctioned way to fan path work out to threads: the
/// buffer order (and therefore any later reduction) is independent of the
/// worker schedule.
pub fn sample_streams<T, F>(n: usize, seed: SeedSpec, per_stream: F) -> Vec<T>
where
    T: Send,
    F: Fn(SeedSpec) -> T + Sync,
{
    (0..n as u64)
        .into_par_iter()
        .map(|i| per_stream(seed.with_stream(i)))
        .collect()
}

/// [`sample_streams`] followed by [`reduce`]: one scalar sample per stream,
/// reduced in canonical order.
///
/// # Errors
/// As [`reduce`]; note a non-finite sample is an error here — use
/// [`sample_streams`] directly when failures need per-path handling.
pub fn reduce_streams<F>(n: usize, seed: SeedSpec, per_stream: F) -> Result<McEstimate>
where
    F: Fn(SeedSpec) -> f64 + Sync,
{
    let samples = sample_streams(n, seed, per_stream);
    reduce(&samples, seed.root_seed)
}
