//! Time partitions of a simulation interval, with mesh bookkeeping.

use crate::error::{Error, Result};

/// An ordered partition `t0 < t1 < ... < T` of a time interval.
///
/// Points are stored as absolute times rather than accumulated deltas so
/// that nested refinements never pick up rounding drift; the mesh (largest
/// spacing) is cached at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
    mesh: f64,
}

impl TimeGrid {
    /// Builds a grid from explicit points.
    ///
    /// # Errors
    /// `InvalidArgument` if fewer than 2 points are given, any point is
    /// non-finite, the points are not strictly increasing, or two
    /// consecutive points are closer than `1e-15 * (T - t0)` (degenerate
    /// spacing that would starve increment variances).
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("a time grid needs at least 2 points"));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("time grid points must be finite"));
        }
        let span = points[points.len() - 1] - points[0];
        if span <= 0.0 {
            return Err(Error::invalid("time grid must end after it starts"));
        }
        let min_gap = 1e-15 * span;
        let mut mesh = 0.0f64;
        for w in points.windows(2) {
            let gap = w[1] - w[0];
            if gap <= min_gap {
                return Err(Error::invalid(format!(
                    "grid points {} and {} are closer than 1e-15 of the span",
                    w[0], w[1]
                )));
            }
            mesh = mesh.max(gap);
        }
        Ok(TimeGrid { points, mesh })
    }

    /// The grid points, strictly increasing.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// First grid point.
    pub fn t0(&self) -> f64 {
        self.points[0]
    }

    /// Last grid point.
    pub fn t_end(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Largest spacing between consecutive points.
    pub fn mesh(&self) -> f64 {
        self.mesh
    }

    /// Number of grid points (always `n_steps() + 1`).
    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// True only for the impossible empty grid; present for API hygiene.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of intervals.
    pub fn n_steps(&self) -> usize {
        self.points.len() - 1
    }

    /// Spacing of interval `k`, i.e. `t[k+1] - t[k]`.
    pub fn dt(&self, k: usize) -> f64 {
        self.points[k + 1] - self.points[k]
    }

    /// Index of the grid point equal to `t`, if any.
    ///
    /// Lookup is by binary search with an absolute tolerance of
    /// `1e-12 * (T - t0)`, so times reconstructed by ordinary arithmetic
    /// still match their grid point.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-12 * (self.t_end() - self.t0());
        match self
            .points
            .binary_search_by(|p| p.partial_cmp(&t).expect("grid points are finite"))
        {
            Ok(i) => Some(i),
            Err(i) => {
                if i < self.points.len() && (self.points[i] - t).abs() <= tol {
                    Some(i)
                } else if i > 0 && (self.points[i - 1] - t).abs() <= tol {
                    Some(i - 1)
                } else {
                    None
                }
            }
        }
    }

    /// The grid with every interval halved: all original points plus each
    /// interval's midpoint. The original points are preserved bit-for-bit.
    pub fn refine_dyadic(&self) -> TimeGrid {
        let mut points = Vec::with_capacity(2 * self.points.len() - 1);
        for w in self.points.windows(2) {
            points.push(w[0]);
            points.push(0.5 * (w[0] + w[1]));
        }
        points.push(self.t_end());
        TimeGrid::new(points).expect("halving a valid grid keeps it valid")
    }

    /// True if every point of `other` also lies on this grid (used to check
    /// that refinements nest).
    pub fn contains_grid(&self, other: &TimeGrid) -> bool {
        other.points.iter().all(|&t| self.index_of(t).is_some())
    }
}

/// Equally spaced grid with `n_steps` intervals on `[t0, t_end]`.
///
/// Point `k` is computed directly as `t0 + (t_end - t0) * k / n_steps`
/// (no running sum), and the last point is exactly `t_end`.
///
/// # Errors
/// `InvalidArgument` if `t_end <= t0`, `n_steps == 0`, or an endpoint is
/// non-finite.
pub fn make_uniform_grid(t0: f64, t_end: f64, n_steps: usize) -> Result<TimeGrid> {
    if !t0.is_finite() || !t_end.is_finite() {
        return Err(Error::invalid("grid endpoints must be finite"));
    }
    if t_end <= t0 {
        return Err(Error::invalid(format!(
            "grid needs t_end > t0, got [{t0}, {t_end}]"
        )));
    }
    if n_steps == 0 {
        return Err(Error::invalid("grid needs at least one step"));
    }
    let span = t_end - t0;
    let mut points: Vec<f64> = (0..n_steps)
        .map(|k| t0 + span * (k as f64 / n_steps as f64))
        .collect();
    points.push(t_end);
    TimeGrid::new(points)
}
