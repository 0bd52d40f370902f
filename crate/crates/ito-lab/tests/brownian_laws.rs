//! Distributional laws of the Brownian sampler, the bridge refinement, and
//! the stride restriction, checked against closed-form moments.

use ito_lab::{make_uniform_grid, reduce, refine_dyadic, restrict_stride, sample_path, SeedSpec};
use statrs::distribution::{ContinuousCDF, Normal};

/// Draws `n_paths` scalar paths on a fresh grid and maps each to a statistic.
fn per_path(
    n_steps: usize,
    n_paths: usize,
    root_seed: u64,
    f: impl Fn(&ito_lab::BrownianPath) -> f64,
) -> Vec<f64> {
    let grid = make_uniform_grid(0.0, 1.0, n_steps).unwrap();
    (0..n_paths)
        .map(|i| {
            let path = sample_path(&grid, 1, SeedSpec::new(root_seed, i as u64)).unwrap();
            f(&path)
        })
        .collect()
}

#[test]
fn terminal_value_has_zero_mean_and_unit_variance() {
    let n = 4000;
    let samples = per_path(64, n, 0xb001, |p| p.scalar(p.grid().len() - 1));
    let est = reduce(&samples, 0xb001).unwrap();
    assert!(
        est.within(0.0, 4.0),
        "terminal mean {} +- {}",
        est.mean,
        est.stderr
    );
    let squares: Vec<f64> = samples.iter().map(|w| w * w).collect();
    let var = reduce(&squares, 0xb001).unwrap();
    assert!(
        var.within(1.0, 4.0),
        "terminal variance {} +- {}",
        var.mean,
        var.stderr
    );
}

#[test]
fn covariance_equals_the_earlier_time() {
    let n = 4000;
    let products = per_path(64, n, 0xb002, |p| {
        let i = p.grid().index_of(0.25).unwrap();
        let j = p.grid().index_of(0.75).unwrap();
        p.scalar(i) * p.scalar(j)
    });
    let est = reduce(&products, 0xb002).unwrap();
    assert!(
        est.within(0.25, 4.0),
        "covariance {} +- {}",
        est.mean,
        est.stderr
    );
}

#[test]
fn increments_over_disjoint_windows_are_uncorrelated() {
    let n = 4000;
    let products = per_path(64, n, 0xb003, |p| {
        let g = p.grid();
        let (a, b) = (g.index_of(0.25).unwrap(), g.index_of(0.5).unwrap());
        let (c, d) = (g.index_of(0.75).unwrap(), g.index_of(1.0).unwrap());
        (p.scalar(b) - p.scalar(a)) * (p.scalar(d) - p.scalar(c))
    });
    let est = reduce(&products, 0xb003).unwrap();
    assert!(
        est.within(0.0, 4.0),
        "disjoint increment correlation {} +- {}",
        est.mean,
        est.stderr
    );
}

#[test]
fn components_of_a_vector_path_are_independent() {
    let grid = make_uniform_grid(0.0, 1.0, 64).unwrap();
    let products: Vec<f64> = (0..4000)
        .map(|i| {
            let path = sample_path(&grid, 2, SeedSpec::new(0xb004, i)).unwrap();
            let end = path.value(grid.len() - 1);
            end[0] * end[1]
        })
        .collect();
    let est = reduce(&products, 0xb004).unwrap();
    assert!(
        est.within(0.0, 4.0),
        "cross-component correlation {} +- {}",
        est.mean,
        est.stderr
    );
}

#[test]
fn terminal_distribution_passes_a_kolmogorov_smirnov_test() {
    let n = 2000usize;
    let mut samples = per_path(32, n, 0xb005, |p| p.scalar(p.grid().len() - 1));
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut d_stat = 0.0f64;
    for (i, w) in samples.iter().enumerate() {
        let cdf = normal.cdf(*w);
        let hi = (i + 1) as f64 / n as f64 - cdf;
        let lo = cdf - i as f64 / n as f64;
        d_stat = d_stat.max(hi).max(lo);
    }
    // Asymptotic Kolmogorov distribution: the 99.9% quantile is 1.949.
    let scaled = d_stat * (n as f64).sqrt();
    assert!(scaled < 1.949, "KS statistic {scaled} rejects normality");
}

#[test]
fn bridge_refinement_preserves_existing_points_bitwise() {
    let grid = make_uniform_grid(0.0, 1.0, 16).unwrap();
    let seed = SeedSpec::new(0xb006, 0);
    let path = sample_path(&grid, 2, seed).unwrap();
    let fine = refine_dyadic(&path, seed.child(1));
    for k in 0..grid.len() {
        assert_eq!(path.value(k), fine.value(2 * k), "coarse point {k} moved");
    }
    // Restricting the refined path recovers the original exactly.
    let back = restrict_stride(&fine, 2).unwrap();
    assert_eq!(back.grid().points(), path.grid().points());
    for k in 0..grid.len() {
        assert_eq!(back.value(k), path.value(k));
    }
}

#[test]
fn bridge_midpoints_follow_the_conditional_law() {
    // Conditioned on the endpoints, the refined midpoint of a unit interval
    // is the endpoint average plus independent noise of variance 1/4.
    let grid = make_uniform_grid(0.0, 1.0, 1).unwrap();
    let residuals: Vec<f64> = (0..4000)
        .map(|i| {
            // `child` folds its salt into the root seed, so chaining it is
            // the way to derive unrelated per-path refinement streams.
            let seed = SeedSpec::new(0xb007, 0).child(i);
            let path = sample_path(&grid, 1, seed).unwrap();
            let fine = refine_dyadic(&path, seed.child(1));
            fine.scalar(1) - 0.5 * (path.scalar(0) + path.scalar(1))
        })
        .collect();
    let mean = reduce(&residuals, 0xb007).unwrap();
    assert!(
        mean.within(0.0, 4.0),
        "midpoint residual mean {} +- {}",
        mean.mean,
        mean.stderr
    );
    let squares: Vec<f64> = residuals.iter().map(|r| r * r).collect();
    let var = reduce(&squares, 0xb007).unwrap();
    assert!(
        var.within(0.25, 4.0),
        "midpoint residual variance {} +- {}",
        var.mean,
        var.stderr
    );
}

#[test]
fn restriction_keeps_the_terminal_value_and_the_law() {
    let grid = make_uniform_grid(0.0, 1.0, 1024).unwrap();
    let quarters: Vec<f64> = (0..4000)
        .map(|i| {
            let path = sample_path(&grid, 1, SeedSpec::new(0xb008, i)).unwrap();
            let coarse = restrict_stride(&path, 4).unwrap();
            assert_eq!(
                coarse.scalar(coarse.grid().len() - 1).to_bits(),
                path.scalar(grid.len() - 1).to_bits(),
                "restriction moved the terminal value"
            );
            let k = coarse.grid().index_of(0.25).unwrap();
            coarse.scalar(k)
        })
        .collect();
    let squares: Vec<f64> = quarters.iter().map(|w| w * w).collect();
    let var = reduce(&squares, 0xb008).unwrap();
    assert!(
        var.within(0.25, 4.0),
        "restricted quarter-time variance {} +- {}",
        var.mean,
        var.stderr
    );
}
