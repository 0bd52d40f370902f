//! Checks of the parabolic and elliptic Monte Carlo solvers against problems
//! with closed-form solutions, plus validation of the generator machinery on
//! functions that solve the associated PDEs exactly.

use ito_lab::{
    apply_generator, dirichlet_solve, estimate_drift_diffusion, exit_time_stats, feynman_kac_solve,
    kolmogorov_solve, richardson_calibrated, CauchyProblem, Coefficients, DirichletProblem, Domain,
    GeneratorInput, GrowthClass, ScalarField, SeedSpec, SpaceTimeField,
};

fn square_payoff() -> ScalarField {
    ScalarField::new(
        "square",
        GrowthClass::Polynomial {
            l: 1.0,
            lambda: 2.0,
        },
        |x: &[f64]| x[0] * x[0],
    )
}

fn identity_payoff() -> ScalarField {
    ScalarField::new(
        "identity",
        GrowthClass::Polynomial {
            l: 1.0,
            lambda: 1.0,
        },
        |x: &[f64]| x[0],
    )
}

fn constant_payoff(c: f64) -> ScalarField {
    ScalarField::new(
        format!("constant {c}"),
        GrowthClass::Polynomial {
            l: c.abs(),
            lambda: 0.0,
        },
        move |_: &[f64]| c,
    )
}

#[test]
fn heat_equation_square_payoff_matches_the_closed_form() {
    // u(t, x) = x^2 + (T - t) for the driftless unit-diffusion process, so
    // u(0, 1) = 2 over a unit horizon.
    let prob =
        CauchyProblem::new(Coefficients::brownian(1, 1).unwrap(), 1.0, square_payoff()).unwrap();
    let calibrated = richardson_calibrated(1.0, 256, SeedSpec::new(0xe001, 0), |n, s| {
        kolmogorov_solve(&prob, 0.0, &[1.0], n, 50_000, s)
    })
    .unwrap();
    let gap = (calibrated.estimate.value.mean - 2.0).abs();
    assert!(
        gap <= calibrated.band,
        "heat solution {} misses 2.0 by {gap} > band {}",
        calibrated.estimate.value.mean,
        calibrated.band
    );
}

#[test]
fn geometric_growth_terminal_mean_matches_the_exponential() {
    let beta = 0.05;
    let prob = CauchyProblem::new(
        Coefficients::geometric_brownian(beta, 0.2).unwrap(),
        1.0,
        identity_payoff(),
    )
    .unwrap();
    let calibrated = richardson_calibrated(1.0, 256, SeedSpec::new(0xe002, 0), |n, s| {
        kolmogorov_solve(&prob, 0.0, &[1.0], n, 50_000, s)
    })
    .unwrap();
    let target = beta.exp();
    let gap = (calibrated.estimate.value.mean - target).abs();
    assert!(
        gap <= calibrated.band,
        "terminal mean {} misses {target} by {gap} > band {}",
        calibrated.estimate.value.mean,
        calibrated.band
    );
}

#[test]
fn constant_discount_collapses_to_a_deterministic_exponential() {
    // With f = 1 and c = 1 every path carries the same weight, so the
    // estimate is exp(-(T - t)) up to accumulated rounding and the spread
    // across paths is zero.
    let prob = CauchyProblem::new(
        Coefficients::brownian(1, 1).unwrap(),
        1.0,
        constant_payoff(1.0),
    )
    .unwrap()
    .with_discount(SpaceTimeField::constant(1.0));
    let est =
        feynman_kac_solve(&prob, 0.0, &[0.0], 1 << 10, 4_000, SeedSpec::new(0xe003, 0)).unwrap();
    assert!(
        (est.value.mean - (-1.0f64).exp()).abs() <= 1e-9,
        "discounted value {}",
        est.value.mean
    );
    assert!(est.value.stderr <= 1e-15, "stderr {}", est.value.stderr);
}

#[test]
fn constant_source_collapses_to_its_time_integral() {
    // With f = 0, no discount, and source rate 2 over half a unit of time
    // every path accumulates exactly -1.
    let prob = CauchyProblem::new(
        Coefficients::brownian(1, 1).unwrap(),
        1.0,
        constant_payoff(0.0),
    )
    .unwrap()
    .with_source(SpaceTimeField::constant(2.0));
    let est =
        feynman_kac_solve(&prob, 0.5, &[0.0], 1 << 10, 4_000, SeedSpec::new(0xe004, 0)).unwrap();
    assert!(
        (est.value.mean + 1.0).abs() <= 1e-12,
        "sourced value {}",
        est.value.mean
    );
    assert!(est.value.stderr <= 1e-15, "stderr {}", est.value.stderr);
}

#[test]
fn zero_fields_reduce_the_weighted_solver_to_the_plain_one() {
    let plain =
        CauchyProblem::new(Coefficients::brownian(1, 1).unwrap(), 1.0, square_payoff()).unwrap();
    let dressed = CauchyProblem::new(Coefficients::brownian(1, 1).unwrap(), 1.0, square_payoff())
        .unwrap()
        .with_discount(SpaceTimeField::constant(0.0))
        .with_source(SpaceTimeField::constant(0.0));

    let seed = SeedSpec::new(0xe005, 0);
    let a = kolmogorov_solve(&plain, 0.0, &[1.0], 256, 2_000, seed).unwrap();
    let b = feynman_kac_solve(&dressed, 0.0, &[1.0], 256, 2_000, seed).unwrap();
    assert_eq!(a.value.mean.to_bits(), b.value.mean.to_bits());
    assert_eq!(a.value.stderr.to_bits(), b.value.stderr.to_bits());
}

#[test]
fn generator_annihilates_solutions_of_the_backward_equation() {
    // v(t, x) = x^2 + (T - t) solves v_t + A v = 0 for the driftless
    // unit-diffusion generator A = (1/2) d^2/dx^2.
    let coeffs = Coefficients::brownian(1, 1).unwrap();
    let v = GeneratorInput::new(
        "heat polynomial",
        1,
        |t, x: &[f64]| x[0] * x[0] + (1.0 - t),
        |_t, _x| -1.0,
        |_t, x, out: &mut [f64]| out[0] = 2.0 * x[0],
        |_t, _x, out: &mut [f64]| out[0] = 2.0,
        2.0,
        2.0,
    )
    .unwrap();
    for i in 0..20 {
        let t = (i as f64) / 20.0;
        let x = -2.0 + 4.0 * ((i as f64) * 0.618_033_988_749_895).fract();
        let value = apply_generator(&coeffs, &v, t, &[x]).unwrap();
        assert!(value.abs() < 1e-6, "residual {value} at t={t}, x={x}");
    }

    // v(t, x) = x e^{beta (T - t)} solves the same equation for geometric
    // growth with rate beta.
    let beta = 0.05;
    let coeffs = Coefficients::geometric_brownian(beta, 0.4).unwrap();
    let v = GeneratorInput::new(
        "discounted identity",
        1,
        move |t, x: &[f64]| x[0] * (beta * (1.0 - t)).exp(),
        move |t, x| -beta * x[0] * (beta * (1.0 - t)).exp(),
        move |t, _x, out: &mut [f64]| out[0] = (beta * (1.0 - t)).exp(),
        |_t, _x, out: &mut [f64]| out[0] = 0.0,
        1.1,
        1.0,
    )
    .unwrap();
    for i in 0..20 {
        let t = (i as f64) / 20.0;
        let x = 0.2 + 2.0 * ((i as f64) * 0.618_033_988_749_895).fract();
        let value = apply_generator(&coeffs, &v, t, &[x]).unwrap();
        assert!(value.abs() < 1e-6, "residual {value} at t={t}, x={x}");
    }
}

#[test]
fn local_coefficients_are_recovered_from_short_time_increments() {
    let coeffs = Coefficients::geometric_brownian(0.3, 0.5).unwrap();
    let x = 1.5;
    let est = estimate_drift_diffusion(&coeffs, 0.0, &[x], 1e-3, 50_000, SeedSpec::new(0xe006, 0))
        .unwrap();
    // Small-h bias is O(h); at h = 1e-3 it is far below the noise floor.
    assert!(
        est.drift[0].within(0.3 * x, 4.0),
        "drift {} +- {}",
        est.drift[0].mean,
        est.drift[0].stderr
    );
    let a_target = 0.5f64.powi(2) * x * x;
    let bias_allowance = 0.02 * a_target * est.h;
    assert!(
        (est.diffusion[0].mean - a_target).abs() <= 4.0 * est.diffusion[0].stderr + bias_allowance,
        "diffusion {} +- {} vs {a_target}",
        est.diffusion[0].mean,
        est.diffusion[0].stderr
    );
}

#[test]
fn interval_exit_times_match_the_parabola() {
    let domain = Domain::interval(-1.0, 1.0).unwrap();
    let prob = DirichletProblem::new(
        Coefficients::brownian(1, 1).unwrap(),
        domain,
        constant_payoff(0.0),
    )
    .unwrap();
    let dt = 5e-4;
    for (x, expected) in [(0.0, 1.0), (0.5, 0.75)] {
        let stats = exit_time_stats(
            &prob,
            &[x],
            dt,
            4_000,
            SeedSpec::new(0xe007, x.to_bits()),
            None,
        )
        .unwrap();
        // Discrete monitoring misses sub-step excursions, which biases the
        // exit time upward by O(sqrt(dt)) even after the crossing step is
        // refined by bisection.
        let band = 4.0 * stats.tau.stderr + 3.0 * dt.sqrt();
        assert!(
            (stats.tau.mean - expected).abs() <= band,
            "mean exit from {x}: {} +- {} vs {expected}",
            stats.tau.mean,
            stats.tau.stderr
        );
        assert_eq!(stats.n_excluded, 0);
        assert!(
            stats.tau_raw.mean >= stats.tau.mean,
            "refinement must not increase the exit time"
        );
    }
}

#[test]
fn harmonic_boundary_data_is_reproduced_inside_the_interval() {
    // f(x) = x is harmonic, so u(x) = x everywhere in (-1, 1).
    let domain = Domain::interval(-1.0, 1.0).unwrap();
    let prob = DirichletProblem::new(
        Coefficients::brownian(1, 1).unwrap(),
        domain,
        identity_payoff(),
    )
    .unwrap();
    let dt = 2e-4;
    let est = dirichlet_solve(&prob, &[-0.4], dt, 4_000, SeedSpec::new(0xe008, 0), None).unwrap();
    let band = 4.0 * est.value.stderr + 3.0 * dt.sqrt();
    assert!(
        (est.value.mean + 0.4).abs() <= band,
        "harmonic value {} +- {}",
        est.value.mean,
        est.value.stderr
    );
    assert_eq!(est.n_excluded, 0);
}

#[test]
fn disk_mean_exit_time_matches_the_radial_solution() {
    // -A u = 1 with zero boundary data on the unit disk has
    // u(x) = (1 - |x|^2) / 2; the solver sees it as boundary data 0 with
    // source rate -1.
    let domain = Domain::ball(2, 1.0).unwrap();
    let prob = DirichletProblem::new(
        Coefficients::brownian(2, 2).unwrap(),
        domain,
        ScalarField::new(
            "zero",
            GrowthClass::Polynomial {
                l: 0.0,
                lambda: 0.0,
            },
            |_: &[f64]| 0.0,
        ),
    )
    .unwrap()
    .with_source(ScalarField::new(
        "negative unit rate",
        GrowthClass::Polynomial {
            l: 1.0,
            lambda: 0.0,
        },
        |_: &[f64]| -1.0,
    ));
    let dt = 2e-4;
    let est = dirichlet_solve(
        &prob,
        &[0.5, 0.0],
        dt,
        3_000,
        SeedSpec::new(0xe009, 0),
        None,
    )
    .unwrap();
    let band = 4.0 * est.value.stderr + 3.0 * dt.sqrt();
    assert!(
        (est.value.mean - 0.375).abs() <= band,
        "disk value {} +- {} vs 0.375",
        est.value.mean,
        est.value.stderr
    );
    assert_eq!(est.n_excluded, 0);
}

#[test]
fn estimates_obey_the_maximum_principle() {
    // With boundary data x^3 on (-1, 1) and no source the solution is
    // bounded by the boundary extremes, so the estimate stays inside
    // [-1, 1] up to sampling noise.
    let domain = Domain::interval(-1.0, 1.0).unwrap();
    let prob = DirichletProblem::new(
        Coefficients::brownian(1, 1).unwrap(),
        domain,
        ScalarField::new(
            "cubic",
            GrowthClass::Polynomial {
                l: 1.0,
                lambda: 3.0,
            },
            |x: &[f64]| x[0].powi(3),
        ),
    )
    .unwrap();
    let est = dirichlet_solve(&prob, &[0.3], 1e-3, 4_000, SeedSpec::new(0xe00a, 0), None).unwrap();
    let slack = 4.0 * est.value.stderr + 1e-9;
    assert!(
        est.value.mean.abs() <= 1.0 + slack,
        "estimate {} escapes the boundary range",
        est.value.mean
    );
    assert_eq!(est.n_excluded, 0);
}
