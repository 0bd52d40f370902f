//! ito-lab: a stochastic-calculus engine.
//!
//! Simulates Brownian motion and Itô SDEs, statistically verifies the core
//! identities of the Itô calculus, and solves parabolic and elliptic PDE
//! problems by Monte Carlo — all with bit-reproducible seeded parallelism.
//!
//! | module | contents |
//! |--------|----------|
//! | [`grid`] | time partitions with mesh bookkeeping |
//! | [`rng`] | splittable seeded streams, inverse-CDF Gaussian sampling |
//! | [`brownian`] | Brownian paths and dyadic bridge refinement |
//! | [`estimators`] | deterministic Monte Carlo reduction, order fitting |
//! | [`ito`] | Itô integrals, quadratic/total variation, law checks |
//! | [`sde`] | Euler–Maruyama and Picard SDE solvers, diagnostics |
//! | [`diffusion`] | drift/diffusion recovery and generator consistency |
//! | [`cauchy`] | backward Kolmogorov / Feynman–Kac Monte Carlo solvers |
//! | [`dirichlet`] | exit times and elliptic boundary problems |

pub mod brownian;
pub mod cauchy;
pub mod diffusion;
pub mod dirichlet;
pub mod error;
pub mod estimators;
pub mod grid;
pub mod ito;
pub mod rng;
pub mod sde;

pub use brownian::{refine_dyadic, restrict_stride, sample_path, BrownianPath};
pub use cauchy::{
    feynman_kac_solve, kolmogorov_solve, richardson_calibrated, CalibratedEstimate, CauchyProblem,
    GrowthClass, PdeEstimate, ScalarField, SpaceTimeField,
};
pub use diffusion::{
    apply_generator, check_generator_limit, estimate_drift_diffusion, DriftDiffusionEstimate,
    GeneratorInput, GeneratorLimitCheck,
};
pub use dirichlet::{
    dirichlet_solve, exit_time, exit_time_stats, DirichletProblem, Domain, EllipticityProbe,
    ExitSample, ExitStats,
};
pub use error::{Error, Result};
pub use estimators::{
    compensated_sum, fit_order, reduce, sample_streams, ConvergenceReport, McEstimate,
};
pub use grid::{make_uniform_grid, TimeGrid};
pub use ito::{
    check_isometry, check_maximal_inequalities, ito_integral, moment_inequality_constant,
    quadratic_variation, stopped_integral, total_variation, AdaptedProcess, IsometryCheck, ItoSum,
    MaximalCheck, PathPrefix,
};
pub use rng::{inverse_normal_cdf, SeedSpec, StreamRng};
pub use sde::{
    coupled_initial_condition_gap, euler_maruyama, moment_probe, picard_solve, picard_solve_from,
    strong_order_study, uniqueness_check, Coefficients, EmStepper, MomentProbe, PicardSolution,
    SdeProblem, SolutionPath, SpotCheck,
};
