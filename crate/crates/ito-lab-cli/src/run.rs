//! Command implementations: each resolves defaults, calls into the library,
//! and renders one or more CSV rows plus a one-line summary.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use ito_lab::{
    check_generator_limit, check_isometry, check_maximal_inequalities, dirichlet_solve,
    estimate_drift_diffusion, euler_maruyama, feynman_kac_solve, fit_order, ito_integral,
    kolmogorov_solve, make_uniform_grid, picard_solve, quadratic_variation, reduce, sample_path,
    sample_streams, strong_order_study, AdaptedProcess, GeneratorInput, McEstimate, SdeProblem,
    SeedSpec,
};

use crate::config::{CliError, CliResult, CommandKind, RunConfig};
use crate::output::Row;
use crate::presets;

/// Seed for the coefficient spot-check (a fixed stream, so warnings are
/// reproducible and never perturb the estimate streams).
const SPOT_CHECK_SEED: u64 = 0x73_70_6f_74;

/// Probing horizons for the generator difference quotient.
const GENERATOR_HORIZONS: [f64; 3] = [0.1, 0.05, 0.025];

pub struct Outcome {
    pub rows: Vec<Row>,
    pub summary: String,
    pub warnings: Vec<String>,
}

pub fn execute(cfg: &RunConfig) -> CliResult<Outcome> {
    match cfg.command {
        CommandKind::Simulate => ensemble_terminal(cfg, Method::Euler),
        CommandKind::SdeSolve => {
            let method = match get_str(cfg, "method", "euler")?.as_str() {
                "euler" => Method::Euler,
                "picard" => Method::Picard,
                other => {
                    return Err(CliError::config(format!(
                        "unknown method {other:?}; valid methods: euler, picard"
                    )))
                }
            };
            ensemble_terminal(cfg, method)
        }
        CommandKind::ItoCheck => ito_check(cfg),
        CommandKind::DiffusionProbe => diffusion_probe(cfg),
        CommandKind::SolveCauchy => solve_cauchy(cfg),
        CommandKind::SolveDirichlet => solve_dirichlet(cfg),
        CommandKind::Convergence => convergence(cfg),
    }
}

fn get_str(cfg: &RunConfig, key: &str, default: &str) -> CliResult<String> {
    match cfg.params.get(key) {
        None => Ok(default.to_string()),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(other) => Err(CliError::config(format!(
            "parameter {key} must be a string, got {other}"
        ))),
    }
}

fn param_json(params: &BTreeMap<String, Value>) -> String {
    serde_json::to_string(params).expect("parameter maps always serialize")
}

fn x_json(x: &[f64]) -> String {
    serde_json::to_string(x).expect("float vectors always serialize")
}

struct RowSpec<'a> {
    t: f64,
    x: &'a [f64],
    t_end: f64,
    n_paths: usize,
    n_steps: usize,
    dt: f64,
    estimate: f64,
    stderr: Option<f64>,
    extra: Value,
}

fn make_row(cfg: &RunConfig, spec: RowSpec<'_>) -> Row {
    Row {
        command: cfg.command.name(),
        preset: cfg.preset.clone(),
        param_json: param_json(&cfg.params),
        t: spec.t,
        x_json: x_json(spec.x),
        t_end: spec.t_end,
        n_paths: spec.n_paths,
        n_steps: spec.n_steps,
        dt: spec.dt,
        seed: cfg.seed,
        estimate: spec.estimate,
        stderr: spec.stderr,
        extra_json: spec.extra.to_string(),
        wall_ms: 0,
    }
}

fn spot_check_warnings(coeffs: &ito_lab::Coefficients, t0: f64, t_end: f64) -> Vec<String> {
    let check = coeffs.spot_check(t0, t_end, 1_000, SeedSpec::new(SPOT_CHECK_SEED, 0));
    if check.is_clean() {
        return Vec::new();
    }
    vec![format!(
        "declared coefficient constants look optimistic: {} Lipschitz and {} growth \
         violations in {} samples (worst ratios {:.3} / {:.3})",
        check.lipschitz_violations,
        check.growth_violations,
        check.n_samples,
        check.worst_lipschitz_ratio,
        check.worst_growth_ratio
    )]
}

/// Resolves `n_steps`/`dt` for a fixed-horizon run: explicit steps win,
/// otherwise steps are derived from `dt`, otherwise a default applies.
fn resolve_steps(cfg: &RunConfig, span: f64, default_steps: usize) -> CliResult<(usize, f64)> {
    let n = match (cfg.n_steps, cfg.dt) {
        (Some(n), _) => n,
        (None, Some(dt)) => {
            if dt >= span {
                return Err(CliError::config(format!(
                    "dt = {dt} does not fit inside the horizon {span}"
                )));
            }
            (span / dt).ceil() as usize
        }
        (None, None) => default_steps,
    };
    Ok((n, span / n as f64))
}

enum Method {
    Euler,
    Picard,
}

fn ensemble_terminal(cfg: &RunConfig, method: Method) -> CliResult<Outcome> {
    let preset = presets::build_process(&cfg.preset, &cfg.params)?;
    let t0 = cfg.t.unwrap_or(0.0);
    let t_end = cfg.t_end.unwrap_or(1.0);
    let x0 = cfg.x.clone().unwrap_or(preset.default_x0);
    let warnings = spot_check_warnings(&preset.coeffs, t0, t_end);
    let prob = SdeProblem::new(preset.coeffs, t0, x0.clone(), t_end)?;
    let (n_steps, dt) = resolve_steps(cfg, t_end - t0, 1 << 10)?;
    let n_paths = cfg.n_paths.unwrap_or(1_000);
    let grid = prob.uniform_grid(n_steps)?;
    let dim_noise = prob.coeffs.dim_noise();

    let per_path = |s: SeedSpec| -> ito_lab::Result<f64> {
        let noise = sample_path(&grid, dim_noise, s)?;
        match method {
            Method::Euler => Ok(euler_maruyama(&prob, &noise)?.final_value()[0]),
            Method::Picard => Ok(picard_solve(&prob, &noise, 1e-10, 200)?.path.final_value()[0]),
        }
    };
    let samples: ito_lab::Result<Vec<f64>> =
        sample_streams(n_paths, SeedSpec::new(cfg.seed, 0), per_path)
            .into_iter()
            .collect();
    let est = reduce(&samples?, cfg.seed)?;

    let method_name = match method {
        Method::Euler => "euler",
        Method::Picard => "picard",
    };
    let summary = format!(
        "{} {}: terminal mean {:.6} +- {:.6} ({n_paths} paths, {n_steps} steps)",
        cfg.command.name(),
        cfg.preset,
        est.mean,
        est.stderr
    );
    let row = make_row(
        cfg,
        RowSpec {
            t: t0,
            x: &x0,
            t_end,
            n_paths,
            n_steps,
            dt,
            estimate: est.mean,
            stderr: Some(est.stderr),
            extra: json!({ "method": method_name }),
        },
    );
    Ok(Outcome {
        rows: vec![row],
        summary,
        warnings,
    })
}

fn integrand_from_param(name: &str) -> CliResult<AdaptedProcess> {
    match name {
        "const" => Ok(AdaptedProcess::constant(1.0)),
        "w" => Ok(AdaptedProcess::scalar("running path value", |p| p.w())),
        "t" => Ok(AdaptedProcess::scalar("elapsed time", |p| p.t())),
        other => Err(CliError::config(format!(
            "unknown integrand {other:?}; valid integrands: const, w, t"
        ))),
    }
}

fn ito_check(cfg: &RunConfig) -> CliResult<Outcome> {
    // The identity battery is defined for scalar integrands against scalar
    // Brownian motion.
    let preset = presets::build_process(&cfg.preset, &cfg.params)?;
    if preset.coeffs.dim_state() != 1 || preset.coeffs.dim_noise() != 1 {
        return Err(CliError::config(
            "ito-check requires a one-dimensional driving process (preset bm with d=1, m=1)",
        ));
    }
    let horizon = cfg.t_end.unwrap_or(1.0);
    if horizon <= 0.0 {
        return Err(CliError::config("the horizon T must be positive"));
    }
    let check = get_str(cfg, "check", "isometry")?;
    let base = SeedSpec::new(cfg.seed, 0);
    let x_query: [f64; 0] = [];

    let (row, summary) = match check.as_str() {
        "qv" => {
            let (n_steps, dt) = resolve_steps(cfg, horizon, 1 << 12)?;
            let n_paths = cfg.n_paths.unwrap_or(1_000);
            let grid = make_uniform_grid(0.0, horizon, n_steps)?;
            let samples: ito_lab::Result<Vec<f64>> = sample_streams(n_paths, base, |s| {
                let path = sample_path(&grid, 1, s)?;
                let qv = quadratic_variation(&path, 0.0, horizon)?;
                Ok((qv - horizon).powi(2))
            })
            .into_iter()
            .collect();
            let est = reduce(&samples?, cfg.seed)?;
            let rms = est.mean.sqrt();
            let row = make_row(
                cfg,
                RowSpec {
                    t: 0.0,
                    x: &x_query,
                    t_end: horizon,
                    n_paths,
                    n_steps,
                    dt,
                    estimate: est.mean,
                    stderr: Some(est.stderr),
                    extra: json!({ "check": "qv", "rms": rms, "target": horizon }),
                },
            );
            let summary = format!(
                "ito-check qv: rms deviation of [W] from {horizon} is {rms:.6} \
                 ({n_paths} paths at {n_steps} steps)"
            );
            (row, summary)
        }
        "wdw" => {
            let (n_steps, dt) = resolve_steps(cfg, horizon, 1 << 16)?;
            let n_paths = cfg.n_paths.unwrap_or(200);
            let grid = make_uniform_grid(0.0, horizon, n_steps)?;
            let integrand = AdaptedProcess::scalar("running path value", |p| p.w());
            let samples: ito_lab::Result<Vec<(f64, f64)>> = sample_streams(n_paths, base, |s| {
                let path = sample_path(&grid, 1, s)?;
                let integral = ito_integral(&integrand, &path)?.final_scalar();
                let w_end = path.scalar(grid.len() - 1);
                let closed_form = 0.5 * w_end * w_end - 0.5 * horizon;
                let err = (integral - closed_form).abs();
                let qv_defect = 0.5 * (quadratic_variation(&path, 0.0, horizon)? - horizon);
                Ok((err * err, (err - qv_defect.abs()).abs()))
            })
            .into_iter()
            .collect();
            let samples = samples?;
            let sq_errors: Vec<f64> = samples.iter().map(|s| s.0).collect();
            let identity_gap = samples.iter().map(|s| s.1).fold(0.0f64, f64::max);
            let est = reduce(&sq_errors, cfg.seed)?;
            let rms = est.mean.sqrt();
            let row = make_row(
                cfg,
                RowSpec {
                    t: 0.0,
                    x: &x_query,
                    t_end: horizon,
                    n_paths,
                    n_steps,
                    dt,
                    estimate: est.mean,
                    stderr: Some(est.stderr),
                    extra: json!({
                        "check": "wdw",
                        "rms": rms,
                        "identity_gap_max": identity_gap,
                    }),
                },
            );
            let summary = format!(
                "ito-check wdw: rms closed-form error {rms:.3e}, worst residual-identity \
                 gap {identity_gap:.3e} ({n_paths} paths at {n_steps} steps)"
            );
            (row, summary)
        }
        "isometry" => {
            let integrand_name = get_str(cfg, "integrand", "w")?;
            let integrand = integrand_from_param(&integrand_name)?;
            let (n_steps, dt) = resolve_steps(cfg, horizon, 1 << 8)?;
            let n_paths = cfg.n_paths.unwrap_or(10_000);
            let check = check_isometry(&integrand, horizon, n_steps, n_paths, base)?;
            let gap = check.square.mean - check.time_integral.mean;
            let row = make_row(
                cfg,
                RowSpec {
                    t: 0.0,
                    x: &x_query,
                    t_end: horizon,
                    n_paths,
                    n_steps,
                    dt,
                    estimate: gap,
                    stderr: Some(check.combined_stderr()),
                    extra: json!({
                        "check": "isometry",
                        "integrand": integrand_name,
                        "lhs": check.square.mean,
                        "lhs_stderr": check.square.stderr,
                        "rhs": check.time_integral.mean,
                        "rhs_stderr": check.time_integral.stderr,
                        "mean": check.mean.mean,
                        "mean_stderr": check.mean.stderr,
                        "passes_4sigma": check.passes(4.0),
                    }),
                },
            );
            let summary = format!(
                "ito-check isometry ({integrand_name}): gap {gap:.3e} vs combined stderr \
                 {:.3e}; integral mean {:.3e}",
                check.combined_stderr(),
                check.mean.mean
            );
            (row, summary)
        }
        "maximal" => {
            let integrand_name = get_str(cfg, "integrand", "w")?;
            let integrand = integrand_from_param(&integrand_name)?;
            let p = match cfg.params.get("p") {
                None => 1u32,
                Some(v) => v
                    .as_u64()
                    .and_then(|n| u32::try_from(n).ok())
                    .ok_or_else(|| {
                        CliError::config(format!("p must be a small positive integer, got {v}"))
                    })?,
            };
            let (n_steps, dt) = resolve_steps(cfg, horizon, 1 << 8)?;
            let n_paths = cfg.n_paths.unwrap_or(10_000);
            let check = check_maximal_inequalities(&integrand, horizon, p, n_steps, n_paths, base)?;
            let row = make_row(
                cfg,
                RowSpec {
                    t: 0.0,
                    x: &x_query,
                    t_end: horizon,
                    n_paths,
                    n_steps,
                    dt,
                    estimate: check.sup_moment.mean,
                    stderr: Some(check.sup_moment.stderr),
                    extra: json!({
                        "check": "maximal",
                        "integrand": integrand_name,
                        "p": p,
                        "constant": check.constant,
                        "bound": check.rhs(),
                        "integrand_moment": check.integrand_moment.mean,
                        "integrand_moment_stderr": check.integrand_moment.stderr,
                        "satisfied": check.satisfied(),
                    }),
                },
            );
            let summary = format!(
                "ito-check maximal ({integrand_name}, p={p}): sup-moment {:.6} vs bound {:.6} \
                 -> {}",
                check.sup_moment.mean,
                check.rhs(),
                if check.satisfied() {
                    "satisfied"
                } else {
                    "VIOLATED"
                }
            );
            (row, summary)
        }
        other => {
            return Err(CliError::config(format!(
                "unknown check {other:?}; valid checks: qv, wdw, isometry, maximal"
            )))
        }
    };
    Ok(Outcome {
        rows: vec![row],
        summary,
        warnings: Vec::new(),
    })
}

fn mc_pair(est: &McEstimate) -> Value {
    json!([est.mean, est.stderr])
}

fn diffusion_probe(cfg: &RunConfig) -> CliResult<Outcome> {
    let preset = presets::build_process(&cfg.preset, &cfg.params)?;
    let t = cfg.t.unwrap_or(0.0);
    let x = cfg.x.clone().unwrap_or(preset.default_x0);
    let warnings = spot_check_warnings(&preset.coeffs, t, t + 1.0);
    let mode = get_str(cfg, "mode", "local")?;
    let seed = SeedSpec::new(cfg.seed, 0);

    let (row, summary) = match mode.as_str() {
        "local" => {
            let h = match cfg.params.get("h") {
                None => cfg.dt.unwrap_or(1e-3),
                Some(v) => v
                    .as_f64()
                    .ok_or_else(|| CliError::config(format!("h must be a number, got {v}")))?,
            };
            if !(h.is_finite() && h > 0.0) {
                return Err(CliError::config(format!("h must be positive, got {h}")));
            }
            let n_paths = cfg.n_paths.unwrap_or(10_000);
            let est = estimate_drift_diffusion(&preset.coeffs, t, &x, h, n_paths, seed)?;
            let drift: Vec<Value> = est.drift.iter().map(mc_pair).collect();
            let diffusion: Vec<Value> = est.diffusion.iter().map(mc_pair).collect();
            let row = make_row(
                cfg,
                RowSpec {
                    t,
                    x: &x,
                    t_end: t + h,
                    n_paths,
                    n_steps: 1,
                    dt: h,
                    estimate: est.drift[0].mean,
                    stderr: Some(est.drift[0].stderr),
                    extra: json!({
                        "mode": "local",
                        "h": h,
                        "drift": drift,
                        "diffusion": diffusion,
                        "tail_rate": mc_pair(&est.tail_rate),
                    }),
                },
            );
            let summary = format!(
                "diffusion-probe {}: drift[0] {:.6} +- {:.6}, diffusion[0,0] {:.6} +- {:.6} \
                 at h={h:e}",
                cfg.preset,
                est.drift[0].mean,
                est.drift[0].stderr,
                est.diffusion[0].mean,
                est.diffusion[0].stderr
            );
            (row, summary)
        }
        "generator" => {
            let d = preset.coeffs.dim_state();
            let f_name = get_str(cfg, "f", "square")?;
            let gi = match f_name.as_str() {
                "square" => GeneratorInput::space_square(d),
                "time-square" => GeneratorInput::time_plus_square(d),
                "fourth" => {
                    if d != 1 {
                        return Err(CliError::config(
                            "test function \"fourth\" is one-dimensional",
                        ));
                    }
                    GeneratorInput::fourth_power()
                }
                other => {
                    return Err(CliError::config(format!(
                        "unknown test function {other:?}; valid: square, fourth, time-square"
                    )))
                }
            };
            let n_paths = cfg.n_paths.unwrap_or(100_000);
            let check = check_generator_limit(
                &preset.coeffs,
                &gi,
                t,
                &x,
                &GENERATOR_HORIZONS,
                n_paths,
                seed,
            )?;
            let levels: Vec<Value> = check
                .levels
                .iter()
                .map(|l| {
                    json!({
                        "h": l.h,
                        "quotient": l.quotient.mean,
                        "stderr": l.quotient.stderr,
                        "gap": l.gap,
                    })
                })
                .collect();
            let finest = check.levels.last().expect("horizon list is nonempty");
            let row = make_row(
                cfg,
                RowSpec {
                    t,
                    x: &x,
                    t_end: t + GENERATOR_HORIZONS[0],
                    n_paths,
                    n_steps: GENERATOR_HORIZONS.len(),
                    dt: finest.h,
                    estimate: check.generator_value,
                    stderr: Some(finest.quotient.stderr),
                    extra: json!({
                        "mode": "generator",
                        "f": f_name,
                        "levels": levels,
                        "bias_slope": check.bias_slope,
                        "passes_4sigma": check.passes(4.0),
                    }),
                },
            );
            let summary = format!(
                "diffusion-probe generator ({f_name}): A f = {:.6}, finest quotient {:.6} \
                 +- {:.6} -> {}",
                check.generator_value,
                finest.quotient.mean,
                finest.quotient.stderr,
                if check.passes(4.0) {
                    "consistent"
                } else {
                    "INCONSISTENT"
                }
            );
            (row, summary)
        }
        other => Err(CliError::config(format!(
            "unknown mode {other:?}; valid modes: local, generator"
        )))?,
    };
    Ok(Outcome {
        rows: vec![row],
        summary,
        warnings,
    })
}

fn solve_cauchy(cfg: &RunConfig) -> CliResult<Outcome> {
    let t_end = cfg.t_end.unwrap_or(1.0);
    let preset = presets::build_terminal_value(&cfg.preset, &cfg.params, t_end)?;
    let t = cfg.t.unwrap_or(preset.default_t);
    if t >= t_end {
        return Err(CliError::config(format!(
            "query time t = {t} must lie strictly before T = {t_end}"
        )));
    }
    let x = cfg.x.clone().unwrap_or(preset.default_x);
    let (n_steps, dt) = resolve_steps(cfg, t_end - t, 1 << 10)?;
    let n_paths = cfg.n_paths.unwrap_or(10_000);
    let seed = SeedSpec::new(cfg.seed, 0);
    let est = if preset.weighted {
        feynman_kac_solve(&preset.problem, t, &x, n_steps, n_paths, seed)?
    } else {
        kolmogorov_solve(&preset.problem, t, &x, n_steps, n_paths, seed)?
    };
    let summary = format!(
        "solve-cauchy {}: u({t}, {:?}) = {:.6} +- {:.6} ({n_paths} paths, {n_steps} steps)",
        cfg.preset, x, est.value.mean, est.value.stderr
    );
    let row = make_row(
        cfg,
        RowSpec {
            t,
            x: &x,
            t_end,
            n_paths,
            n_steps,
            dt,
            estimate: est.value.mean,
            stderr: Some(est.value.stderr),
            extra: json!({ "n_excluded": est.n_excluded }),
        },
    );
    Ok(Outcome {
        rows: vec![row],
        summary,
        warnings: Vec::new(),
    })
}

fn solve_dirichlet(cfg: &RunConfig) -> CliResult<Outcome> {
    let preset = presets::build_boundary_value(&cfg.preset, &cfg.params)?;
    let x = cfg.x.clone().unwrap_or(preset.default_x);
    let dt = cfg.dt.unwrap_or(1e-3);
    if cfg.n_steps.is_some() {
        return Err(CliError::config(
            "solve-dirichlet is stepped by --dt; the step count is capped per path, not fixed",
        ));
    }
    let n_paths = cfg.n_paths.unwrap_or(10_000);
    let t_cap = match cfg.params.get("t_cap") {
        None => None,
        Some(v) => {
            let cap = v
                .as_f64()
                .ok_or_else(|| CliError::config(format!("t_cap must be a number, got {v}")))?;
            if !(cap.is_finite() && cap > 0.0) {
                return Err(CliError::config(format!(
                    "t_cap must be positive, got {cap}"
                )));
            }
            Some(cap)
        }
    };
    // Resolve the effective cap up front so the row can record it.
    let probe = preset.problem.ellipticity_probe()?;
    let cap_used = t_cap.unwrap_or_else(|| preset.problem.default_t_cap(&probe));

    let est = dirichlet_solve(
        &preset.problem,
        &x,
        dt,
        n_paths,
        SeedSpec::new(cfg.seed, 0),
        t_cap,
    )?;
    let summary = format!(
        "solve-dirichlet {}: u({:?}) = {:.6} +- {:.6} ({n_paths} paths, dt={dt:e}, \
         {} excluded)",
        cfg.preset, x, est.value.mean, est.value.stderr, est.n_excluded
    );
    let row = make_row(
        cfg,
        RowSpec {
            t: 0.0,
            x: &x,
            t_end: cap_used,
            n_paths,
            n_steps: est.n_steps,
            dt,
            estimate: est.value.mean,
            stderr: Some(est.value.stderr),
            extra: json!({ "n_excluded": est.n_excluded, "t_cap": cap_used }),
        },
    );
    Ok(Outcome {
        rows: vec![row],
        summary,
        warnings: Vec::new(),
    })
}

fn convergence(cfg: &RunConfig) -> CliResult<Outcome> {
    let study = get_str(
        cfg,
        "study",
        if cfg.preset == "bm" { "qv" } else { "strong" },
    )?;
    let t0 = cfg.t.unwrap_or(0.0);
    let t_end = cfg.t_end.unwrap_or(1.0);
    let span = t_end - t0;
    let n_paths = cfg.n_paths.unwrap_or(1_000);

    match study.as_str() {
        "strong" => {
            let (k0, k1) = cfg.levels.unwrap_or((4, 8));
            validate_level_range(k0, k1)?;
            let preset = presets::build_process(&cfg.preset, &cfg.params)?;
            let x0 = cfg.x.clone().unwrap_or(preset.default_x0);
            let warnings = spot_check_warnings(&preset.coeffs, t0, t_end);
            let prob = SdeProblem::new(preset.coeffs, t0, x0.clone(), t_end)?;
            let report = strong_order_study(&prob, k0, k1, n_paths, SeedSpec::new(cfg.seed, 0))?;
            let mut rows = Vec::new();
            for (mesh, err) in &report.levels {
                rows.push(make_row(
                    cfg,
                    RowSpec {
                        t: t0,
                        x: &x0,
                        t_end,
                        n_paths,
                        n_steps: (span / mesh).round() as usize,
                        dt: *mesh,
                        estimate: *err,
                        stderr: None,
                        extra: json!({ "kind": "level", "study": "strong" }),
                    },
                ));
            }
            rows.push(make_row(
                cfg,
                RowSpec {
                    t: t0,
                    x: &x0,
                    t_end,
                    n_paths,
                    n_steps: 0,
                    dt: 0.0,
                    estimate: report.fitted_order,
                    stderr: None,
                    extra: json!({
                        "kind": "fitted_order",
                        "study": "strong",
                        "fit_residual": report.fit_residual,
                    }),
                },
            ));
            let summary = format!(
                "convergence strong ({}): fitted order {:.3} over {} levels",
                cfg.preset,
                report.fitted_order,
                report.levels.len()
            );
            Ok(Outcome {
                rows,
                summary,
                warnings,
            })
        }
        "qv" => {
            let (k0, k1) = cfg.levels.unwrap_or((6, 14));
            validate_level_range(k0, k1)?;
            if cfg.preset != "bm" {
                return Err(CliError::config(
                    "study \"qv\" measures the quadratic variation of Brownian paths \
                     (preset bm)",
                ));
            }
            let x_query: [f64; 0] = [];
            let base = SeedSpec::new(cfg.seed, 0);
            let mut rows = Vec::new();
            let mut levels = Vec::new();
            for k in k0..=k1 {
                let n_steps = 1usize << k;
                let grid = make_uniform_grid(t0, t_end, n_steps)?;
                let level_seed = base.child(1_000 + u64::from(k));
                let samples: ito_lab::Result<Vec<f64>> = sample_streams(n_paths, level_seed, |s| {
                    let path = sample_path(&grid, 1, s)?;
                    let qv = quadratic_variation(&path, t0, t_end)?;
                    Ok((qv - span).powi(2))
                })
                .into_iter()
                .collect();
                let est = reduce(&samples?, cfg.seed)?;
                let rms = est.mean.sqrt();
                // Delta method: se(sqrt(m)) = se(m) / (2 sqrt(m)).
                let rms_stderr = if rms > 0.0 {
                    Some(est.stderr / (2.0 * rms))
                } else {
                    None
                };
                levels.push((span / n_steps as f64, rms));
                rows.push(make_row(
                    cfg,
                    RowSpec {
                        t: t0,
                        x: &x_query,
                        t_end,
                        n_paths,
                        n_steps,
                        dt: span / n_steps as f64,
                        estimate: rms,
                        stderr: rms_stderr,
                        extra: json!({ "kind": "level", "study": "qv" }),
                    },
                ));
            }
            let report = fit_order(&levels)?;
            rows.push(make_row(
                cfg,
                RowSpec {
                    t: t0,
                    x: &x_query,
                    t_end,
                    n_paths,
                    n_steps: 0,
                    dt: 0.0,
                    estimate: report.fitted_order,
                    stderr: None,
                    extra: json!({
                        "kind": "fitted_order",
                        "study": "qv",
                        "fit_residual": report.fit_residual,
                    }),
                },
            ));
            let summary = format!(
                "convergence qv: fitted rms order {:.3} over {} levels",
                report.fitted_order,
                levels.len()
            );
            Ok(Outcome {
                rows,
                summary,
                warnings: Vec::new(),
            })
        }
        other => Err(CliError::config(format!(
            "unknown study {other:?}; valid studies: qv, strong"
        ))),
    }
}

fn validate_level_range(k0: u32, k1: u32) -> CliResult<()> {
    if k1 - k0 + 1 < 3 {
        return Err(CliError::config(format!(
            "a convergence study needs at least 3 levels, got {}..{}",
            k0, k1
        )));
    }
    if k1 > 24 {
        return Err(CliError::config(format!(
            "level exponent {k1} is too large (max 24)"
        )));
    }
    Ok(())
}
