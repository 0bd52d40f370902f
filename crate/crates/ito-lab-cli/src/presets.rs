//! Named problem registry: each preset builds a fully validated library
//! problem from a small parameter map, with documented defaults.

use std::collections::BTreeMap;

use serde_json::Value;

use ito_lab::{
    CauchyProblem, Coefficients, DirichletProblem, Domain, GrowthClass, ScalarField, SpaceTimeField,
};

use crate::config::{CliError, CliResult, CommandKind};

/// What kind of problem a preset describes, which determines the commands
/// it can be used with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetKind {
    /// A process defined by drift/dispersion coefficients.
    Process,
    /// A terminal-value problem for the parabolic solver.
    TerminalValue,
    /// A boundary-value problem for the elliptic solver.
    BoundaryValue,
}

struct PresetInfo {
    name: &'static str,
    kind: PresetKind,
    param_keys: &'static [&'static str],
}

const PRESETS: &[PresetInfo] = &[
    PresetInfo {
        name: "bm",
        kind: PresetKind::Process,
        param_keys: &["d", "m"],
    },
    PresetInfo {
        name: "gbm",
        kind: PresetKind::Process,
        param_keys: &["beta", "gamma"],
    },
    PresetInfo {
        name: "ou",
        kind: PresetKind::Process,
        param_keys: &["theta", "sigma"],
    },
    PresetInfo {
        name: "heat-1d",
        kind: PresetKind::TerminalValue,
        param_keys: &[],
    },
    PresetInfo {
        name: "gbm-terminal",
        kind: PresetKind::TerminalValue,
        param_keys: &["beta", "gamma"],
    },
    PresetInfo {
        name: "const-discount",
        kind: PresetKind::TerminalValue,
        param_keys: &["rate"],
    },
    PresetInfo {
        name: "const-source",
        kind: PresetKind::TerminalValue,
        param_keys: &["rate"],
    },
    PresetInfo {
        name: "interval-exit",
        kind: PresetKind::BoundaryValue,
        param_keys: &["a", "b"],
    },
    PresetInfo {
        name: "disk-exit",
        kind: PresetKind::BoundaryValue,
        param_keys: &["r"],
    },
];

fn info(name: &str) -> CliResult<&'static PresetInfo> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        CliError::Config(format!(
            "unknown preset {name:?}; valid presets: {}",
            preset_names().join(", ")
        ))
    })
}

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}

pub fn preset_param_keys(name: &str) -> CliResult<&'static [&'static str]> {
    Ok(info(name)?.param_keys)
}

/// Checks that the preset's kind fits the command (a process preset for the
/// simulation commands, a problem preset for its solver).
pub fn validate_preset_for_command(command: CommandKind, preset: &str) -> CliResult<()> {
    let kind = info(preset)?.kind;
    let wanted = match command {
        CommandKind::Simulate
        | CommandKind::ItoCheck
        | CommandKind::SdeSolve
        | CommandKind::DiffusionProbe
        | CommandKind::Convergence => PresetKind::Process,
        CommandKind::SolveCauchy => PresetKind::TerminalValue,
        CommandKind::SolveDirichlet => PresetKind::BoundaryValue,
    };
    if kind != wanted {
        let valid: Vec<&str> = PRESETS
            .iter()
            .filter(|p| p.kind == wanted)
            .map(|p| p.name)
            .collect();
        return Err(CliError::Config(format!(
            "preset {preset:?} cannot be used with {}; valid presets for it: {}",
            command.name(),
            valid.join(", ")
        )));
    }
    Ok(())
}

fn get_f64(params: &BTreeMap<String, Value>, key: &str, default: f64) -> CliResult<f64> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => {
            let x = v.as_f64().ok_or_else(|| {
                CliError::Config(format!("parameter {key} must be a number, got {v}"))
            })?;
            if !x.is_finite() {
                return Err(CliError::Config(format!(
                    "parameter {key} must be finite, got {x}"
                )));
            }
            Ok(x)
        }
    }
}

fn get_usize(params: &BTreeMap<String, Value>, key: &str, default: usize) -> CliResult<usize> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v.as_u64().map(|n| n as usize).ok_or_else(|| {
            CliError::Config(format!(
                "parameter {key} must be a nonnegative integer, got {v}"
            ))
        }),
    }
}

/// Process coefficients with the default starting point for the preset.
pub struct ProcessPreset {
    pub coeffs: Coefficients,
    pub default_x0: Vec<f64>,
}

pub fn build_process(name: &str, params: &BTreeMap<String, Value>) -> CliResult<ProcessPreset> {
    match name {
        "bm" => {
            let d = get_usize(params, "d", 1)?;
            let m = get_usize(params, "m", d)?;
            Ok(ProcessPreset {
                coeffs: Coefficients::brownian(d, m)?,
                default_x0: vec![0.0; d.max(1)],
            })
        }
        "gbm" => {
            let beta = get_f64(params, "beta", 0.05)?;
            let gamma = get_f64(params, "gamma", 0.2)?;
            Ok(ProcessPreset {
                coeffs: Coefficients::geometric_brownian(beta, gamma)?,
                default_x0: vec![1.0],
            })
        }
        "ou" => {
            let theta = get_f64(params, "theta", 1.0)?;
            let sigma = get_f64(params, "sigma", 0.5)?;
            Ok(ProcessPreset {
                coeffs: Coefficients::ornstein_uhlenbeck(theta, sigma)?,
                default_x0: vec![1.0],
            })
        }
        other => Err(CliError::Config(format!(
            "preset {other:?} does not define a process"
        ))),
    }
}

/// A built parabolic problem plus its default query point and the solver
/// variant it needs.
pub struct TerminalValuePreset {
    pub problem: CauchyProblem,
    pub default_t: f64,
    pub default_x: Vec<f64>,
    /// True when the preset attaches a discount or source and must run
    /// through the weighted solver.
    pub weighted: bool,
}

pub fn build_terminal_value(
    name: &str,
    params: &BTreeMap<String, Value>,
    t_end: f64,
) -> CliResult<TerminalValuePreset> {
    match name {
        "heat-1d" => Ok(TerminalValuePreset {
            problem: CauchyProblem::new(
                Coefficients::brownian(1, 1)?,
                t_end,
                ScalarField::new(
                    "square",
                    GrowthClass::Polynomial {
                        l: 1.0,
                        lambda: 2.0,
                    },
                    |x: &[f64]| x[0] * x[0],
                ),
            )?,
            default_t: 0.0,
            default_x: vec![1.0],
            weighted: false,
        }),
        "gbm-terminal" => {
            let beta = get_f64(params, "beta", 0.05)?;
            let gamma = get_f64(params, "gamma", 0.2)?;
            Ok(TerminalValuePreset {
                problem: CauchyProblem::new(
                    Coefficients::geometric_brownian(beta, gamma)?,
                    t_end,
                    ScalarField::new(
                        "identity",
                        GrowthClass::Polynomial {
                            l: 1.0,
                            lambda: 1.0,
                        },
                        |x: &[f64]| x[0],
                    ),
                )?,
                default_t: 0.0,
                default_x: vec![1.0],
                weighted: false,
            })
        }
        "const-discount" => {
            let rate = get_f64(params, "rate", 1.0)?;
            if rate < 0.0 {
                return Err(CliError::Config(format!(
                    "discount rate must be nonnegative, got {rate}"
                )));
            }
            Ok(TerminalValuePreset {
                problem: CauchyProblem::new(
                    Coefficients::brownian(1, 1)?,
                    t_end,
                    ScalarField::new(
                        "one",
                        GrowthClass::Polynomial {
                            l: 1.0,
                            lambda: 0.0,
                        },
                        |_: &[f64]| 1.0,
                    ),
                )?
                .with_discount(SpaceTimeField::constant(rate)),
                default_t: 0.0,
                default_x: vec![0.0],
                weighted: true,
            })
        }
        "const-source" => {
            let rate = get_f64(params, "rate", 2.0)?;
            Ok(TerminalValuePreset {
                problem: CauchyProblem::new(
                    Coefficients::brownian(1, 1)?,
                    t_end,
                    ScalarField::new(
                        "zero",
                        GrowthClass::Polynomial {
                            l: 0.0,
                            lambda: 0.0,
                        },
                        |_: &[f64]| 0.0,
                    ),
                )?
                .with_source(SpaceTimeField::constant(rate)),
                default_t: 0.5,
                default_x: vec![0.0],
                weighted: true,
            })
        }
        other => Err(CliError::Config(format!(
            "preset {other:?} does not define a terminal-value problem"
        ))),
    }
}

/// A built elliptic problem plus its default query point. Both shipped
/// presets estimate the mean exit time (zero boundary data, unit source).
pub struct BoundaryValuePreset {
    pub problem: DirichletProblem,
    pub default_x: Vec<f64>,
}

pub fn build_boundary_value(
    name: &str,
    params: &BTreeMap<String, Value>,
) -> CliResult<BoundaryValuePreset> {
    let zero = || {
        ScalarField::new(
            "zero",
            GrowthClass::Polynomial {
                l: 0.0,
                lambda: 0.0,
            },
            |_: &[f64]| 0.0,
        )
    };
    let negative_unit_rate = || {
        ScalarField::new(
            "negative unit rate",
            GrowthClass::Polynomial {
                l: 1.0,
                lambda: 0.0,
            },
            |_: &[f64]| -1.0,
        )
    };
    match name {
        "interval-exit" => {
            let a = get_f64(params, "a", -1.0)?;
            let b = get_f64(params, "b", 1.0)?;
            Ok(BoundaryValuePreset {
                problem: DirichletProblem::new(
                    Coefficients::brownian(1, 1)?,
                    Domain::interval(a, b)?,
                    zero(),
                )?
                .with_source(negative_unit_rate()),
                default_x: vec![0.5 * (a + b)],
            })
        }
        "disk-exit" => {
            let r = get_f64(params, "r", 1.0)?;
            Ok(BoundaryValuePreset {
                problem: DirichletProblem::new(
                    Coefficients::brownian(2, 2)?,
                    Domain::ball(2, r)?,
                    zero(),
                )?
                .with_source(negative_unit_rate()),
                default_x: vec![0.0, 0.0],
            })
        }
        other => Err(CliError::Config(format!(
            "preset {other:?} does not define a boundary-value problem"
        ))),
    }
}
