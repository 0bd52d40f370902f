//! Run configuration: merging a JSON config file with command-line flag
//! overrides (flags win) and validating the result before dispatch.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Deserialize;
use serde_json::Value;

use crate::presets;

/// Classified failure: configuration problems exit with code 1, numerical
/// failures (divergence, non-convergence, capped exits, degenerate fits)
/// with code 2.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<ito_lab::Error> for CliError {
    fn from(e: ito_lab::Error) -> Self {
        match e {
            ito_lab::Error::InvalidArgument(m) => CliError::Config(m),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// The seven batch commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::Subcommand)]
pub enum CommandKind {
    /// Simulate ensemble paths of a process preset and report the mean
    /// terminal value.
    Simulate,
    /// Statistically check a stochastic-integral identity (quadratic
    /// variation, closed-form integral, isometry, or maximal inequality).
    ItoCheck,
    /// Solve an SDE preset by Euler-Maruyama or Picard iteration and report
    /// the mean terminal value.
    SdeSolve,
    /// Recover local drift/diffusion coefficients from short-time
    /// increments, or test the generator difference quotient.
    DiffusionProbe,
    /// Solve a terminal-value (parabolic) problem preset by Monte Carlo.
    SolveCauchy,
    /// Solve a boundary-value (elliptic) problem preset by stopped walks.
    SolveDirichlet,
    /// Run a dyadic-level convergence study and fit the error order.
    Convergence,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Simulate => "simulate",
            CommandKind::ItoCheck => "ito-check",
            CommandKind::SdeSolve => "sde-solve",
            CommandKind::DiffusionProbe => "diffusion-probe",
            CommandKind::SolveCauchy => "solve-cauchy",
            CommandKind::SolveDirichlet => "solve-dirichlet",
            CommandKind::Convergence => "convergence",
        }
    }

    pub const ALL: [CommandKind; 7] = [
        CommandKind::Simulate,
        CommandKind::ItoCheck,
        CommandKind::SdeSolve,
        CommandKind::DiffusionProbe,
        CommandKind::SolveCauchy,
        CommandKind::SolveDirichlet,
        CommandKind::Convergence,
    ];

    /// Extra `--param` keys understood by this command (beyond the preset's
    /// own parameters and the universal `t`, `x`, `T`).
    pub fn param_keys(self) -> &'static [&'static str] {
        match self {
            CommandKind::Simulate => &[],
            CommandKind::ItoCheck => &["check", "integrand", "p"],
            CommandKind::SdeSolve => &["method"],
            CommandKind::DiffusionProbe => &["mode", "f", "h"],
            CommandKind::SolveCauchy => &[],
            CommandKind::SolveDirichlet => &["t_cap"],
            CommandKind::Convergence => &["study"],
        }
    }
}

impl FromStr for CommandKind {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        CommandKind::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = CommandKind::ALL.iter().map(|c| c.name()).collect();
                CliError::config(format!(
                    "unknown command {s:?}; valid commands: {}",
                    names.join(", ")
                ))
            })
    }
}

/// Shape of the JSON config file. Every field is optional; command-line
/// flags override whatever the file sets.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub command: Option<String>,
    pub preset: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
    pub n_paths: Option<usize>,
    pub n_steps: Option<usize>,
    pub dt: Option<f64>,
    pub seed: Option<u64>,
    pub t: Option<f64>,
    pub x: Option<Value>,
    #[serde(rename = "T")]
    pub t_end: Option<f64>,
    pub output_path: Option<PathBuf>,
    pub levels: Option<String>,
}

/// Values collected from command-line flags, before merging.
#[derive(Debug, Default)]
pub struct Overrides {
    pub command: Option<CommandKind>,
    pub preset: Option<String>,
    pub params: Vec<(String, Value)>,
    pub n_paths: Option<usize>,
    pub n_steps: Option<usize>,
    pub dt: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub levels: Option<String>,
}

/// Fully resolved and validated run description.
#[derive(Debug)]
pub struct RunConfig {
    pub command: CommandKind,
    pub preset: String,
    /// Preset/command parameters as supplied by the user (defaults are not
    /// echoed); serialized into the `param_json` column.
    pub params: BTreeMap<String, Value>,
    pub n_paths: Option<usize>,
    pub n_steps: Option<usize>,
    pub dt: Option<f64>,
    pub seed: u64,
    pub t: Option<f64>,
    pub x: Option<Vec<f64>>,
    pub t_end: Option<f64>,
    pub out: Option<PathBuf>,
    pub levels: Option<(u32, u32)>,
}

/// The preset assumed when none is named.
fn default_preset(command: CommandKind) -> &'static str {
    match command {
        CommandKind::Simulate | CommandKind::ItoCheck => "bm",
        CommandKind::SdeSolve | CommandKind::DiffusionProbe | CommandKind::Convergence => "gbm",
        CommandKind::SolveCauchy => "heat-1d",
        CommandKind::SolveDirichlet => "interval-exit",
    }
}

/// Parses one `--param key=value` argument. The value is interpreted as
/// JSON when possible (numbers, arrays, booleans) and kept as a plain
/// string otherwise.
pub fn parse_param(arg: &str) -> CliResult<(String, Value)> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("--param {arg:?} is not of the form key=value")))?;
    if key.is_empty() {
        return Err(CliError::config(format!(
            "--param {arg:?} has an empty key"
        )));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn parse_levels(s: &str) -> CliResult<(u32, u32)> {
    let (lo, hi) = s
        .split_once("..")
        .ok_or_else(|| CliError::config(format!("--levels {s:?} is not of the form k0..k1")))?;
    let k0: u32 = lo
        .trim()
        .parse()
        .map_err(|_| CliError::config(format!("bad level exponent {lo:?}")))?;
    let k1: u32 = hi
        .trim()
        .parse()
        .map_err(|_| CliError::config(format!("bad level exponent {hi:?}")))?;
    if k0 >= k1 {
        return Err(CliError::config(format!(
            "level range {s:?} must have k0 < k1"
        )));
    }
    Ok((k0, k1))
}

fn parse_x(value: &Value) -> CliResult<Vec<f64>> {
    let as_num = |v: &Value| {
        v.as_f64()
            .ok_or_else(|| CliError::config(format!("x entry {v} is not a number")))
    };
    match value {
        Value::Array(items) => {
            if items.is_empty() {
                return Err(CliError::config("x must not be an empty array"));
            }
            items.iter().map(as_num).collect()
        }
        other => Ok(vec![as_num(other)?]),
    }
}

fn check_finite(name: &str, v: f64) -> CliResult<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::config(format!("{name} must be finite, got {v}")))
    }
}

fn check_positive(name: &str, v: f64) -> CliResult<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::config(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

/// Merges the config file with flag overrides (flags win), pulls `t`, `x`,
/// and `T` out of the parameter map into their own slots, and validates
/// everything that can be checked before dispatch.
pub fn resolve(file: FileConfig, flags: Overrides) -> CliResult<RunConfig> {
    let command = match (flags.command, &file.command) {
        (Some(c), _) => c,
        (None, Some(name)) => name.parse()?,
        (None, None) => {
            return Err(CliError::config(
                "no command given (pass a subcommand or set \"command\" in the config file)",
            ))
        }
    };

    // File params first, flag params on top.
    let mut params = file.params;
    for (k, v) in flags.params {
        params.insert(k, v);
    }

    let mut t = file.t;
    if let Some(v) = params.remove("t") {
        t = Some(
            v.as_f64()
                .ok_or_else(|| CliError::config(format!("t must be a number, got {v}")))?,
        );
    }
    let mut t_end = file.t_end;
    if let Some(v) = params.remove("T") {
        t_end = Some(
            v.as_f64()
                .ok_or_else(|| CliError::config(format!("T must be a number, got {v}")))?,
        );
    }
    let mut x = match &file.x {
        Some(v) => Some(parse_x(v)?),
        None => None,
    };
    if let Some(v) = params.remove("x") {
        x = Some(parse_x(&v)?);
    }

    let preset = flags
        .preset
        .or(file.preset)
        .unwrap_or_else(|| default_preset(command).to_string());
    presets::validate_preset_for_command(command, &preset)?;

    // Reject parameter keys that neither the preset nor the command knows.
    let mut allowed: Vec<&str> = presets::preset_param_keys(&preset)?.to_vec();
    allowed.extend_from_slice(command.param_keys());
    for key in params.keys() {
        if !allowed.contains(&key.as_str()) {
            let mut valid: Vec<&str> = allowed.clone();
            valid.extend_from_slice(&["t", "x", "T"]);
            valid.sort_unstable();
            return Err(CliError::config(format!(
                "unknown parameter {key:?} for {} with preset {preset:?}; \
                 valid parameters: {}",
                command.name(),
                valid.join(", ")
            )));
        }
    }

    let levels = match flags.levels.or(file.levels) {
        Some(s) => Some(parse_levels(&s)?),
        None => None,
    };

    let cfg = RunConfig {
        command,
        preset,
        params,
        n_paths: flags.n_paths.or(file.n_paths),
        n_steps: flags.n_steps.or(file.n_steps),
        dt: flags.dt.or(file.dt),
        seed: flags.seed.or(file.seed).unwrap_or(0),
        t,
        x,
        t_end,
        out: flags.out.or(file.output_path),
        levels,
    };

    if let Some(n) = cfg.n_paths {
        if n == 0 {
            return Err(CliError::config("n_paths must be positive"));
        }
    }
    if let Some(n) = cfg.n_steps {
        if n == 0 {
            return Err(CliError::config("n_steps must be positive"));
        }
    }
    if let Some(dt) = cfg.dt {
        check_positive("dt", dt)?;
    }
    if let Some(t) = cfg.t {
        check_finite("t", t)?;
    }
    if let Some(t_end) = cfg.t_end {
        check_finite("T", t_end)?;
    }
    if let (Some(t), Some(t_end)) = (cfg.t, cfg.t_end) {
        if t >= t_end {
            return Err(CliError::config(format!(
                "t = {t} must lie strictly before T = {t_end}"
            )));
        }
    }
    if let Some(x) = &cfg.x {
        for (i, v) in x.iter().enumerate() {
            check_finite(&format!("x[{i}]"), *v)?;
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bare(command: CommandKind, preset: &str) -> Overrides {
        Overrides {
            command: Some(command),
            preset: Some(preset.to_string()),
            ..Overrides::default()
        }
    }

    #[test]
    fn flags_override_file_values() {
        let file: FileConfig = serde_json::from_str(
            r#"{"command": "simulate", "preset": "gbm", "seed": 1, "n_paths": 10}"#,
        )
        .unwrap();
        let mut flags = bare(CommandKind::Simulate, "gbm");
        flags.seed = Some(9);
        let cfg = resolve(file, flags).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.n_paths, Some(10));
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let parsed: Result<FileConfig, _> = serde_json::from_str(r#"{"comand": "simulate"}"#);
        assert!(parsed.is_err());
    }

    #[test]
    fn t_x_and_horizon_are_lifted_out_of_params() {
        let mut flags = bare(CommandKind::SolveCauchy, "heat-1d");
        flags.params = vec![
            parse_param("t=0.25").unwrap(),
            parse_param("x=[1.0,2.0]").unwrap(),
            parse_param("T=2").unwrap(),
        ];
        let cfg = resolve(FileConfig::default(), flags).unwrap();
        assert_eq!(cfg.t, Some(0.25));
        assert_eq!(cfg.x, Some(vec![1.0, 2.0]));
        assert_eq!(cfg.t_end, Some(2.0));
        assert!(cfg.params.is_empty());
    }

    #[test]
    fn unknown_parameter_lists_the_valid_names() {
        let mut flags = bare(CommandKind::Simulate, "gbm");
        flags.params = vec![parse_param("betta=0.1").unwrap()];
        let err = resolve(FileConfig::default(), flags).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("betta"), "{msg}");
        assert!(msg.contains("beta"), "{msg}");
        assert!(msg.contains("gamma"), "{msg}");
    }

    #[test]
    fn unknown_preset_lists_the_valid_names() {
        let err = resolve(
            FileConfig::default(),
            bare(CommandKind::Simulate, "brownian-ish"),
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("gbm"), "{msg}");
        assert!(msg.contains("interval-exit"), "{msg}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn level_ranges_parse_and_validate() {
        assert_eq!(parse_levels("6..14").unwrap(), (6, 14));
        assert!(parse_levels("6").is_err());
        assert!(parse_levels("9..9").is_err());
    }

    #[test]
    fn command_names_round_trip() {
        for c in CommandKind::ALL {
            assert_eq!(c.name().parse::<CommandKind>().unwrap(), c);
        }
    }

    #[test]
    fn degenerate_time_window_is_rejected() {
        let mut flags = bare(CommandKind::SolveCauchy, "heat-1d");
        flags.params = vec![parse_param("t=1.0").unwrap(), parse_param("T=1.0").unwrap()];
        assert!(resolve(FileConfig::default(), flags).is_err());
    }
}
