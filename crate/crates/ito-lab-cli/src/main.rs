//! Batch front-end for the ito-lab engine.
//!
//! A run is described by an optional JSON config file plus command-line
//! flags (flags win). Results land in a CSV artifact whose rows carry all
//! the metadata needed to reproduce them bit-exactly; re-running the same
//! configuration yields byte-identical output except for the timestamp
//! header line and the wall-clock column.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical failure.

mod config;
mod output;
mod presets;
mod run;

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use config::{CliError, CliResult, CommandKind, FileConfig, Overrides};

#[derive(Parser)]
#[command(
    name = "ito-lab",
    version,
    about = "Monte Carlo stochastic calculus: simulate, verify identities, solve PDEs",
    after_help = "Presets: bm(d,m), gbm(beta,gamma), ou(theta,sigma), heat-1d, gbm-terminal, \
                  const-discount(rate), const-source(rate), interval-exit(a,b), disk-exit(r).\n\
                  The query point is set with --param t=.. --param x=.. --param T=..\n\
                  ITOLAB_THREADS caps the worker count (0 = auto). Without --out the CSV goes \
                  to stdout and the summary to stderr."
)]
struct Cli {
    #[command(subcommand)]
    command: Option<CommandKind>,

    /// JSON config file; command-line flags override its fields.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Number of Monte Carlo paths.
    #[arg(long = "paths", global = true, value_name = "N")]
    paths: Option<usize>,

    /// Number of time steps per path.
    #[arg(long = "steps", global = true, value_name = "N")]
    steps: Option<usize>,

    /// Step size (alternative to --steps; for solve-dirichlet, the walk step).
    #[arg(long, global = true, value_name = "X")]
    dt: Option<f64>,

    /// Root seed for the reproducible stream hierarchy.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// CSV output path (default: CSV to stdout, summary to stderr).
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Dyadic level range for convergence studies, e.g. 6..14.
    #[arg(long, global = true, value_name = "K0..K1")]
    levels: Option<String>,

    /// Named problem preset.
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,

    /// Preset or command parameter, repeatable: --param beta=0.05
    #[arg(long = "param", global = true, value_name = "KEY=VALUE")]
    params: Vec<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match try_main(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ito-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn try_main(cli: Cli) -> CliResult<()> {
    configure_threads()?;

    let file = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::config(format!("cannot read config {}: {e}", path.display()))
            })?;
            serde_json::from_str::<FileConfig>(&text)
                .map_err(|e| CliError::config(format!("bad config {}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };

    let mut params = Vec::new();
    for raw in &cli.params {
        params.push(config::parse_param(raw)?);
    }
    let flags = Overrides {
        command: cli.command,
        preset: cli.preset,
        params,
        n_paths: cli.paths,
        n_steps: cli.steps,
        dt: cli.dt,
        seed: cli.seed,
        out: cli.out,
        levels: cli.levels,
    };
    let cfg = config::resolve(file, flags)?;

    let started = Instant::now();
    let mut outcome = run::execute(&cfg)?;
    let wall_ms = started.elapsed().as_millis();
    for row in &mut outcome.rows {
        row.wall_ms = wall_ms;
    }

    for warning in &outcome.warnings {
        eprintln!("ito-lab: warning: {warning}");
    }

    let stamp = output::iso8601_now();
    match &cfg.out {
        Some(path) => {
            let mut file = fs::File::create(path)
                .map_err(|e| CliError::config(format!("cannot create {}: {e}", path.display())))?;
            output::write_csv(&mut file, &stamp, &outcome.rows)?;
            file.flush()?;
            println!("{}", outcome.summary);
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            output::write_csv(&mut lock, &stamp, &outcome.rows)?;
            lock.flush()?;
            eprintln!("{}", outcome.summary);
        }
    }
    Ok(())
}

/// Applies the ITOLAB_THREADS cap before any parallel work starts
/// (0 or unset = automatic).
fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("ITOLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        CliError::config(format!(
            "ITOLAB_THREADS must be a nonnegative integer, got {raw:?}"
        ))
    })?;
    if n == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::config(format!("cannot configure {n} worker threads: {e}")))
}
