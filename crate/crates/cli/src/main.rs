//! `jetconn`: build and verify nonlinear connections on J¹(T, M) from a
//! JSON problem file.
//!
//! Exit codes: 0 all checks pass, 1 a verification failed, 2 config error,
//! 3 runtime or mathematical error.

mod catalog;
mod commands;
mod config;
mod report;

use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use catalog::Example;
use commands::Verification;
use config::{Construction, Problem, Route};
use report::{Builder, Status};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },
    #[error("{0}")]
    Math(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn config(path: &str, message: impl Into<String>) -> Self {
        CliError::Config { path: path.to_string(), message: message.into() }
    }

    pub fn math(e: impl Display) -> Self {
        CliError::Math(e.to_string())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Math(_) | CliError::Io(_) => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Parser)]
#[command(name = "jetconn", version, about = "Nonlinear connections on 1-jet bundles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Problem file (JSON, version 1).
    #[arg(long, conflicts_with = "example")]
    config: Option<PathBuf>,
    /// Use a builtin problem instead of a file.
    #[arg(long, value_enum)]
    example: Option<Example>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides every tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Write the output here instead of stdout (geodesic: the trajectory CSV).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Coefficient table of a connection at the sample points.
    Connection {
        #[arg(long, value_enum)]
        which: Construction,
        #[command(flatten)]
        common: Common,
    },
    /// Run a structural check.
    Verify {
        #[arg(long, value_enum)]
        which: Verification,
        /// Connection under test (default: the config's, else gamma0).
        #[arg(long, value_enum)]
        construction: Option<Construction>,
        #[command(flatten)]
        common: Common,
    },
    /// Integrate the p = 1 geodesic-type equation.
    Geodesic {
        #[arg(long, value_enum)]
        route: Option<Route>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        t_end: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Energy of a map and its first variations.
    Energy {
        #[command(flatten)]
        common: Common,
    },
    /// Print a builtin problem file.
    Example {
        #[arg(value_enum)]
        name: Example,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("JETCONN_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::config("JETCONN_THREADS", format!("expected a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().map_err(CliError::math)
}

struct Loaded {
    config: config::Config,
    value: Value,
    seed: u64,
}

fn load(common: &Common) -> Result<Loaded, CliError> {
    let (mut config, value) = match (&common.config, common.example) {
        (Some(path), _) => config::load(path)?,
        (None, Some(ex)) => config::parse(&catalog::config(ex).to_string())?,
        (None, None) => return Err(CliError::config("$", "one of --config or --example is required")),
    };
    if let Some(tol) = common.tol {
        if tol.is_nan() || tol <= 0.0 {
            return Err(CliError::config("--tol", "must be positive"));
        }
        config.tolerances.override_all(tol);
    }
    let seed = common.seed.unwrap_or(config.seed);
    Ok(Loaded { config, value, seed })
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display()))),
        None => stdout(text),
    }
}

fn stdout(text: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|e| CliError::Io(format!("stdout: {e}")))
}

fn render(report: &report::Report) -> String {
    let mut text = serde_json::to_string_pretty(report).expect("reports serialize");
    text.push('\n');
    text
}

fn run(cli: Cli) -> Result<Status, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Example { name, out } => {
            let mut text = serde_json::to_string_pretty(&catalog::config(name)).expect("configs serialize");
            text.push('\n');
            write_output(out.as_deref(), &text)?;
            Ok(Status::Pass)
        }
        Command::Connection { which, common } => {
            let loaded = load(&common)?;
            let problem = Problem::new(&loaded.config);
            let builder = Builder::new("connection", Some(which.tag()), &loaded.value, loaded.seed);
            let (outcome, (points, table)) = commands::connection(&problem, which, loaded.seed)?;
            let report = builder.finish(outcome.checks, outcome.data);
            let text = match common.format {
                Format::Json => render(&report),
                Format::Csv => commands::connection_csv(problem.dims, &points, &table),
            };
            write_output(common.out.as_deref(), &text)?;
            Ok(report.status)
        }
        Command::Verify { which, construction, common } => {
            csv_unsupported(&common, "verify")?;
            let loaded = load(&common)?;
            let problem = Problem::new(&loaded.config);
            let construction = construction.or(loaded.config.construction).unwrap_or(Construction::Gamma0);
            let builder = Builder::new("verify", Some(which.tag()), &loaded.value, loaded.seed);
            let outcome = commands::verify(&problem, which, construction, loaded.seed)?;
            let report = builder.finish(outcome.checks, outcome.data);
            write_output(common.out.as_deref(), &render(&report))?;
            Ok(report.status)
        }
        Command::Geodesic { route, steps, t_end, common } => {
            let loaded = load(&common)?;
            let problem = Problem::new(&loaded.config);
            let builder = Builder::new("geodesic", None, &loaded.value, loaded.seed);
            let run = commands::geodesic(&problem, route, steps, t_end, loaded.seed)?;
            let report = builder.finish(run.outcome.checks, run.outcome.data);
            let csv = run.trajectory.to_csv();
            match (&common.out, common.format) {
                (Some(path), _) => {
                    write_output(Some(path), &csv)?;
                    stdout(&render(&report))?;
                }
                (None, Format::Csv) => stdout(&csv)?,
                (None, Format::Json) => stdout(&render(&report))?,
            }
            Ok(report.status)
        }
        Command::Energy { common } => {
            csv_unsupported(&common, "energy")?;
            let loaded = load(&common)?;
            let problem = Problem::new(&loaded.config);
            let builder = Builder::new("energy", None, &loaded.value, loaded.seed);
            let outcome = commands::energy_cmd(&problem)?;
            let report = builder.finish(outcome.checks, outcome.data);
            write_output(common.out.as_deref(), &render(&report))?;
            Ok(report.status)
        }
    }
}

fn csv_unsupported(common: &Common, command: &str) -> Result<(), CliError> {
    if common.format == Format::Csv {
        return Err(CliError::config("--format", format!("{command} reports are JSON only")));
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Status::Pass) => ExitCode::SUCCESS,
        Ok(Status::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
