//! `filterlab <command> --config <path> --out <path> [--seed N]`
//!
//! Exit status: 0 on success, 2 when the run completed but the model pair is
//! not certified, 1 on error. Errors are also reported as a single
//! `error kind=<kind> detail="<message>"` line on stderr.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use filterlab_core::assumptions::{certify, check_a4prime, default_probes, AssumptionReport};
use filterlab_core::experiments::{
    forgetting_experiment, moment_stability_probe, per_step_birkhoff_probe,
    stability_experiment, sweep_experiment, telescoping_diagnostic, BIRKHOFF_SLACK,
};
use filterlab_core::filter::{run_filter, ModelTag};

use config::{parse_config, ConfigError, RunConfig};

/// Drift margin used for the inward-drift report in `check`.
const MARGIN: f64 = 1.0;

/// Perturbation multiples run by `sweep`.
const SWEEP_FACTORS: [f64; 3] = [1.0, 2.0, 4.0];

#[derive(Debug, Parser)]
#[command(name = "filterlab", version, about = "Grid filter stability experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output file (a directory for `sweep`).
    #[arg(long)]
    out: PathBuf,
    /// Overrides `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Certify the configured model pair and write the constants.
    Check(RunArgs),
    /// Mean TV between the exact and the wrong filter, per step.
    Stability(RunArgs),
    /// Mean TV between filters started from two initial laws, per step.
    Forgetting(RunArgs),
    /// Stability runs at 1x, 2x and 4x the perturbation, one CSV each plus an index.
    Sweep(RunArgs),
    /// Telescoping terms, per-step Birkhoff probe and moments along one trajectory.
    Diagnose(RunArgs),
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] filterlab_core::Error),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            Self::Config(ConfigError::Parse(_)) => "parse",
            Self::Config(ConfigError::Validation(_)) => "validation",
            Self::Io { .. } => "io",
            Self::Usage(_) => "usage",
            Self::Run(_) => "run",
        }
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_error(path))?;
    tmp.write_all(contents.as_bytes()).map_err(io_error(path))?;
    tmp.persist(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !dir.is_dir() {
        return Err(CliError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
        });
    }
    if path.is_dir() {
        return Err(CliError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::IsADirectory, "output path is a directory"),
        });
    }
    Ok(())
}

fn load(args: &RunArgs) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(&args.config).map_err(io_error(&args.config))?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = args.seed {
        cfg.experiment.seed = seed;
    }
    Ok(cfg)
}

fn status(certified: bool) -> ExitCode {
    if certified {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn check(cfg: &RunConfig, out: &Path) -> Result<ExitCode, CliError> {
    let e = &cfg.experiment;
    let (t, w) = e.models()?;
    let report = certify(&t, &w, e.radius, &default_probes())?;
    let margin = check_a4prime(&e.true_spec()?, &e.wrong_spec()?, &e.grid, MARGIN);
    let mut text = String::new();
    let _ = writeln!(text, "status = {}", if report.certified() { "CERTIFIED" } else { "UNCERTIFIED" });
    text.push_str(&e.to_key_values());
    text.push_str(&report.to_key_values());
    let threshold = margin.threshold.map_or("none".to_string(), |v| v.to_string());
    let limit = margin.exp_moment_limit.map_or("none".to_string(), |v| v.to_string());
    let _ = writeln!(text, "margin_r = {MARGIN}");
    let _ = writeln!(text, "margin_holds = {}", margin.holds);
    let _ = writeln!(text, "margin_threshold = {threshold}");
    let _ = writeln!(text, "margin_achieved = {}", margin.margin);
    let _ = writeln!(text, "margin_bounded_image = {}", margin.bounded_image);
    let _ = writeln!(text, "margin_zero_mean_noise = {}", margin.zero_mean);
    let _ = writeln!(text, "margin_exp_moment_limit = {limit}");
    write_atomic(out, &text)?;
    Ok(status(report.certified()))
}

fn stability(cfg: &RunConfig, out: &Path) -> Result<ExitCode, CliError> {
    let report = stability_experiment(&cfg.experiment)?;
    write_atomic(out, &report.to_csv(&cfg.experiment))?;
    Ok(status(report.certified()))
}

fn forgetting(cfg: &RunConfig, out: &Path) -> Result<ExitCode, CliError> {
    if cfg.experiment.alternate_initial.is_none() {
        return Err(ConfigError::Validation(
            "forgetting needs experiment.alternate_initial".into(),
        )
        .into());
    }
    let report = forgetting_experiment(&cfg.experiment)?;
    write_atomic(out, &report.to_csv(&cfg.experiment))?;
    Ok(status(report.certified()))
}

fn sweep(cfg: &RunConfig, out: &Path) -> Result<ExitCode, CliError> {
    if out.exists() && !out.is_dir() {
        return Err(CliError::Usage(format!("{} exists and is not a directory", out.display())));
    }
    let reports = sweep_experiment(&cfg.experiment, &SWEEP_FACTORS)?;
    fs::create_dir_all(out).map_err(io_error(out))?;
    let mut index = String::from("file,factor,q,sup_mean_tv,status\n");
    let mut all_certified = true;
    for (k, (report, factor)) in reports.iter().zip(SWEEP_FACTORS).enumerate() {
        let name = format!("sweep_{k}.csv");
        let scaled = cfg.experiment.scaled(factor);
        write_atomic(&out.join(&name), &report.to_csv(&scaled))?;
        let flag = if report.certified() { "CERTIFIED" } else { "UNCERTIFIED" };
        let _ = writeln!(index, "{name},{factor},{},{},{flag}", report.q, report.sup_mean_tv);
        all_certified &= report.certified();
    }
    write_atomic(&out.join("index.csv"), &index)?;
    Ok(status(all_certified))
}

fn diagnose(cfg: &RunConfig, out: &Path) -> Result<ExitCode, CliError> {
    let e = &cfg.experiment;
    let (t, w) = e.models()?;
    let report: AssumptionReport = certify(&t, &w, e.radius, &default_probes())?;
    let mu0 = e.initial.to_measure(e.grid)?;
    let path = t.sample_path(&mu0, cfg.diagnose_horizon, e.seed)?;
    let obs = &path.observations;
    let tel = telescoping_diagnostic(&t, &w, &mu0, obs)?;
    let wrong = run_filter(&w, &mu0, obs, ModelTag::Wrong)?;
    let probe = per_step_birkhoff_probe(&t, &wrong, obs)?;
    let moments = moment_stability_probe(&wrong, &report);
    let probe_max = probe.iter().copied().fold(0.0, f64::max);

    let mut text = String::new();
    let _ = writeln!(text, "# experiment = diagnose");
    let flag = if report.certified() { "CERTIFIED" } else { "UNCERTIFIED" };
    let _ = writeln!(text, "# status = {flag}");
    for line in e.to_key_values().lines().chain(report.to_key_values().lines()) {
        let _ = writeln!(text, "# {line}");
    }
    let _ = writeln!(text, "# diagnose_horizon = {}", cfg.diagnose_horizon);
    let _ = writeln!(text, "# telescoping_residual = {}", tel.residual());
    let _ = writeln!(text, "# difference_tv = {}", tel.difference_norm());
    let _ = writeln!(text, "# birkhoff_probe_max = {probe_max}");
    let _ = writeln!(text, "# birkhoff_probe_ok = {}", probe_max <= report.q + BIRKHOFF_SLACK);
    let _ = writeln!(text, "# moment_max = {}", moments.max_moment);
    let _ = writeln!(text, "# moment_ceiling = {}", moments.ceiling);
    text.push_str("step,observation,term_tv,birkhoff_probe,wrong_moment\n");
    for (k, ((y, term), p)) in obs.iter().zip(tel.term_norms()).zip(&probe).enumerate() {
        let m = filterlab_core::measure::exp_moment(&wrong.measures[k + 1], report.c);
        let _ = writeln!(text, "{},{y},{term},{p},{m}", k + 1);
    }
    write_atomic(out, &text)?;
    Ok(status(report.certified()))
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let (args, handler): (&RunArgs, fn(&RunConfig, &Path) -> Result<ExitCode, CliError>) =
        match &cli.command {
            Command::Check(a) => (a, check),
            Command::Stability(a) => (a, stability),
            Command::Forgetting(a) => (a, forgetting),
            Command::Sweep(a) => (a, sweep),
            Command::Diagnose(a) => (a, diagnose),
        };
    let cfg = load(args)?;
    if !matches!(cli.command, Command::Sweep(_)) {
        ensure_parent(&args.out)?;
    }
    handler(&cfg, &args.out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error kind=usage detail={first:?}");
            return ExitCode::FAILURE;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error kind={} detail={:?}", err.kind(), err.to_string());
            ExitCode::FAILURE
        }
    }
}
