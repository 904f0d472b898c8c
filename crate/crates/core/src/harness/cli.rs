//! Command-line interface. JSON goes to stdout, progress to stderr.
//!
//! Exit codes: 0 success, 1 check failure or run error, 2 usage or
//! configuration error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use super::config::load_config;
use super::output::to_json;
use super::scenario::{run_scenario, HarnessError, RunSummary};
use super::sweep::load_sweep;
use crate::elliptic::discrete_delta0;
use crate::thresholds::{chi_star, ThresholdQuery};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "chemolab",
    version,
    about = "Two-species chemotaxis-competition simulator and threshold calculator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate a configuration and write its CSV/JSON outputs.
    Simulate {
        config: PathBuf,
        /// Override the trajectory CSV path.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Override the JSON summary path.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Compute the chemotactic threshold for (mu, chi1, chi2).
    Threshold(ThresholdArgs),
    /// Run a parameter sweep and write its table.
    Sweep {
        config: PathBuf,
        /// Override the output CSV path; without one the table goes to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a configuration and print the summary; exit 1 if any check fails.
    Verify { config: PathBuf },
    /// Print the discrete lower-bound constant for the signal.
    Delta0 { config: PathBuf },
}

#[derive(Debug, Args)]
struct ThresholdArgs {
    #[arg(long)]
    mu: f64,
    #[arg(long)]
    chi1: f64,
    #[arg(long)]
    chi2: f64,
    /// Report `a_min - chi*` as the persistence margin.
    #[arg(long)]
    a_min: Option<f64>,
    #[arg(long)]
    b_min: Option<f64>,
    #[arg(long)]
    b_max: Option<f64>,
    #[arg(long)]
    beta_min: Option<f64>,
    #[arg(long)]
    beta_max: Option<f64>,
    /// Scan points per axis.
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    refine_iterations: Option<usize>,
}

fn usage(msg: impl std::fmt::Display) -> i32 {
    eprintln!("error: {msg}");
    EXIT_USAGE
}

fn harness_exit(e: HarnessError) -> i32 {
    eprintln!("error: {e}");
    match e {
        HarnessError::Config(_) | HarnessError::Threshold(_) => EXIT_USAGE,
        HarnessError::Dynamics(_) | HarnessError::Io { .. } => EXIT_FAILURE,
    }
}

fn print_json<T: Serialize>(value: &T) {
    print!("{}", to_json(value));
}

fn report(summary: &RunSummary) {
    eprintln!(
        "{}: {} at t = {} after {} steps ({:.2} s)",
        summary.name.as_deref().unwrap_or("run"),
        summary.stop,
        summary.final_time,
        summary.stats.steps,
        summary.wall_clock_seconds
    );
    for c in &summary.checks {
        eprintln!("  {:<22} {:?}  {}", c.name, c.status, c.detail);
    }
}

fn cmd_simulate(config: &Path, csv: Option<PathBuf>, summary: Option<PathBuf>) -> i32 {
    let mut cfg = match load_config(config) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    if csv.is_some() {
        cfg.output.csv = csv;
    }
    if summary.is_some() {
        cfg.output.summary = summary;
    }
    eprintln!("simulating {} to t = {}", config.display(), cfg.t_final);
    match run_scenario(&cfg) {
        Ok(run) => {
            report(&run.summary);
            EXIT_OK
        }
        Err(e) => harness_exit(e),
    }
}

fn cmd_threshold(a: &ThresholdArgs) -> i32 {
    let mut q = ThresholdQuery::new(a.mu, a.chi1, a.chi2);
    if let Some(x) = a.b_min {
        q.search.b_min = x;
    }
    if let Some(x) = a.b_max {
        q.search.b_max = x;
    }
    if let Some(x) = a.beta_min {
        q.search.beta_min = x;
    }
    if let Some(x) = a.beta_max {
        q.search.beta_max = x;
    }
    if let Some(n) = a.resolution {
        q.resolution = n;
    }
    if let Some(n) = a.refine_iterations {
        q.refine_iterations = n;
    }
    match chi_star(&q) {
        Ok(mut r) => {
            r.margin = a.a_min.map(|am| am - r.chi_star);
            print_json(&r);
            EXIT_OK
        }
        Err(e) => usage(e),
    }
}

fn cmd_sweep(config: &Path, output: Option<PathBuf>) -> i32 {
    let mut sweep = match load_sweep(config) {
        Ok(s) => s,
        Err(e) => return usage(e),
    };
    if output.is_some() {
        sweep.output = output;
    }
    eprintln!("sweeping {} points from {}", sweep.points().len(), config.display());
    let table = super::sweep::run_sweep(&sweep);
    let failed = table.rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} rows recorded errors");
    }
    match &sweep.output {
        Some(path) => {
            if let Err(e) = table.write_csv(path) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return EXIT_FAILURE;
            }
            eprintln!("wrote {}", path.display());
        }
        None => print!("{}", table.to_csv()),
    }
    EXIT_OK
}

fn cmd_verify(config: &Path) -> i32 {
    let cfg = match load_config(config) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    eprintln!("verifying {}", config.display());
    match run_scenario(&cfg) {
        Ok(run) => {
            report(&run.summary);
            print_json(&run.summary);
            if run.summary.all_passed() {
                EXIT_OK
            } else {
                EXIT_FAILURE
            }
        }
        Err(e) => harness_exit(e),
    }
}

#[derive(Serialize)]
struct Delta0Report {
    cells: usize,
    delta0: f64,
}

fn cmd_delta0(config: &Path) -> i32 {
    let cfg = match load_config(config) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    let grid = match cfg.build_grid() {
        Ok(g) => g,
        Err(e) => return usage(e),
    };
    match discrete_delta0(&grid, &cfg.params) {
        Ok(d) => {
            print_json(&Delta0Report {
                cells: grid.len(),
                delta0: d,
            });
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

/// Parse `args` (including the program name) and execute; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Simulate { config, csv, summary } => cmd_simulate(&config, csv, summary),
        Command::Threshold(a) => cmd_threshold(&a),
        Command::Sweep { config, output } => cmd_sweep(&config, output),
        Command::Verify { config } => cmd_verify(&config),
        Command::Delta0 { config } => cmd_delta0(&config),
    }
}
