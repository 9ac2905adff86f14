//! Experiment harness for the bilevel solvers.
//!
//! Subcommands: `run` executes a sweep and writes per-cell artifacts
//! (trace.csv, plot.svg, report.json, instance.txt), `check` runs the
//! verification suite without artifacts, `oracle` computes and caches the
//! reference solutions. Exit codes: 0 all checks pass, 1 a check failed,
//! 2 usage or configuration error, 3 numeric failure during a run.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bilevel_cli::config::{ModeName, RunConfig};
use bilevel_cli::runner;

#[derive(Parser)]
#[command(
    name = "bilevel-cli",
    version,
    about = "Bilevel solver experiment harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep and write artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Parallel cells (each cell stays sequential for determinism).
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Override the config's mode.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<ModeName>,
        /// Output directory (defaults to config, then $BILEVEL_OUT_DIR).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verification only: run every check, write no artifacts.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compute (and cache) the reference solutions for the sweep.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<ModeName, String> {
    match s {
        "fast" => Ok(ModeName::Fast),
        "verify" => Ok(ModeName::Verify),
        other => Err(format!("unknown mode {other:?}; use fast or verify")),
    }
}

const EXIT_CHECK_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            jobs,
            mode,
            out,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(mode) = mode {
                cfg.mode = mode;
            }
            let out_dir = runner::resolve_out_dir(out.as_deref(), &cfg);
            let outcome = runner::run_all(&cfg, &out_dir, jobs, true, false)?;
            println!(
                "{} of {} cells passed; artifacts in {}",
                outcome.cells.iter().filter(|c| c.pass).count(),
                outcome.cells.len(),
                out_dir.display()
            );
            Ok(exit_for(&outcome))
        }
        Command::Check { config } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.mode = ModeName::Verify;
            let out_dir = runner::resolve_out_dir(None, &cfg);
            let outcome = runner::run_all(&cfg, &out_dir, 1, false, false)?;
            Ok(exit_for(&outcome))
        }
        Command::Oracle { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let out_dir = runner::resolve_out_dir(out.as_deref(), &cfg);
            let mut seen = std::collections::BTreeSet::new();
            for cell in cfg.cells() {
                let spec = cell.instance_spec(&cfg);
                let path = runner::oracle_cache_path(&out_dir, &spec);
                if !seen.insert(path.clone()) {
                    continue;
                }
                let inst = bilevel::experiments::gen_instance(&spec)
                    .map_err(|e| anyhow::anyhow!("{e}"))?;
                let r = runner::cached_reference(&out_dir, &inst)?;
                println!(
                    "n={} tau={} seed={} rho={}: phi*={:.6e} omega*={:.9} omega_lower={} stationarity={:.3e} confident={} -> {}",
                    spec.n,
                    spec.tau,
                    spec.seed,
                    spec.rho,
                    r.phi_star,
                    r.omega_star,
                    r.omega_lower,
                    r.achieved_tol,
                    r.confident,
                    path.display()
                );
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn exit_for(outcome: &runner::RunOutcome) -> ExitCode {
    if outcome.any_numeric_failure() {
        ExitCode::from(EXIT_NUMERIC)
    } else if !outcome.all_pass() {
        ExitCode::from(EXIT_CHECK_FAILURE)
    } else {
        ExitCode::SUCCESS
    }
}
