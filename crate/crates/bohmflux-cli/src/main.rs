//! Experiment runner CLI: executes JSON-configured pipelines, runs the
//! oracle self-consistency suites, and lists the built-in presets.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical abort,
//! 4 comparison/oracle check failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bohmflux::error::Error;
use bohmflux::experiment::{self, ExperimentConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_CHECKS: u8 = 4;

#[derive(Parser)]
#[command(
    name = "bohmflux",
    version,
    about = "Conditional-energy-flow experiments for open quantum systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured experiment end to end.
    Run(RunArgs),
    /// Run only the closed-form oracle self-consistency suite for the
    /// configured preset (no PDE solving).
    Oracle(OracleArgs),
    /// List available Hamiltonian presets.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: config's outputs.directory, then
    /// $BOHMFLUX_OUTPUT_DIR, then ./out).
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Replace the config's master seed.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Skip the pipeline and run only the oracle suite.
    #[arg(long)]
    oracle_only: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    config: PathBuf,
}

fn exit_for(err: &Error) -> u8 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

fn run_oracle_suite(config_path: &Path) -> ExitCode {
    let config = match ExperimentConfig::from_file(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let resolved = match experiment::resolve(&config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_for(&e));
        }
    };
    let Some(preset) = resolved.preset else {
        println!(
            "{}",
            serde_json::json!({"checks": [], "note": "no oracle for custom Hamiltonians"})
        );
        return ExitCode::SUCCESS;
    };
    let checks = experiment::oracle_suite(preset, resolved.params);
    for c in &checks {
        println!(
            "[oracle] {}: {} (value {:.3e}, threshold {:.3e})",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.value,
            c.threshold
        );
    }
    println!("{}", serde_json::to_string_pretty(&checks).unwrap());
    if checks.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CHECKS)
    }
}

fn run_experiment(args: &RunArgs) -> ExitCode {
    if let Some(threads) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: could not size thread pool: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    if args.oracle_only {
        return run_oracle_suite(&args.config);
    }
    let config = match ExperimentConfig::from_file(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let out_dir = args
        .output_dir
        .clone()
        .or_else(|| config.outputs.directory.clone().map(PathBuf::from))
        .or_else(|| std::env::var_os("BOHMFLUX_OUTPUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));

    let resolved = match experiment::resolve(&config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_for(&e));
        }
    };
    match experiment::run(&resolved, &out_dir, args.seed_override) {
        Ok(artifacts) => {
            for c in &artifacts.manifest.checks {
                println!(
                    "[check] {}: {} (value {:.3e}, threshold {:.3e})",
                    c.name,
                    if c.passed { "PASS" } else { "FAIL" },
                    c.value,
                    c.threshold
                );
            }
            println!(
                "run complete in {:.1}s; outputs in {}",
                artifacts.manifest.wall_clock_seconds,
                artifacts.out_dir.display()
            );
            if artifacts.manifest.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_CHECKS)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(args) => run_experiment(&args),
        Command::Oracle(args) => run_oracle_suite(&args.config),
        Command::Presets => {
            print!("{}", experiment::list_presets());
            ExitCode::SUCCESS
        }
    }
}
