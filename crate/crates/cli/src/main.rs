//! Command-line driver for multiview recovery experiments.
//!
//! Subcommands:
//! - `gen` writes synthetic instance files for every cell of a config,
//! - `recover` runs one method on one stored instance and prints its NMSE,
//! - `sweep` runs a full experiment grid and writes CSV reports,
//! - `selftest` runs the solver, gradient, and generator check suites.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use mvot_core::{
    build_instance, check_exact_against_brute_force, check_gradients, check_ipot_against_exact,
    check_local_permutation_displacements, check_plan_feasibility, emit_report, load_config,
    run_method, run_sweep, Error, Instance, Method, Result, SceneSpec, SweepConfig,
    NOISELESS_SNR_DB,
};

#[derive(Parser)]
#[command(name = "mvot", version, about = "Permutation-robust multiview signal recovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic instance files for every experiment cell of a config.
    Gen(GenArgs),
    /// Run one method on one stored instance and print its NMSE.
    Recover(RecoverArgs),
    /// Run the full experiment grid from a config file and write CSV reports.
    Sweep(SweepArgs),
    /// Run the solver oracle, gradient, feasibility, and scramble checks.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Config file naming the scene and the rate/SNR/views/seed grid;
    /// defaults to one standard cell when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving the instance files.
    #[arg(long, default_value = "instances")]
    out: PathBuf,
}

#[derive(Args)]
struct RecoverArgs {
    /// Instance file produced by `gen`.
    instance: PathBuf,
    /// Method to run: proposed, gradient, or ignore_p.
    #[arg(long, default_value = "proposed")]
    method: String,
    /// Optional config supplying recovery and baseline tuning.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep config file.
    #[arg(long)]
    config: PathBuf,
    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    /// Base seed for every generated check problem.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen(args) => run_gen(&args),
        Command::Recover(args) => run_recover(&args),
        Command::Sweep(args) => run_sweep_cmd(&args),
        Command::Selftest(args) => run_selftest(&args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn load_or_default(config: Option<&Path>, seed: Option<u64>) -> Result<SweepConfig> {
    let mut cfg = match config {
        Some(path) => load_config(path)?,
        None => SweepConfig::single_cell(
            Method::Proposed,
            0.8,
            NOISELESS_SNR_DB,
            2,
            vec![seed.unwrap_or(0)],
        ),
    };
    if let Some(seed) = seed {
        cfg.seeds = vec![seed];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn snr_label(snr_db: f64) -> String {
    if snr_db == NOISELESS_SNR_DB {
        "noiseless".to_string()
    } else {
        format!("{snr_db}db")
    }
}

fn run_gen(args: &GenArgs) -> Result<ExitCode> {
    let cfg = load_or_default(args.config.as_deref(), args.seed)?;
    let scene = cfg.scene()?;
    let perturb = cfg.perturb();
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    let mut written = 0usize;
    for &rate in &cfg.rates {
        for &snr_db in &cfg.snrs_db {
            for &views in &cfg.views {
                for &seed in &cfg.seeds {
                    let instance = build_instance(&scene, &perturb, views, rate, snr_db, seed)?;
                    let name = format!(
                        "{}_rate{rate}_{}_k{views}_seed{seed}.json",
                        scene.letter(),
                        snr_label(snr_db)
                    );
                    let path = args.out.join(name);
                    instance.save(&path)?;
                    println!("{}", path.display());
                    written += 1;
                }
            }
        }
    }
    log::info!("wrote {written} instance files to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn run_recover(args: &RecoverArgs) -> Result<ExitCode> {
    let method = Method::from_str(&args.method)?;
    let cfg = load_or_default(args.config.as_deref(), None)?;
    let instance = Instance::load(&args.instance)?;
    let meta = &instance.metadata;
    let grid = instance.x_true.grid();
    let scene = SceneSpec::new(meta.letter, grid, meta.level)?;
    let (nmse, iters) = run_method(method, &instance, &scene, &cfg.recovery, &cfg.baseline)?;
    log::info!("method {method} finished after {iters} iterations");
    println!("{nmse}");
    Ok(ExitCode::SUCCESS)
}

fn run_sweep_cmd(args: &SweepArgs) -> Result<ExitCode> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(workers) = args.workers {
        cfg.workers = workers;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    let out_dir = cfg
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("sweep-out"));
    let result = run_sweep(&cfg)?;
    let (records, summary) = emit_report(&result, &out_dir)?;
    println!("{}", records.display());
    println!("{}", summary.display());
    Ok(ExitCode::SUCCESS)
}

/// Runs one named check, printing a pass/fail line; returns whether it passed.
fn report<T: std::fmt::Display>(
    name: &str,
    outcome: Result<T>,
    accept: impl Fn(&T) -> bool,
) -> bool {
    match outcome {
        Ok(stat) if accept(&stat) => {
            println!("ok   {name}: {stat}");
            true
        }
        Ok(stat) => {
            println!("FAIL {name}: {stat}");
            false
        }
        Err(err) => {
            println!("FAIL {name}: {err}");
            false
        }
    }
}

fn run_selftest(args: &SelftestArgs) -> Result<ExitCode> {
    let seed = args.seed;
    // Same problem counts and tolerances as the acceptance suite.
    let mut all = true;
    all &= report(
        "exact solver vs permutation enumeration (max abs gap, 100 cases)",
        check_exact_against_brute_force(100, seed),
        |&gap| gap <= 1e-9,
    );
    all &= report(
        "proximal solver vs exact (max rel gap, 100 cases)",
        check_ipot_against_exact(100, seed),
        |&gap| gap <= 1e-3,
    );
    all &= report(
        "plan feasibility (max marginal violation, 100 cases)",
        check_plan_feasibility(100, seed),
        |&v| v <= 1e-8,
    );
    all &= report(
        "gradients vs central differences (max rel error, 20 cases)",
        check_gradients(20, seed),
        |&e| e <= 1e-5,
    );
    all &= report(
        "scramble displacement bound (permutations checked)",
        check_local_permutation_displacements(1000, &[0, 1, 2, 3], seed),
        |&n| n == 4000,
    );
    if all {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::FAILURE)
    }
}
