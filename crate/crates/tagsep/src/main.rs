//! Command-line experiment runner. Subcommands mirror the experiment
//! names; `--config` loads a JSON document, flags override its top-level
//! fields, and `TAGSEP_SEED` overrides the seed from the environment.
//!
//! Exit codes: 0 all verdicts pass, 1 at least one verdict fails,
//! 2 usage or configuration error.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use tagsep::config::{ExperimentConfig, ExperimentKind};
use tagsep::experiments::{run, ExperimentError};
use tagsep::report::merge_reports;

#[derive(Parser, Debug)]
#[command(
    name = "tagsep",
    about = "Driven tagged particle in a symmetric exclusion process with removal: \
             simulators, analytics, and exact oracles",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Subcommand, Debug)]
enum Command {
    /// Closed-form outputs only (speed, drift, marginals, MGF curve).
    Analytic(RunArgs),
    /// Law of large numbers for the tagged displacement.
    Lln(RunArgs),
    /// Site-1 occupation fractions against the marginal system.
    Marginal(RunArgs),
    /// Regeneration-cycle means against 1/(m-w) and m/(m-w).
    Regen(RunArgs),
    /// E[exp(g(b) tau)] against the MGF mixture over the b grid.
    MgfCheck(RunArgs),
    /// Mean-one check of the exponential martingale at fixed t.
    MartingaleCheck(RunArgs),
    /// Renewal-reward CLT variance and normality of standardized runs.
    Clt(RunArgs),
    /// Capped-chain exact MGF ladder against the closed form.
    OracleMgf(RunArgs),
    /// Capped-chain stationary site-1 distribution.
    OracleStationary(RunArgs),
    /// Conditional Bernoulli exchangeability of white cups.
    Exchangeability(RunArgs),
    /// Pool summary JSONs from runs that differ only by seed.
    Merge(MergeArgs),
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// JSON config; omitted fields take built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the trajectory/martingale replica count.
    #[arg(long)]
    replicas: Option<u64>,
    /// Override the regeneration cycle count.
    #[arg(long)]
    cycles: Option<u64>,
    /// Override the trajectory horizon.
    #[arg(long)]
    horizon: Option<f64>,
    /// Override the worker-thread count (0 = all cores).
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(clap::Args, Debug)]
struct MergeArgs {
    /// Summary JSON files to pool.
    files: Vec<PathBuf>,
    /// Output directory for the merged summary.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn load_config(kind: ExperimentKind, args: &RunArgs) -> Result<ExperimentConfig, String> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_path(path).map_err(|e| e.to_string())?,
        None => ExperimentConfig::default(),
    };
    cfg.experiment = Some(kind);
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Ok(env_seed) = std::env::var("TAGSEP_SEED") {
        cfg.seed = env_seed
            .parse()
            .map_err(|_| format!("TAGSEP_SEED must be an integer, got '{env_seed}'"))?;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(replicas) = args.replicas {
        cfg.replicas = replicas;
    }
    if let Some(cycles) = args.cycles {
        cfg.cycles = cycles;
    }
    if let Some(horizon) = args.horizon {
        cfg.horizon = horizon;
    }
    if let Some(par) = args.parallelism {
        cfg.parallelism = par;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn run_experiment(kind: ExperimentKind, args: &RunArgs) -> ExitCode {
    let cfg = match load_config(kind, args) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("config error: {msg}");
            return ExitCode::from(2);
        }
    };
    let started = Instant::now();
    match run(&cfg) {
        Ok(report) => {
            let path = match report.write_json(&cfg.output_dir) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("write error: {e}");
                    return ExitCode::from(2);
                }
            };
            eprintln!(
                "{}: {} verdicts, {} in {:.2?} -> {}",
                report.experiment,
                report.verdicts.len(),
                if report.passed() { "PASS" } else { "FAIL" },
                started.elapsed(),
                path.display()
            );
            for v in &report.verdicts {
                eprintln!(
                    "  [{}] {}: {}",
                    if v.pass { "pass" } else { "FAIL" },
                    v.name,
                    v.detail
                );
            }
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(ExperimentError::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("experiment error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run_merge(args: &MergeArgs) -> ExitCode {
    if args.files.is_empty() {
        eprintln!("merge needs at least one summary file");
        return ExitCode::from(2);
    }
    let mut reports = Vec::new();
    for path in &args.files {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("cannot read {}: {e}", path.display());
                return ExitCode::from(2);
            }
        };
        match serde_json::from_str(&text) {
            Ok(rep) => reports.push(rep),
            Err(e) => {
                eprintln!("cannot parse {}: {e}", path.display());
                return ExitCode::from(2);
            }
        }
    }
    match merge_reports(&reports) {
        Ok(mut merged) => {
            merged.experiment = format!("{}-merged", merged.experiment);
            match merged.write_json(&args.out) {
                Ok(path) => {
                    eprintln!("merged {} reports -> {}", reports.len(), path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("write error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Err(e) => {
            eprintln!("merge error: {e}");
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Analytic(args) => run_experiment(ExperimentKind::Analytic, args),
        Command::Lln(args) => run_experiment(ExperimentKind::Lln, args),
        Command::Marginal(args) => run_experiment(ExperimentKind::Marginal, args),
        Command::Regen(args) => run_experiment(ExperimentKind::Regen, args),
        Command::MgfCheck(args) => run_experiment(ExperimentKind::MgfCheck, args),
        Command::MartingaleCheck(args) => run_experiment(ExperimentKind::MartingaleCheck, args),
        Command::Clt(args) => run_experiment(ExperimentKind::Clt, args),
        Command::OracleMgf(args) => run_experiment(ExperimentKind::OracleMgf, args),
        Command::OracleStationary(args) => run_experiment(ExperimentKind::OracleStationary, args),
        Command::Exchangeability(args) => run_experiment(ExperimentKind::Exchangeability, args),
        Command::Merge(args) => run_merge(args),
    }
}
