use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mvflow::analyze::{analyze_run, ym_analyze, CheckFamily};
use mvflow::ensemble::{output_dir, run_ensemble, RunOutcome};
use mvflow::report::{emit_report, load_diagnostics};
use mvflow::{RunConfig, RunError};

#[derive(Parser)]
#[command(name = "mvflow", version, about = "Stochastic compressible non-Newtonian flow ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (flat `key = value` text or JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed, overriding `ensemble.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a single path.
    Simulate(Common),
    /// Integrate the configured ensemble and ladders.
    Ensemble(Common),
    /// Build the empirical Young measure of a run.
    YmAnalyze {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run diagnostics on a run directory.
    Check {
        #[arg(long)]
        out: PathBuf,
        /// Restrict to these check families.
        #[arg(long = "only")]
        only: Vec<CheckFamily>,
    },
    /// Collect diagnostics files into CSV tables.
    Report {
        /// Destination directory for the tables.
        #[arg(long)]
        out: PathBuf,
        /// Run directories or diagnostics.json files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn load_config(common: &Common, single_path: bool) -> Result<RunConfig, RunError> {
    let mut config = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|_| RunError::MissingArtifact(p.clone()))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    let mut overrides = common.set.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("ensemble.seed = {seed}"));
    }
    if single_path {
        overrides.push("ensemble.paths = 1".into());
    }
    config = config.with_overrides(&overrides)?;
    if let Some(out) = &common.out {
        config.output.dir = out.to_string_lossy().into_owned();
    }
    Ok(config)
}

fn run(common: &Common, single_path: bool) -> Result<bool, RunError> {
    let config = load_config(common, single_path)?;
    let dir = if common.out.is_some() {
        PathBuf::from(&config.output.dir)
    } else {
        output_dir(&config)
    };
    let mut config = config;
    config.output.dir = dir.to_string_lossy().into_owned();
    let outcome: RunOutcome = run_ensemble(&config)?;
    for g in &outcome.summary.groups {
        println!(
            "{}: {}/{} paths completed, {} stopped, min rho {:.6}, max mass drift {:.3e}",
            g.label, g.completed, g.paths, g.stopped, g.min_rho, g.max_mass_drift
        );
        for f in &g.failures {
            eprintln!("  path {} failed: {}", f.path, f.error);
        }
    }
    println!("run directory: {}", outcome.dir.display());
    Ok(outcome.all_paths_completed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => run(c, true),
        Command::Ensemble(c) => run(c, false),
        Command::YmAnalyze { out } => ym_analyze(out).map(|r| {
            println!(
                "{} cells, {} samples, Fenchel pairing error {:.3e}",
                r.cells, r.samples, r.fenchel_max_error
            );
            if let Some(l) = &r.defect_ladder {
                println!(
                    "defect ladder: decays {}, dominated {} (C = {})",
                    l.defect_decays, l.all_dominated, l.domination_constant
                );
            }
            r.pass
        }),
        Command::Check { out, only } => {
            let selection = (!only.is_empty()).then_some(only.as_slice());
            analyze_run(out, selection).map(|d| {
                for c in &d.checks {
                    println!(
                        "{} {}/{} [{}] measured {} tolerance {}",
                        if c.pass { "PASS" } else { "FAIL" },
                        c.family.name(),
                        c.name,
                        c.group,
                        c.measured.map_or("-".into(), |v| format!("{v:.6e}")),
                        c.tolerance.map_or("-".into(), |v| format!("{v:.3e}")),
                    );
                }
                d.pass
            })
        }
        Command::Report { out, inputs } => load_diagnostics(inputs)
            .and_then(|d| emit_report(&d, out))
            .map(|files| {
                for f in files {
                    println!("{}", f.display());
                }
                true
            }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
