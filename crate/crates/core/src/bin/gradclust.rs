use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gradclust::config::{CliOverrides, RunConfig};
use gradclust::harness::{cmd_bench, cmd_generate, cmd_recover, cmd_verify, summary_table};
use gradclust::params::Regime;
use gradclust::Error;

/// Recover sigmoid parameter vectors by clustering gradient estimates.
#[derive(Parser)]
#[command(name = "gradclust", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Run configuration (JSON) or a manifest from an earlier run.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_parser = parse_regime)]
    regime: Option<Regime>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the model and, for Gaussian sampling, a dataset.
    Generate(Common),
    /// Generate candidates, cluster them and match against the truth.
    Recover(Common),
    /// Run the Monte Carlo checks.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Checks to run, overriding the configuration.
        #[arg(long = "check", value_name = "NAME")]
        checks: Vec<String>,
        /// Run each check's corrupted configuration.
        #[arg(long)]
        negative_controls: bool,
    },
    /// Time candidate generation.
    Bench(Common),
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load(common: &Common) -> Result<RunConfig, Error> {
    let cli = CliOverrides {
        seed: common.seed,
        out: common.out.clone(),
        threads: common.threads,
        regime: common.regime,
    };
    let cfg = RunConfig::resolve(Some(&common.config), std::env::vars(), &cli)?;
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Generate(common) => {
            let out = cmd_generate(&load(&common)?)?;
            for f in out.files {
                println!("{}", f.display());
            }
        }
        Command::Recover(common) => {
            let out = cmd_recover(&load(&common)?)?;
            println!(
                "retained {} of {} candidates (w0 = {:.6})",
                out.candidates.retained_count(),
                out.candidates.candidates.len(),
                out.candidates.w0
            );
            if let Some(m) = &out.matching {
                println!("matched error: max {:.6}, mean {:.6}", m.max_error, m.mean_error);
            }
            for f in out.files {
                println!("{}", f.display());
            }
        }
        Command::Verify {
            common,
            checks,
            negative_controls,
        } => {
            let mut cfg = load(&common)?;
            if !checks.is_empty() {
                cfg.verify.checks = checks;
            }
            cfg.verify.negative_controls |= negative_controls;
            cfg.validate()?;
            let out = cmd_verify(&cfg)?;
            print!("{}", summary_table(&out.reports));
            if !out.success() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Bench(common) => {
            let report = cmd_bench(&load(&common)?)?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::EmptyCandidates { .. } => ExitCode::from(3),
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
