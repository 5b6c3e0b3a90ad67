//! `entroproj validate | solve | analyze | gibbs --config run.json`
//!
//! Exit codes: 0 success, 1 unreadable config or other error, 2 invalid
//! problem, 3 infeasible constraint, 4 no accepted trial anywhere.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use entroproj::exec::Execution;
use entroproj::Error;

use crate::commands::Verdict;
use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "entroproj", version, about = "Entropy minimization under moment constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the simulation seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    quiet: bool,
    /// Run on one thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Check the assumptions and classify the constraint as good or critical.
    Validate,
    /// Solve the dual, write `solution.json` and `density.csv`.
    Solve,
    /// Sweep Λ and Ξ, write the curves and `recession.json`.
    Analyze,
    /// Simulate conditioned empirical measures.
    Gibbs,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Infeasible => 3,
        Error::NoAcceptedTrials => 4,
        _ => 1,
    }
}

fn run(cli: &Cli) -> Result<(String, u8), Error> {
    let path = cli.config.as_ref().ok_or_else(|| Error::InvalidInput("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    let base = path.parent().map(PathBuf::from).unwrap_or_default();
    let sc = cfg.scenario(&base)?;
    let out = cli.out.clone().or_else(|| cfg.output_dir.as_ref().map(|d| base.join(d))).unwrap_or_else(|| PathBuf::from("out"));
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    let report = commands::validate(&sc);
    if report.verdict == Verdict::Invalid {
        let why = report.failure.unwrap_or_default();
        return Ok((format!("{}: INVALID: {why}", sc.name), 2));
    }
    if !matches!(cli.command, Command::Validate) {
        std::fs::create_dir_all(&out).map_err(|e| Error::InvalidInput(format!("{}: {e}", out.display())))?;
    }
    let text = match cli.command {
        Command::Validate => {
            let classes: Vec<String> = report.classes.iter().map(|c| format!("{c:?}")).collect();
            format!("{}: {:?} (θ classes: {})", sc.name, report.verdict, classes.join(", ")).replace("Good", "GOOD").replace("Critical", "CRITICAL")
        }
        Command::Solve => commands::cmd_solve(&sc, &out)?,
        Command::Analyze => commands::cmd_analyze(&cfg, &sc, &out, exec)?,
        Command::Gibbs => {
            let mut spec = cfg.gibbs.take().ok_or_else(|| Error::InvalidInput("config has no `gibbs` block".into()))?;
            if let Some(seed) = cli.seed {
                spec.sim.seed = seed;
            }
            commands::cmd_gibbs(&spec, &sc, &out, exec)?
        }
    };
    Ok((text, 0))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok((text, code)) => {
            if !cli.quiet || code != 0 {
                if code == 0 {
                    println!("{text}");
                } else {
                    eprintln!("{text}");
                }
            }
            ExitCode::from(code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
