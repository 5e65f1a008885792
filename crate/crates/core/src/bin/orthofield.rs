use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use orthofield::cli::{exit_code, load_config, run, ExperimentKind, OutputFormat};
use orthofield::{Error, Result};

#[derive(Parser)]
#[command(name = "orthofield", version, about = "Simulate and verify stationary random fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run any experiment config.
    Simulate(RunArgs),
    /// Orthomartingale and commuting structure checks.
    Verify(RunArgs),
    /// Quenched or annealed central limit experiments.
    Clt(RunArgs),
    /// Brownian sheet covariances and block combinations.
    Functional(RunArgs),
    /// Row-sum martingale array conditions.
    Gh(RunArgs),
    /// Martingale-coboundary residuals.
    Coboundary(RunArgs),
    /// Exceedance probe on the level field.
    Explore(RunArgs),
    /// Kernel and conditional moment conditions.
    Conditions(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; `ORTHOFIELD_THREADS` is used when absent.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["csv", "json"])]
    format: Option<String>,
}

fn accepts(command: &Command, kind: ExperimentKind) -> bool {
    use ExperimentKind::*;
    match command {
        Command::Simulate(_) => true,
        Command::Verify(_) => kind == VerifyStructure,
        Command::Clt(_) => matches!(kind, CltAnnealed | CltQuenched),
        Command::Functional(_) => kind == Functional,
        Command::Gh(_) => kind == GhCheck,
        Command::Coboundary(_) => kind == Coboundary,
        Command::Explore(_) => kind == Counterexample,
        Command::Conditions(_) => kind == CheckConditions,
    }
}

fn args(command: &Command) -> &RunArgs {
    match command {
        Command::Simulate(a)
        | Command::Verify(a)
        | Command::Clt(a)
        | Command::Functional(a)
        | Command::Gh(a)
        | Command::Coboundary(a)
        | Command::Explore(a)
        | Command::Conditions(a) => a,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let a = args(&cli.command);
    let result = load_config(&a.config).and_then(|mut cfg| -> Result<_> {
        if !accepts(&cli.command, cfg.experiment) {
            return Err(Error::Argument(format!(
                "this subcommand cannot run a {} experiment",
                cfg.experiment.as_str()
            )));
        }
        if let Some(out) = &a.out {
            cfg.out = out.clone();
        }
        if let Some(t) = a.threads {
            cfg.threads = t;
        }
        if let Some(s) = a.seed {
            cfg.seeds.base = s;
        }
        match a.format.as_deref() {
            Some("json") => cfg.format = OutputFormat::Json,
            Some(_) => cfg.format = OutputFormat::Csv,
            None => {}
        }
        run(&cfg)
    });
    let code = exit_code(&result);
    match &result {
        Ok((o, m)) => eprintln!(
            "{}: verdict {}, {} files in {:.1} s",
            m.experiment,
            o.verdict.as_str(),
            m.outputs.len() + 1,
            m.wall_clock_secs
        ),
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(code as u8)
}
