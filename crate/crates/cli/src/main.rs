use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use gridpatch_cli::{exit_code, run, Command, RunConfig};

#[derive(Parser)]
#[command(
    name = "gridpatch",
    version,
    about = "Renewable forecasting and patched RL dispatch experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args, Clone)]
struct Common {
    /// Master seed; every random stream is derived from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key = value` file overriding the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Sub {
    /// Generate the synthetic renewable series.
    GenData(Common),
    /// Generate the synthetic grid case.
    GenCase(Common),
    /// Train the forecaster on the series.
    TrainForecast(Common),
    /// Rolling test-period RMSE over the input/horizon sweep.
    EvalForecast(Common),
    /// Train the dispatch agent online.
    TrainDispatch(Common),
    /// Evaluate the trained agent or a random policy.
    EvalDispatch(Common),
    /// Train and evaluate the ablation variants.
    Ablate(Common),
}

impl Sub {
    fn split(self) -> (Command, Common) {
        match self {
            Sub::GenData(c) => (Command::GenData, c),
            Sub::GenCase(c) => (Command::GenCase, c),
            Sub::TrainForecast(c) => (Command::TrainForecast, c),
            Sub::EvalForecast(c) => (Command::EvalForecast, c),
            Sub::TrainDispatch(c) => (Command::TrainDispatch, c),
            Sub::EvalDispatch(c) => (Command::EvalDispatch, c),
            Sub::Ablate(c) => (Command::Ablate, c),
        }
    }
}

fn resolve(common: &Common) -> gridpatch_core::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let (command, common) = Cli::parse().command.split();
    let started = Instant::now();
    let result = resolve(&common).and_then(|cfg| run(command, &cfg));
    match result {
        Ok(manifest) => {
            eprintln!(
                "{} finished in {:.1?}; manifest {}",
                command.name(),
                started.elapsed(),
                manifest.display()
            );
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}: error: {err}", command.name());
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
