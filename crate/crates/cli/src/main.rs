mod args;
mod commands;
mod config;
mod error;
mod manifest;

use std::io::IsTerminal;
use std::process::ExitCode;

use clap::Parser;
use tracing::Level;

use crate::args::{Cli, Command};
use crate::config::{BenchmarkRun, EvaluateRun, FileConfig, GenerateRun, SweepRun, TrainRun};
use crate::error::{CliError, CliResult, ExitStatus};

fn init_logging(level: &str) -> CliResult<()> {
    let level: Level = level
        .parse()
        .map_err(|_| CliError::Usage(format!("unknown log level {level:?}")))?;
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .with_target(false)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let level = cli.log_level.clone().or_else(|| file.log_level.clone()).unwrap_or_else(|| "info".into());
    init_logging(&level)?;
    match &cli.command {
        Command::Generate(a) => commands::generate(&GenerateRun::resolve(a, &file)?),
        Command::Train(a) => commands::train(&TrainRun::resolve(a, &file)?),
        Command::Compress(a) => commands::compress_file(&a.model, &a.input, &a.out),
        Command::Decompress(a) => commands::decompress_file(&a.model, &a.input, &a.out, a.threshold),
        Command::Evaluate(a) => commands::evaluate(&EvaluateRun::resolve(a, &file)?),
        Command::Benchmark(a) => commands::benchmark(&BenchmarkRun::resolve(a, &file)?),
        Command::Sweep(a) => commands::sweep(&SweepRun::resolve(a, &file)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let status = if e.use_stderr() { ExitStatus::Usage } else { ExitStatus::Success };
            return ExitCode::from(status as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_status() as u8)
        }
    }
}
