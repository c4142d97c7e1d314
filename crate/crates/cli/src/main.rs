//! `pdectl`: certified analysis, synthesis and simulation of the delay and PDE case studies.

mod commands;
mod report;
mod reproduce;
mod spec;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "pdectl", version, about = "Nyquist certificates, structured H∞ synthesis and PDE simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Nyquist stability certificate, closed-loop norms and quasi-polynomial counts.
    Analyze(spec::Flags),
    /// Run a structured synthesis program from a stabilizing start.
    Synthesize(spec::Flags),
    /// Simulate the closed (or open) loop on the discretized PDE.
    Simulate(spec::Flags),
    /// Scripted case study with a pass/fail summary.
    Reproduce(spec::Flags),
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("inconclusive: {0}")]
    Inconclusive(String),
    #[error("synthesis failed: {0}")]
    Synthesis(String),
    #[error("acceptance failed: {0}")]
    Acceptance(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Inconclusive(_) => 2,
            CliError::Synthesis(_) => 3,
            CliError::Acceptance(_) => 4,
        }
    }

    pub fn synthesis(e: pdectl::Error) -> Self {
        CliError::Synthesis(e.to_string())
    }
}

impl From<pdectl::Error> for CliError {
    fn from(e: pdectl::Error) -> Self {
        use pdectl::Error::*;
        match e {
            RefinementBudgetExceeded { .. } | OriginOnPolygon | ZeroOnContour { .. } | TailBoundMissing => {
                CliError::Inconclusive(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Analyze(f) => spec::RunSpec::resolve(f).and_then(|s| commands::analyze(&s)),
        Command::Synthesize(f) => spec::RunSpec::resolve(f).and_then(|s| commands::synthesize(&s)),
        Command::Simulate(f) => spec::RunSpec::resolve(f).and_then(|s| commands::simulate(&s)),
        Command::Reproduce(f) => spec::RunSpec::resolve(f).and_then(|s| reproduce::run(&s)),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("pdectl: {e}");
            ExitCode::from(e.code())
        }
    }
}
