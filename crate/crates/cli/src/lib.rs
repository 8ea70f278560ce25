//! Experiment runner: reads a TOML table, runs the simulation or analysis,
//! and writes CSV (JSON for `plan`) headed by a provenance line.

// `!(x > 0.0)` guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod config;
pub mod output;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl From<noma_core::Error> for CliError {
    fn from(e: noma_core::Error) -> Self {
        use noma_core::Error as E;
        match e {
            E::Infeasible(msg) => CliError::Infeasible(msg),
            E::Domain(_) | E::InvalidLayout(_) | E::ConditionViolated { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Other(other.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "kebab-case")]
pub enum CommandKind {
    OutageSweep,
    FblSweep,
    MomentCheck,
    Plan,
    Linklevel,
    SicSim,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::OutageSweep => "outage-sweep",
            CommandKind::FblSweep => "fbl-sweep",
            CommandKind::MomentCheck => "moment-check",
            CommandKind::Plan => "plan",
            CommandKind::Linklevel => "linklevel",
            CommandKind::SicSim => "sic-sim",
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "noma-rep",
    version,
    about = "Outage and finite-blocklength analysis of repetition NOMA"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Outage of the exact and surrogate models against the closed-form bound.
    OutageSweep(RunArgs),
    /// Average codeword error: Monte Carlo and analytic upper bound.
    FblSweep(RunArgs),
    /// Moment-matching diagnostics of the interference term.
    MomentCheck(RunArgs),
    /// Layer sizes and thresholds for a frame (JSON).
    Plan(RunArgs),
    /// Symbol-level simulation with interleaved QPSK repetition.
    Linklevel(RunArgs),
    /// Whole-frame successive interference cancellation.
    SicSim(RunArgs),
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// TOML file holding the table for this command.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Command {
    pub fn split(&self) -> (CommandKind, &RunArgs) {
        match self {
            Command::OutageSweep(a) => (CommandKind::OutageSweep, a),
            Command::FblSweep(a) => (CommandKind::FblSweep, a),
            Command::MomentCheck(a) => (CommandKind::MomentCheck, a),
            Command::Plan(a) => (CommandKind::Plan, a),
            Command::Linklevel(a) => (CommandKind::Linklevel, a),
            Command::SicSim(a) => (CommandKind::SicSim, a),
        }
    }
}

/// Rendered output. `infeasible` marks a plan with unmet constraints; the
/// output is still complete.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub text: String,
    pub infeasible: bool,
}

/// Runs one command on configuration text.
pub fn execute(
    kind: CommandKind,
    config_text: &str,
    seed: Option<u64>,
    trials: Option<u64>,
) -> Result<Outcome, CliError> {
    let cfg = config::ConfigFile::parse(config_text)?;
    commands::dispatch(kind, &cfg, config_text, seed, trials)
}

/// Runs the parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> Result<i32, CliError> {
    let (kind, args) = cli.command.split();
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let outcome = execute(kind, &text, args.seed, args.trials)?;
    match &args.out {
        Some(path) => std::fs::write(path, &outcome.text).map_err(|e| {
            CliError::Other(anyhow::anyhow!("cannot write {}: {e}", path.display()))
        })?,
        None => print!("{}", outcome.text),
    }
    if outcome.infeasible {
        log::error!("plan has unmet constraints; see the issues fields");
        return Ok(3);
    }
    Ok(0)
}
