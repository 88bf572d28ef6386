//! `sweepopt`: simulate, optimize, certify, sweep and oracle-compare runs
//! for controlled sweeping processes.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Core(#[from] sweepopt::Error),
    #[error("certificate failed")]
    CertificateFailed,
}

impl CliError {
    /// 0 pass, 1 certificate fail, 2 integration fail, 3 config violation,
    /// 4 optimizer stall, 5 I/O or parse error.
    pub fn exit_code(&self) -> u8 {
        use sweepopt::Error as E;
        match self {
            CliError::CertificateFailed => 1,
            CliError::Config(_) => 3,
            CliError::Core(e) => match e {
                E::GammaTooSmall { .. }
                | E::InvalidParameter(_)
                | E::UnknownInstance(_)
                | E::NoClosedForm(_)
                | E::UnsupportedSetKind(_)
                | E::GridMismatch
                | E::EmptySample => 3,
                E::Stalled { .. } | E::GInfinite | E::EmptyIntersection { .. } => 4,
                E::Parse { .. } | E::Io(_) => 5,
                _ => 2,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sweepopt", version, about = "Penalty-continuation solver and optimality certificates for controlled sweeping processes")]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, `key=value`; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the penalized dynamics for one control.
    Simulate {
        #[arg(long)]
        gamma: Option<f64>,
        /// `reference`, `guess` or a control CSV.
        #[arg(long)]
        control: Option<String>,
    },
    /// Run the penalty continuation and write the final candidate.
    Optimize,
    /// Check a candidate against the first-order optimality conditions.
    Certify(CertifyArgs),
    /// Integrate the reference control across the penalty schedule.
    Sweep,
    /// Compare the penalized flow with the catching-up scheme.
    OracleCompare {
        #[arg(long)]
        gamma: Option<f64>,
    },
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    /// Certify the instance's closed-form optimum.
    #[arg(long, conflicts_with_all = ["trajectory", "multipliers"])]
    pub analytic: bool,
    /// With `--analytic`, also write the candidate files.
    #[arg(long, requires = "analytic")]
    pub emit_candidate: bool,
    /// Candidate trajectory CSV `t,x..,u..,xi`.
    #[arg(long, requires = "multipliers")]
    pub trajectory: Option<PathBuf>,
    /// Candidate multiplier JSON.
    #[arg(long, requires = "trajectory")]
    pub multipliers: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let text = match &cli.config {
        Some(p) => Some(sweepopt::io::read_text(p)?),
        None => None,
    };
    let mut cfg = RunConfig::load(text.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::Simulate { gamma, control } => {
            if let Some(g) = gamma {
                cfg.set("simulate.gamma", &g.to_string())?;
            }
            if let Some(c) = control {
                cfg.simulate_control = Some(c);
            }
            commands::simulate(&cfg)
        }
        Command::Optimize => commands::optimize(&cfg),
        Command::Certify(args) => commands::certify(&cfg, &args),
        Command::Sweep => commands::sweep(&cfg),
        Command::OracleCompare { gamma } => {
            if let Some(g) = gamma {
                cfg.set("oracle.gamma", &g.to_string())?;
            }
            commands::oracle_compare(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
