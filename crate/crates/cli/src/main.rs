//! `sdnc`: synthesize corpora, train the neural clusterer, decode with the
//! cascaded or parallel systems, score and compare.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "sdnc", version, about = "Segment-level neural clustering experiments on synthetic meetings")]
pub struct Cli {
    /// TOML experiment config; the bundled default is used when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for data generation, initialization, training and simulators.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root; each run goes to a subdirectory named by config hash.
    #[arg(long, global = true, env = "SDNC_OUT", default_value = "runs")]
    pub out: PathBuf,
    /// Config override `section.key=value`, value read as JSON when possible.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads for per-meeting work.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    All,
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    CascadedSc,
    ParallelSdnc,
    ParallelSc,
}

impl From<ModeArg> for sdnc_core::Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::CascadedSc => sdnc_core::Mode::CascadedSc,
            ModeArg::ParallelSdnc => sdnc_core::Mode::ParallelSdnc,
            ModeArg::ParallelSc => sdnc_core::Mode::ParallelSc,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic meetings and window embeddings.
    Synth {
        #[arg(long, value_enum, default_value = "all")]
        split: Split,
    },
    /// Pretrain on First Speaker segments, then fine-tune on VAD segments.
    Train,
    /// Run one system over the test meetings.
    Decode {
        /// Overrides `pipeline.mode`.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Model checkpoint; defaults to `pipeline.checkpoint`, then to the
        /// model written by `train` under the same config.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score decoded outputs against the references.
    Score {
        /// Overrides `pipeline.mode` when locating the decode run.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Decode run directory; defaults to the one for this config.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Compare two score reports meeting by meeting.
    Compare {
        /// `report.json` or a score directory of system A.
        #[arg(long)]
        a: PathBuf,
        /// `report.json` or a score directory of system B.
        #[arg(long)]
        b: PathBuf,
    },
    /// Run the oracle and invariant checks.
    Selftest,
}

#[derive(Debug)]
pub enum CliError {
    InvalidConfig(String),
    MissingInput(String),
    SelftestFailed(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::InvalidConfig(_) | CliError::Runtime(_) => 1,
            CliError::MissingInput(_) => 2,
            CliError::SelftestFailed(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::InvalidConfig(_) => "invalid_config",
            CliError::MissingInput(_) => "missing_input",
            CliError::SelftestFailed(_) => "selftest_failed",
            CliError::Runtime(_) => "runtime",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::InvalidConfig(m) | CliError::MissingInput(m) | CliError::SelftestFailed(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<sdnc_core::Error> for CliError {
    fn from(e: sdnc_core::Error) -> Self {
        use sdnc_core::Error as E;
        match &e {
            E::Io { .. } => CliError::MissingInput(e.to_string()),
            E::Config(_) | E::Validation(_) | E::Parse { .. } | E::Line { .. } => CliError::InvalidConfig(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({
                "error": { "kind": e.kind(), "message": e.message(), "exit_code": e.exit_code() }
            });
            eprintln!("{body}");
            ExitCode::from(e.exit_code())
        }
    }
}
