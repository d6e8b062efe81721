//! `critstates`: train soft Q policies, extract critical-state decks,
//! evaluate, and serve supervised sessions.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "critstates", version, about = "Critical-state extraction and supervised deployment toolkit")]
pub struct Cli {
    /// JSON config file with optional `env`, `train`, `pipeline`, `eval` and `serve` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EnvName {
    Driving,
    Pong,
    Chain,
}

impl EnvName {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvName::Driving => "driving",
            EnvName::Pong => "pong",
            EnvName::Chain => "chain",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DeckMode {
    Critical,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    #[value(name = "value_based", alias = "value-based", alias = "value")]
    ValueBased,
    #[value(name = "entropy_based", alias = "entropy-based", alias = "entropy")]
    EntropyBased,
}

impl From<MethodArg> for critstates::criticality::CriticalityMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::ValueBased => Self::ValueBased,
            MethodArg::EntropyBased => Self::EntropyBased,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Train a soft Q-network; writes policy.ckpt, metrics.jsonl and manifest.json.
    Train {
        env: EnvName,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a critical-state deck (or a random baseline deck) from a checkpoint.
    Deck {
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "critical")]
        mode: DeckMode,
        /// Rollout length.
        #[arg(long = "T")]
        t: Option<usize>,
        /// Fraction of the rollout kept before clustering.
        #[arg(long)]
        frac: Option<f64>,
        /// Number of clusters, and of deck entries.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        k: Option<u64>,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Percentile of the rollout scores used as the critical cutoff.
        #[arg(long)]
        percentile: Option<f64>,
        /// Seeds the rollout, the clustering and the random draw.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply removals, injections and action overrides from a JSON file to a deck.
    EditDeck {
        deck: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        edits: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Crash and return rates over several seeded rollouts.
    Eval {
        checkpoint: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seeds: Option<u64>,
        /// Print the full report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Record a rollout as numbered frames.
    Rollout {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 600)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve decks and supervised sessions over HTTP and WebSocket.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        host: Option<String>,
        /// Directory scanned for checkpoints and decks.
        #[arg(long)]
        assets: Option<PathBuf>,
        /// Where session event logs and decisions are written.
        #[arg(long)]
        log_dir: Option<PathBuf>,
        /// Auto-step delay for interactive sessions.
        #[arg(long)]
        step_timeout_ms: Option<u64>,
    },
    /// Exact soft values of a tabular MDP file.
    Oracle {
        mdp: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1e-12)]
        tolerance: f64,
        #[arg(long)]
        json: bool,
    },
}

/// Error the user can fix by changing the invocation.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
