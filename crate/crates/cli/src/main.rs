mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use foresight::domain::Date;

use crate::exit::Exit;

#[derive(Debug, Parser)]
#[command(name = "foresight", version, about = "Generate, estimate, resolve and score event forecasts")]
pub struct Cli {
    /// Configuration file; defaults to $FORESIGHT_CONFIG when set.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Ledger file [config: ledger_path; default: ledger.jsonl].
    #[arg(long, global = true, value_name = "FILE")]
    pub ledger: Option<PathBuf>,
    /// Serve model answers, trends and headlines from a fixture directory
    /// (llm/*.jsonl, trends.jsonl, headlines.jsonl) [config: mock_fixtures_dir].
    #[arg(long, global = true, value_name = "DIR")]
    pub mock: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Propose new forecasts for a topic.
    Generate {
        #[arg(long)]
        topic: String,
        #[arg(short = 'n', long = "count")]
        count: usize,
        /// Creation date; timeframes may not open before it [default: today].
        #[arg(long)]
        as_of: Option<Date>,
    },
    /// Estimate probabilities for forecasts in the ledger.
    Estimate {
        #[arg(long, conflicts_with = "all_pending", required_unless_present = "all_pending")]
        id: Option<String>,
        /// Every forecast without an estimate.
        #[arg(long)]
        all_pending: bool,
        /// Write per-stage traces to traces/<id>.jsonl next to the ledger.
        #[arg(long)]
        trace: bool,
        /// Re-estimate forecasts that already have an estimate.
        #[arg(long)]
        force: bool,
        /// Forecasts estimated in parallel [config: jobs; default: 1].
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Rescale mutually exclusive sets whose probabilities sum above one.
    Reconcile,
    /// Resolve forecasts whose window has opened.
    Factcheck {
        #[arg(long)]
        as_of: Date,
        /// First screen out forecasts whose event was reported before they
        /// were made.
        #[arg(long)]
        screen: bool,
    },
    /// Fit the calibration model on resolved forecasts.
    Calibrate {
        #[arg(long)]
        seed: u64,
        #[arg(long = "C", value_name = "C")]
        c: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        /// Model file [config: model_path; default: svr_model.json next to the ledger].
        #[arg(long)]
        model: Option<PathBuf>,
        /// Only use outcomes checked on or before this date.
        #[arg(long)]
        as_of: Option<Date>,
    },
    /// Write calibration, topic and score tables plus a reliability chart.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// Score table (method,n,brier) to report instead of ledger scores.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// [config: calibration_bins; default: 10]
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        as_of: Option<Date>,
    },
    /// List forecasts with their lifecycle status.
    Status,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(Exit::Usage as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit as u8)
        }
    }
}
