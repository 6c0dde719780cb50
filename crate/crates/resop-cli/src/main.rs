//! Command-line driver: residual operator learning experiments from a single
//! strict config file. Human-readable progress goes to stderr; machine
//! artifacts (datasets, checkpoints, CSV reports) only to files.

mod commands;
mod config;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use config::ExperimentConfig;
use std::path::PathBuf;

const CONFIG_ENV: &str = "RESOP_CONFIG";

#[derive(Parser)]
#[command(
    name = "resop",
    about = "Residual operator learning for PDE surrogates: data generation, retrieval, training, and analysis",
    version
)]
struct Cli {
    /// Path to the experiment config (TOML). Falls back to $RESOP_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset described by [data].
    Datagen,
    /// Build the retrieval index over the training split and report nearest neighbors.
    Index,
    /// Empirically select the initial auxiliary sampling range.
    SuggestK,
    /// Train one model in the configured mode; writes model.dphm and train_report.csv.
    Train,
    /// Evaluate the trained checkpoint on the test split.
    Eval,
    /// Five repeated evaluations with random top-10 auxiliaries.
    EvalRobust,
    /// Zero-shot resolution generalization: train coarse, evaluate fine, both modes.
    Genres,
    /// Output-distance vs similarity-rank curve.
    AnalyzeRank,
    /// PCA label-distribution study, direct vs residual.
    AnalyzePca,
    /// Train direct and residual under identical settings and report the gain.
    Compare,
}

fn config_path(cli: &Cli) -> Result<PathBuf> {
    if let Some(p) = &cli.config {
        return Ok(p.clone());
    }
    if let Ok(p) = std::env::var(CONFIG_ENV) {
        return Ok(PathBuf::from(p));
    }
    bail!("no config given: pass --config <path> or set {CONFIG_ENV}");
}

fn run(cli: Cli) -> Result<()> {
    let config = ExperimentConfig::load(&config_path(&cli)?)?;
    match cli.command {
        Command::Datagen => commands::datagen(&config),
        Command::Index => commands::index(&config),
        Command::SuggestK => commands::suggest_k(&config),
        Command::Train => commands::train_cmd(&config),
        Command::Eval => commands::eval(&config),
        Command::EvalRobust => commands::eval_robust(&config),
        Command::Genres => commands::genres(&config),
        Command::AnalyzeRank => commands::analyze_rank(&config),
        Command::AnalyzePca => commands::analyze_pca(&config),
        Command::Compare => commands::compare(&config),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        // One line, whitespace-collapsed, so scripts can match on it.
        let message = format!("{err:#}")
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        eprintln!("error: {message}");
        std::process::exit(1);
    }
}
