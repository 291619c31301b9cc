//! Experiment runner: dataset generation, training, evaluation, run
//! comparison, and ablation sweeps over the pruning configuration.

use anyhow::Result;
use clap::{Parser, Subcommand};
use stamp_cli::config::ExperimentConfig;
use stamp_cli::{commands, runs};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "stamp",
    about = "Train and benchmark SID-based generative recommenders with in-flight token pruning",
    version
)]
struct Cli {
    /// Output root (overrides the STAMP_OUT env var and the config's
    /// output_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate dataset artifacts: interactions, codebooks, catalog, manifest.
    Gen {
        #[arg(long)]
        config: PathBuf,
        /// Override the data seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one run and write its artifacts under <root>/runs/<name>.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run directory name.
        #[arg(long)]
        run: String,
        /// Override the training seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-evaluate a finished run's checkpoint on the test split.
    Eval {
        /// Path to the run directory.
        run: PathBuf,
        /// Comma-separated 1-based layer indices whose attention heatmaps
        /// to export as CSV.
        #[arg(long)]
        dump_attention: Option<String>,
    },
    /// Compare finished runs (baseline first) into a CSV table.
    Compare {
        /// Run directories; the first is the baseline.
        runs: Vec<PathBuf>,
        /// Also write the table to this file.
        #[arg(long)]
        out_file: Option<PathBuf>,
    },
    /// Train the strategy/alpha/layer grid plus a baseline and emit
    /// <root>/ablation.csv.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated strategies (default: all five).
        #[arg(long, default_value = "sap,l2,attention_only,max_pool,avg_pool")]
        strategies: String,
        /// Comma-separated retention ratios.
        #[arg(long, default_value = "0.3333333333333333")]
        alphas: String,
        /// Comma-separated pruning layers.
        #[arg(long, default_value = "1")]
        layers: String,
        /// Override the training seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load(config: &PathBuf, seed_override: Option<u64>, data_seed: bool) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(seed) = seed_override {
        if data_seed {
            cfg.data.seed = seed;
        } else {
            cfg.train.seed = seed;
        }
    }
    Ok(cfg)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Gen { config, seed } => {
            let cfg = load(&config, seed, true)?;
            let root = runs::resolve_root(cli.out.as_deref(), &cfg);
            commands::cmd_gen(&cfg, &root)
        }
        Cmd::Train { config, run, seed } => {
            let cfg = load(&config, seed, false)?;
            let root = runs::resolve_root(cli.out.as_deref(), &cfg);
            commands::cmd_train(&cfg, &root, &run)
        }
        Cmd::Eval { run, dump_attention } => commands::cmd_eval(&run, dump_attention.as_deref()),
        Cmd::Compare { runs, out_file } => commands::cmd_compare(&runs, out_file.as_deref()),
        Cmd::Ablate {
            config,
            strategies,
            alphas,
            layers,
            seed,
        } => {
            let cfg = load(&config, seed, false)?;
            let root = runs::resolve_root(cli.out.as_deref(), &cfg);
            let strategies: Vec<String> =
                strategies.split(',').map(|s| s.trim().to_string()).collect();
            let alphas: Vec<f64> = alphas
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(Into::into))
                .collect::<Result<_>>()?;
            let layers: Vec<usize> = layers
                .split(',')
                .map(|s| s.trim().parse::<usize>().map_err(Into::into))
                .collect::<Result<_>>()?;
            commands::cmd_ablate(&cfg, &root, &strategies, &alphas, &layers)
        }
    }
}
