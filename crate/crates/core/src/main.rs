use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use lrcompose::study::{self, correlate, render_correlations, ResultsTable, StudyConfig};
use lrcompose::Result;

/// Low-rank adapter composition studies on a frozen toy transformer.
#[derive(Parser)]
#[command(name = "lrcompose", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic source datasets, the combined datasets and a manifest.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `data_seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train adapters for every dataset and seed (or one of each).
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Train only this seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Train only this dataset.
        #[arg(long)]
        dataset: Option<String>,
        /// Skip runs that already have a manifest.
        #[arg(long)]
        missing_only: bool,
    },
    /// Evaluate the study matrix and write result tables.
    RunStudy {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Evaluate a single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Generate data and train runs that are missing instead of failing.
        #[arg(long)]
        train_missing: bool,
    },
    /// Pearson and Spearman correlation between the CE columns of two result tables.
    Correlate { table_a: PathBuf, table_b: PathBuf },
    /// Print the default (toy) study configuration.
    DefaultConfig,
}

fn load_config(path: Option<&Path>) -> Result<StudyConfig> {
    let cfg = match path {
        Some(p) => StudyConfig::load(p)?,
        None => StudyConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, seed, out } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.data_seed = s;
            }
            let manifest = study::gen_data(&cfg, &out)?;
            for d in &manifest.dataset {
                println!("{:<24} {:<9} train {:>6}  validation {:>6}  test {:>6}", d.name, d.kind, d.train, d.validation, d.test);
            }
        }
        Command::Train {
            config,
            seed,
            out,
            dataset,
            missing_only,
        } => {
            let cfg = load_config(config.as_deref())?;
            for dir in study::train(&cfg, &out, dataset.as_deref(), seed, missing_only)? {
                println!("{}", dir.display());
            }
        }
        Command::RunStudy {
            config,
            seed,
            out,
            train_missing,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            for (name, table) in study::run_study(&cfg, &out, train_missing)? {
                println!("== {name}\n{}", table.render_text());
            }
        }
        Command::Correlate { table_a, table_b } => {
            let cs = correlate(&ResultsTable::read_csv(&table_a)?, &ResultsTable::read_csv(&table_b)?)?;
            print!("{}", render_correlations(&cs));
        }
        Command::DefaultConfig => print!("{}", StudyConfig::default().to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
