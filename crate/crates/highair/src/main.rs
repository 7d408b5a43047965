use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use highair::error::{Error, Result};
use highair::experiment::{self, ExperimentConfig};
use highair::frame::parse_timestamp;
use highair::pipeline::{self, SplitName};
use highair::synth;
use highair_core::{AblationFlag, TrainConfig};

#[derive(Parser)]
#[command(name = "highair", version, about = "Hierarchical graph air-quality forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Remove a component: weather, poi, hierarchy, city-lstm, dynamic.
        #[arg(long, value_parser = parse_flag)]
        ablate: Vec<AblationFlag>,
    },
    /// Forecast the hours after `--at` (the last observed hour).
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        at: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on one split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run HA, HighAir and ablations over several seeds.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validation MAE and graph sizes across λ values.
    SweepLambda {
        #[arg(long)]
        config: PathBuf,
        /// `start:end:step` or a comma-separated list.
        #[arg(long, default_value = "1.0:1.5:0.1")]
        values: String,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
    },
}

fn parse_flag(s: &str) -> std::result::Result<AblationFlag, String> {
    AblationFlag::parse(s).ok_or_else(|| format!("unknown component `{s}`"))
}

fn read_train_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.into(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { spec, seed, out } => {
            let spec = synth::read_spec(&spec)?;
            let corpus = synth::generate(&spec, seed)?;
            synth::write_corpus(&corpus, &out)?;
            println!("wrote {} stations x {} hours to {}", corpus.stations.len(), spec.hours, out.display());
        }
        Command::Train {
            config,
            data,
            out,
            ablate,
        } => {
            let mut cfg = read_train_config(&config)?;
            for f in ablate {
                if !cfg.ablate.contains(&f) {
                    cfg.ablate.push(f);
                }
            }
            let outcome = pipeline::run_train(&data, &cfg, &out)?;
            match outcome.best_epoch {
                Some(e) => println!("best epoch {e}; checkpoint in {}", out.display()),
                None => println!("checkpoint in {}", out.display()),
            }
        }
        Command::Forecast {
            checkpoint,
            data,
            at,
            out,
        } => {
            let at = parse_timestamp(&at).map_err(|e| Error::Validation(e.to_string()))?;
            pipeline::run_forecast(&checkpoint, &data, at, &out)?;
        }
        Command::Evaluate {
            checkpoint,
            data,
            split,
            out,
        } => {
            for s in pipeline::run_evaluate(&checkpoint, &data, split, &out)? {
                for h in &s.horizons {
                    println!(
                        "{:<8} h{:<3} mae {:>9.4}  rmse {:>9.4}",
                        s.city.as_deref().unwrap_or("all"),
                        h.horizon,
                        h.mae,
                        h.rmse
                    );
                }
            }
        }
        Command::Experiment { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = experiment::run_experiment(&cfg, &out)?;
            for m in &report.summary {
                let cells: Vec<String> = m.mean[0]
                    .horizons
                    .iter()
                    .map(|h| format!("h{} {:.3}", h.horizon, h.mae))
                    .collect();
                println!("{:<24} {}", m.method, cells.join("  "));
            }
        }
        Command::SweepLambda { config, values, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let values = experiment::parse_values(&values)?;
            let rows = experiment::lambda_sweep(&cfg, &values, &out)?;
            print!("{}", experiment::sweep_csv(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
