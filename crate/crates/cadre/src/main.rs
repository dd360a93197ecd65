//! Command-line entry point. Exit codes: 0 success, 2 invalid input,
//! 3 numerical failure.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use cadre::config::ExperimentConfig;
use cadre::error::{CadreError, Result};
use cadre::harness;

#[derive(Parser)]
#[command(
    name = "cadre",
    about = "Causal discovery and representation learning for time series",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from the configured generating process.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the generator seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        overwrite: bool,
        /// Also export the observations as x.csv.
        #[arg(long)]
        csv: bool,
    },
    /// Fit the model to a dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Extract causal graphs from a checkpoint.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Threshold override.
        #[arg(long)]
        tau: Option<f64>,
        /// Config supplying evaluation options (mask, radius).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Score graphs and representations against available references.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Directory produced by `extract`; re-extracts when omitted.
        #[arg(long)]
        graphs: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Wind reference CSV (x,y,u,v) for the surrogate metrics.
        #[arg(long)]
        wind: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Full multi-seed pipeline with aggregation.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        overwrite: bool,
    },
    /// Convert a numeric CSV into a dataset archive.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Optional x,y coordinates per variable.
        #[arg(long)]
        coords: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        overwrite: bool,
    },
    /// Render loss curves, adjacency heatmaps, and spatial overlays.
    Plot {
        /// A seed directory or an experiment output directory.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_eval(config: &Option<PathBuf>) -> Result<cadre::config::EvalConfig> {
    match config {
        Some(path) => Ok(ExperimentConfig::load(path)?.eval),
        None => Ok(cadre::config::EvalConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            config,
            out,
            seed,
            overwrite,
            csv,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let path = harness::cmd_generate(&cfg, &out, seed, overwrite, csv)?;
            println!("wrote {}", path.display());
        }
        Command::Train {
            config,
            dataset,
            out,
            seed,
            resume,
            overwrite,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let path = harness::cmd_train(&cfg, &dataset, &out, seed, resume.as_deref(), overwrite)?;
            println!("wrote {}", path.display());
        }
        Command::Extract {
            checkpoint,
            dataset,
            out,
            tau,
            config,
            overwrite,
        } => {
            let eval = load_eval(&config)?;
            let dir = harness::cmd_extract(&checkpoint, &dataset, &out, tau, &eval, overwrite)?;
            println!("wrote {}", dir.display());
        }
        Command::Evaluate {
            checkpoint,
            dataset,
            graphs,
            out,
            config,
            wind,
            tau,
        } => {
            let mut eval = load_eval(&config)?;
            if wind.is_some() {
                eval.wind_file = wind;
            }
            if tau.is_some() {
                eval.tau = tau;
            }
            let report = harness::cmd_evaluate(
                &checkpoint,
                &dataset,
                graphs.as_deref(),
                &eval,
                out.as_deref(),
            )?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Experiment {
            config,
            out,
            overwrite,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let record = harness::cmd_experiment(&cfg, &out, overwrite)?;
            let ok = record.records.iter().filter(|r| r.status == "ok").count();
            println!(
                "config {}: {}/{} seeds ok; table at {}",
                record.config_hash,
                ok,
                record.records.len(),
                out.join("table.txt").display()
            );
        }
        Command::Ingest {
            input,
            coords,
            out,
            overwrite,
        } => {
            let ds = harness::ingest_csv(&input, coords.as_deref())?;
            std::fs::create_dir_all(&out)?;
            let path = out.join("dataset.arz");
            if path.exists() && !overwrite {
                return Err(CadreError::InvalidConfig(format!(
                    "{} exists; pass --overwrite to replace it",
                    path.display()
                )));
            }
            ds.save(&path)?;
            println!("wrote {}", path.display());
        }
        Command::Plot { run, out } => {
            let files = harness::cmd_plot(&run, &out)?;
            for f in files {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
