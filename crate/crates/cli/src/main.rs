use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use csmr_cli::config::{load_config, parse_schedule, schedule_label, ExperimentConfig};
use csmr_cli::stages::{self, names, TableInputs};
use csmr_core::dataio::{DatasetKind, SplitName};
use csmr_core::error::Error;
use csmr_core::sensing::MatrixKind;

/// Compressed-domain multi-rate classification driver.
#[derive(Parser)]
#[command(name = "csmr", version, about)]
struct Cli {
    /// Configuration file (`key = value` lines, `#` comments).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOverrides {
    /// Dataset root directory (default: $CSMR_DATA_DIR or ./data).
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a binary sensing matrix file.
    GenMatrix {
        /// Matrix family: pwh or pc.
        #[arg(long)]
        kind: String,
        /// Seed for the PWH permutations (ignored for PC).
        #[arg(long)]
        seed: Option<u64>,
        /// Output path (default: <out_dir>/matrix_<kind>[_s<seed>].csmx).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a dataset and write an ingestion summary.
    Prepare {
        /// Dataset: mnist or cifar10.
        #[arg(long)]
        dataset: String,
        /// Dataset root directory holding mnist/ and cifar10/.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Measure a split against a matrix and write the measurement cache.
    Cache {
        #[arg(long)]
        dataset: String,
        /// Path to a matrix file from gen-matrix.
        #[arg(long)]
        matrix: PathBuf,
        /// Split to cache: train or test.
        #[arg(long, default_value = "train")]
        split: String,
        /// Output path (default: standard cache name in out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOverrides,
    },
    /// Train a classifier on a rate schedule.
    Train {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        matrix: PathBuf,
        /// Preset (4pt, 6pt, 10pt, 50pt) or explicit list m=10,51,...
        #[arg(long)]
        schedule: String,
        /// Training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output model path (default: standard model name in out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOverrides,
    },
    /// Evaluate a model at every measurement count and write the curve CSV.
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        dataset: String,
        /// Output directory for the curve CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOverrides,
    },
    /// Build the multi-rate vs single-rate comparison table.
    Table {
        #[arg(long)]
        dataset: String,
        /// Directory holding the standard-named models and matrices.
        #[arg(long)]
        models: Option<PathBuf>,
        /// Output directory for the markdown table.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOverrides,
    },
    /// Chain the full pipeline: matrices, caches, models, sweeps, tables.
    ReproAll {
        /// Restrict to one dataset (default: both mnist and cifar10).
        #[arg(long)]
        dataset: Option<String>,
        /// Output directory for all artifacts.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOverrides,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) => 1,
        Error::Format { .. } | Error::Io { .. } | Error::Dimension(_) => 2,
        Error::Numeric(_) => 3,
    }
}

fn base_config(cli_config: &Option<PathBuf>) -> csmr_core::Result<ExperimentConfig> {
    match cli_config {
        Some(path) => load_config(path),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(cli: Cli) -> csmr_core::Result<()> {
    let mut config = base_config(&cli.config)?;
    match cli.command {
        Command::GenMatrix { kind, seed, out } => {
            let kind: MatrixKind = kind.parse()?;
            if let Some(seed) = seed {
                config.matrix_seed = seed;
            }
            let path = out.unwrap_or_else(|| names::matrix(&config, kind));
            stages::ensure_matrix(&config, kind, &path)?;
        }
        Command::Prepare { dataset, dir } => {
            config.dataset = dataset.parse()?;
            if let Some(dir) = dir {
                config.data_dir = dir;
            }
            stages::prepare(&config)?;
        }
        Command::Cache {
            dataset,
            matrix,
            split,
            out,
            common,
        } => {
            config.dataset = dataset.parse()?;
            if let Some(dir) = common.data_dir {
                config.data_dir = dir;
            }
            let split = match split.as_str() {
                "train" => SplitName::Train,
                "test" => SplitName::Test,
                other => {
                    return Err(Error::invalid(format!(
                        "unknown split '{other}' (expected train or test)"
                    )))
                }
            };
            let kind = csmr_core::sensing::SensingMatrix::read_from(&matrix)?.kind();
            let path = out.unwrap_or_else(|| names::cache(&config, kind, split));
            stages::ensure_cache(&config, &matrix, split, &path)?;
        }
        Command::Train {
            dataset,
            matrix,
            schedule,
            seed,
            out,
            common,
        } => {
            config.dataset = dataset.parse()?;
            config.schedule = parse_schedule(&schedule)?;
            if let Some(seed) = seed {
                config.train_seed = seed;
            }
            if let Some(dir) = common.data_dir {
                config.data_dir = dir;
            }
            let kind = csmr_core::sensing::SensingMatrix::read_from(&matrix)?.kind();
            let path = out.unwrap_or_else(|| names::model(&config, kind, &config.schedule));
            stages::ensure_model(&config, &matrix, &config.schedule, &path)?;
        }
        Command::Sweep {
            model,
            matrix,
            dataset,
            out,
            common,
        } => {
            config.dataset = dataset.parse()?;
            if let Some(dir) = common.data_dir {
                config.data_dir = dir;
            }
            if let Some(out) = out {
                config.out_dir = out;
            }
            let label = schedule_label(&config.schedule);
            let path = names::sweep_csv(&config, &model);
            stages::run_sweep(&config, &matrix, &model, &label, &path)?;
        }
        Command::Table {
            dataset,
            models,
            out,
            common,
        } => {
            config.dataset = dataset.parse()?;
            if let Some(dir) = common.data_dir {
                config.data_dir = dir;
            }
            let mut lookup = config.clone();
            if let Some(models) = models {
                lookup.out_dir = models;
            }
            if let Some(out) = out {
                config.out_dir = out;
            }
            let pc = TableInputs::standard(&lookup, MatrixKind::Pc)?;
            let pwh = TableInputs::standard(&lookup, MatrixKind::Pwh)?;
            stages::run_table(&config, &pc, &pwh, &names::table_md(&config))?;
        }
        Command::ReproAll {
            dataset,
            out,
            common,
        } => {
            if let Some(dir) = common.data_dir {
                config.data_dir = dir;
            }
            if let Some(out) = out {
                config.out_dir = out;
            }
            let datasets: Vec<DatasetKind> = match dataset {
                Some(name) => vec![name.parse()?],
                None => vec![DatasetKind::Mnist, DatasetKind::Cifar10],
            };
            stages::repro_all(&config, &datasets)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
