//! Experiment configuration: a line-oriented `key = value` file with `#`
//! comments. Every run is reproducible from this file and the dataset
//! bytes alone; all randomness flows from the seeds recorded here.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use csmr_core::dataio::{DatasetKind, GrayscaleMode};
use csmr_core::error::{Error, Result};
use csmr_core::model::TrainConfig;
use csmr_core::pipeline::{preset_schedule, MeasurementScale, RateSchedule, ScheduleName};
use csmr_core::sensing::MatrixKind;

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub matrix: MatrixKind,
    pub matrix_seed: u64,
    pub schedule: RateSchedule,
    pub train_seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub lr_drop_factor: f64,
    pub lr_drop_period_epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub measurement_scale: MeasurementScale,
    pub grayscale: GrayscaleMode,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        ExperimentConfig {
            dataset: DatasetKind::Mnist,
            matrix: MatrixKind::Pc,
            matrix_seed: 1,
            schedule: preset_schedule("10pt").expect("preset"),
            train_seed: 1,
            batch_size: train.batch_size,
            epochs: train.epochs,
            initial_lr: train.initial_lr,
            lr_drop_factor: train.lr_drop_factor,
            lr_drop_period_epochs: train.lr_drop_period_epochs,
            adam_beta1: train.adam_beta1,
            adam_beta2: train.adam_beta2,
            adam_epsilon: train.adam_epsilon,
            measurement_scale: MeasurementScale::DivideByN,
            grayscale: GrayscaleMode::Luma601,
            data_dir: default_data_dir(),
            out_dir: PathBuf::from("out"),
        }
    }
}

/// `CSMR_DATA_DIR` or `./data`.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os("CSMR_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Parse a schedule value: a preset name or an explicit `m=10,51,...` list.
pub fn parse_schedule(value: &str) -> Result<RateSchedule> {
    if let Some(list) = value.strip_prefix("m=") {
        let points = list
            .split(',')
            .map(|tok| {
                tok.trim().parse::<usize>().map_err(|_| {
                    Error::invalid(format!("bad measurement count '{tok}' in schedule list"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        RateSchedule::custom(points)
    } else {
        preset_schedule(value)
    }
}

/// Stable label for artifact names: the preset name, or the point list for
/// custom schedules.
pub fn schedule_label(schedule: &RateSchedule) -> String {
    match schedule.name() {
        ScheduleName::Custom => {
            let mut label = String::from("m");
            for (i, p) in schedule.points().iter().enumerate() {
                if i > 0 {
                    label.push('-');
                }
                let _ = write!(label, "{p}");
            }
            label
        }
        name => name.as_str().to_string(),
    }
}

impl ExperimentConfig {
    /// The model-training subset of the configuration.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            initial_lr: self.initial_lr,
            lr_drop_factor: self.lr_drop_factor,
            lr_drop_period_epochs: self.lr_drop_period_epochs,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.train_seed,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_epsilon: self.adam_epsilon,
            ..TrainConfig::default()
        }
    }

    pub fn apply_line(&mut self, key: &str, value: &str, line_no: usize) -> Result<()> {
        let bad = |what: &str| {
            Error::invalid(format!("config line {line_no}: bad {what} value '{value}'"))
        };
        match key {
            "dataset" => self.dataset = value.parse()?,
            "matrix" => self.matrix = value.parse()?,
            "matrix_seed" => self.matrix_seed = value.parse().map_err(|_| bad("matrix_seed"))?,
            "schedule" => self.schedule = parse_schedule(value)?,
            "train_seed" => self.train_seed = value.parse().map_err(|_| bad("train_seed"))?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad("batch_size"))?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad("epochs"))?,
            "initial_lr" => self.initial_lr = value.parse().map_err(|_| bad("initial_lr"))?,
            "lr_drop_factor" => {
                self.lr_drop_factor = value.parse().map_err(|_| bad("lr_drop_factor"))?
            }
            "lr_drop_period_epochs" => {
                self.lr_drop_period_epochs =
                    value.parse().map_err(|_| bad("lr_drop_period_epochs"))?
            }
            "adam_beta1" => self.adam_beta1 = value.parse().map_err(|_| bad("adam_beta1"))?,
            "adam_beta2" => self.adam_beta2 = value.parse().map_err(|_| bad("adam_beta2"))?,
            "adam_epsilon" => {
                self.adam_epsilon = value.parse().map_err(|_| bad("adam_epsilon"))?
            }
            "measurement_scale" => self.measurement_scale = value.parse()?,
            "grayscale" => self.grayscale = value.parse()?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => {
                return Err(Error::invalid(format!(
                    "config line {line_no}: unknown key '{other}'"
                )))
            }
        }
        Ok(())
    }
}

/// Parse a config file's text. Lines are `key = value`; `#` starts a
/// comment; blank lines are skipped. Errors name the offending line.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::invalid(format!("config line {line_no}: expected 'key = value'"))
        })?;
        config.apply_line(key.trim(), value.trim(), line_no)?;
    }
    Ok(config)
}

/// Load a config file from disk.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_experiment_grid() {
        let config = ExperimentConfig::default();
        assert_eq!(config.epochs, 100);
        assert_eq!(config.initial_lr, 5e-5);
        assert_eq!(config.batch_size, 128);
        assert_eq!(config.schedule.points().len(), 10);
    }

    #[test]
    fn parses_keys_comments_and_blank_lines() {
        let text = "\
# experiment
dataset = cifar10
matrix = pwh   # permuted Walsh-Hadamard
matrix_seed = 9

schedule = m=10,51,256
epochs = 5
";
        let config = parse_config(text).unwrap();
        assert_eq!(config.dataset, DatasetKind::Cifar10);
        assert_eq!(config.matrix, MatrixKind::Pwh);
        assert_eq!(config.matrix_seed, 9);
        assert_eq!(config.schedule.points(), &[10, 51, 256]);
        assert_eq!(config.epochs, 5);
        assert_eq!(schedule_label(&config.schedule), "m10-51-256");
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let err = parse_config("dataset = mnist\nbogus = 1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("bogus"), "{msg}");
    }

    #[test]
    fn malformed_line_is_an_error() {
        let err = parse_config("dataset mnist\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn bad_value_is_an_error_with_line() {
        let err = parse_config("epochs = many\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }
}
