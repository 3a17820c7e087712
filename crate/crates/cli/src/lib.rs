//! Library side of the `csmr` driver: experiment configuration and the
//! fingerprint-gated pipeline stages. The binary in `main.rs` is a thin
//! argument-parsing layer over these.

pub mod config;
pub mod stages;

pub use config::{load_config, parse_config, parse_schedule, schedule_label, ExperimentConfig};
