//! Compressed-domain image classification with a single multi-rate network.
//!
//! The crate simulates single-pixel-camera acquisition of 32x32 grayscale
//! images under fixed binary sensing matrices, assembles multi-rate training
//! sets by truncation and zero-padding, trains a 2-layer feedforward
//! classifier, and evaluates test accuracy at every measurement count from
//! 10 to 256.
//!
//! Modules map onto the processing stages:
//!
//! * [`sensing`] - binary sensing matrices (permuted Walsh-Hadamard and
//!   Partial-Complete) plus fast Walsh-Hadamard transform kernels.
//! * [`dataio`] - MNIST / CIFAR-10 ingestion and normalization to 32x32
//!   grayscale records.
//! * [`pipeline`] - measurement simulation, caching, rate schedules, and
//!   shuffled multi-rate training sets.
//! * [`model`] - the 256 -> 400 -> 10 tanh/softmax classifier, trained with
//!   Adam under a stepped learning-rate schedule.
//! * [`experiment`] - accuracy sweeps, comparison tables, and CSV/markdown
//!   reports.
//!
//! All randomness is drawn from seeded ChaCha8 streams so that every
//! artifact is reproducible from its configuration alone.

pub mod dataio;
pub mod error;
pub mod experiment;
pub mod fingerprint;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod sensing;

pub use error::{Error, Result};

/// Side length of every image handled by this crate.
pub const IMAGE_SIDE: usize = 32;
/// Pixel count of every image (and column count of every sensing matrix).
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
