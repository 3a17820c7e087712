//! Dataset ingestion: MNIST IDX files and CIFAR-10 binary batches,
//! normalized to 32x32 grayscale records with intensities in [0, 1].
//!
//! MNIST images are 28x28 and get two rows/columns of zeros on every side;
//! CIFAR-10 images are 32x32 RGB and get reduced to a single intensity
//! channel. Parsing is deterministic and order-preserving: record `i` of a
//! split is the `i`-th record of the source files.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::{IMAGE_PIXELS, IMAGE_SIDE};

const MNIST_SIDE: usize = 28;
const MNIST_IMAGES_MAGIC: u32 = 0x0000_0803;
const MNIST_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD_BYTES: usize = 1 + 3 * IMAGE_PIXELS;
pub const NUM_CLASSES: usize = 10;

/// A normalized 32x32 grayscale image with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    /// Row-major intensities in [0, 1], length 1024.
    pub pixels: Vec<f32>,
    /// Class index 0-9.
    pub label: u8,
}

/// A grayscale image of arbitrary side length, before padding.
#[derive(Debug, Clone, PartialEq)]
pub struct RawGray {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
    pub label: u8,
}

/// A 32x32 RGB image as three planar channels in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RawRgb {
    pub r: Vec<f32>,
    pub g: Vec<f32>,
    pub b: Vec<f32>,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitName {
    Train,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
        }
    }

    /// Expected record count per split, used to validate ingestion.
    pub fn expected_len(self, split: SplitName) -> usize {
        match (self, split) {
            (DatasetKind::Mnist, SplitName::Train) => 60_000,
            (DatasetKind::Mnist, SplitName::Test) => 10_000,
            (DatasetKind::Cifar10, SplitName::Train) => 50_000,
            (DatasetKind::Cifar10, SplitName::Test) => 10_000,
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetKind::Mnist),
            "cifar10" => Ok(DatasetKind::Cifar10),
            other => Err(Error::invalid(format!(
                "unknown dataset '{other}' (expected mnist or cifar10)"
            ))),
        }
    }
}

/// How to collapse RGB to a single intensity channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GrayscaleMode {
    /// BT.601 luma: 0.299 R + 0.587 G + 0.114 B. The default.
    Luma601,
    /// Plain channel mean.
    Mean,
}

impl GrayscaleMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GrayscaleMode::Luma601 => "luma601",
            GrayscaleMode::Mean => "mean",
        }
    }
}

impl std::str::FromStr for GrayscaleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "luma601" => Ok(GrayscaleMode::Luma601),
            "mean" => Ok(GrayscaleMode::Mean),
            other => Err(Error::invalid(format!(
                "unknown grayscale mode '{other}' (expected luma601 or mean)"
            ))),
        }
    }
}

/// An ordered, immutable list of normalized records.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub records: Vec<ImageRecord>,
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(path, offset as u64, "truncated header"))
}

/// Parse a pair of MNIST IDX files into 28x28 grayscale records.
///
/// Pixel bytes are scaled by 1/255; record `i` pairs image `i` with label
/// `i`. Counts come from the headers and must agree between the two files.
pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<Vec<RawGray>> {
    let images = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;

    let magic = read_be_u32(&images, 0, images_path)?;
    if magic != MNIST_IMAGES_MAGIC {
        return Err(Error::format(
            images_path,
            0,
            format!("bad magic {magic:#010x}, expected {MNIST_IMAGES_MAGIC:#010x}"),
        ));
    }
    let count = read_be_u32(&images, 4, images_path)? as usize;
    let rows = read_be_u32(&images, 8, images_path)? as usize;
    let cols = read_be_u32(&images, 12, images_path)? as usize;
    let pixel_bytes = count
        .checked_mul(rows * cols)
        .ok_or_else(|| Error::format(images_path, 4, "image dimensions overflow"))?;
    if images.len() != 16 + pixel_bytes {
        return Err(Error::format(
            images_path,
            images.len() as u64,
            format!("expected {} bytes, found {}", 16 + pixel_bytes, images.len()),
        ));
    }

    let lmagic = read_be_u32(&labels, 0, labels_path)?;
    if lmagic != MNIST_LABELS_MAGIC {
        return Err(Error::format(
            labels_path,
            0,
            format!("bad magic {lmagic:#010x}, expected {MNIST_LABELS_MAGIC:#010x}"),
        ));
    }
    let lcount = read_be_u32(&labels, 4, labels_path)? as usize;
    if labels.len() != 8 + lcount {
        return Err(Error::format(
            labels_path,
            labels.len() as u64,
            format!("expected {} bytes, found {}", 8 + lcount, labels.len()),
        ));
    }
    if lcount != count {
        return Err(Error::format(
            labels_path,
            4,
            format!("label count {lcount} does not match image count {count}"),
        ));
    }

    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let label = labels[8 + i];
        if label > 9 {
            return Err(Error::format(
                labels_path,
                (8 + i) as u64,
                format!("label byte {label} out of range 0-9"),
            ));
        }
        let start = 16 + i * rows * cols;
        let pixels = images[start..start + rows * cols]
            .iter()
            .map(|&b| b as f32 / 255.0)
            .collect();
        records.push(RawGray {
            width: cols,
            height: rows,
            pixels,
            label,
        });
    }
    Ok(records)
}

/// Zero-pad a 28x28 image to 32x32: the input occupies rows 2-29 and
/// columns 2-29, all border pixels are 0.
pub fn pad_to_32(image: &RawGray) -> Result<ImageRecord> {
    if image.width != MNIST_SIDE || image.height != MNIST_SIDE {
        return Err(Error::Dimension(format!(
            "pad_to_32 expects 28x28 input, got {}x{}",
            image.height, image.width
        )));
    }
    let mut pixels = vec![0.0f32; IMAGE_PIXELS];
    for r in 0..MNIST_SIDE {
        for c in 0..MNIST_SIDE {
            pixels[(r + 2) * IMAGE_SIDE + c + 2] = image.pixels[r * MNIST_SIDE + c];
        }
    }
    Ok(ImageRecord {
        pixels,
        label: image.label,
    })
}

/// Parse CIFAR-10 binary batch files: 3073-byte records, one label byte
/// followed by 1024 R, 1024 G, 1024 B pixel bytes (row-major planes),
/// scaled by 1/255. Records are concatenated in the order the paths are
/// given.
pub fn load_cifar10(batch_paths: &[PathBuf]) -> Result<Vec<RawRgb>> {
    let mut records = Vec::new();
    for path in batch_paths {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() % CIFAR_RECORD_BYTES != 0 {
            return Err(Error::format(
                path,
                bytes.len() as u64,
                format!(
                    "file length {} is not a multiple of {CIFAR_RECORD_BYTES}",
                    bytes.len()
                ),
            ));
        }
        for (idx, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
            let label = rec[0];
            if label > 9 {
                return Err(Error::format(
                    path,
                    (idx * CIFAR_RECORD_BYTES) as u64,
                    format!("label byte {label} out of range 0-9"),
                ));
            }
            let plane = |k: usize| -> Vec<f32> {
                rec[1 + k * IMAGE_PIXELS..1 + (k + 1) * IMAGE_PIXELS]
                    .iter()
                    .map(|&b| b as f32 / 255.0)
                    .collect()
            };
            records.push(RawRgb {
                r: plane(0),
                g: plane(1),
                b: plane(2),
                label,
            });
        }
    }
    Ok(records)
}

/// Collapse an RGB image to one intensity channel, clamped to [0, 1].
pub fn to_grayscale(rgb: &RawRgb, mode: GrayscaleMode) -> ImageRecord {
    let pixels = (0..IMAGE_PIXELS)
        .map(|i| {
            let v = match mode {
                GrayscaleMode::Luma601 => {
                    0.299 * rgb.r[i] + 0.587 * rgb.g[i] + 0.114 * rgb.b[i]
                }
                GrayscaleMode::Mean => (rgb.r[i] + rgb.g[i] + rgb.b[i]) / 3.0,
            };
            v.clamp(0.0, 1.0)
        })
        .collect();
    ImageRecord {
        pixels,
        label: rgb.label,
    }
}

/// Canonical file names for a split inside a dataset directory.
fn mnist_paths(dir: &Path, split: SplitName) -> (PathBuf, PathBuf) {
    match split {
        SplitName::Train => (
            dir.join("train-images-idx3-ubyte"),
            dir.join("train-labels-idx1-ubyte"),
        ),
        SplitName::Test => (
            dir.join("t10k-images-idx3-ubyte"),
            dir.join("t10k-labels-idx1-ubyte"),
        ),
    }
}

fn cifar_paths(dir: &Path, split: SplitName) -> Vec<PathBuf> {
    // Accept both the extracted archive layout and a flat directory.
    let base = if dir.join("cifar-10-batches-bin").is_dir() {
        dir.join("cifar-10-batches-bin")
    } else {
        dir.to_path_buf()
    };
    match split {
        SplitName::Train => (1..=5).map(|i| base.join(format!("data_batch_{i}.bin"))).collect(),
        SplitName::Test => vec![base.join("test_batch.bin")],
    }
}

/// The source files a split is parsed from, in parse order.
pub fn split_files(kind: DatasetKind, dir: &Path, split: SplitName) -> Vec<PathBuf> {
    match kind {
        DatasetKind::Mnist => {
            let (images, labels) = mnist_paths(dir, split);
            vec![images, labels]
        }
        DatasetKind::Cifar10 => cifar_paths(dir, split),
    }
}

/// Load a full normalized split from a dataset directory, validating the
/// canonical record counts (MNIST 60000/10000, CIFAR-10 50000/10000).
pub fn load_split(
    kind: DatasetKind,
    dir: &Path,
    split: SplitName,
    gray: GrayscaleMode,
) -> Result<DatasetSplit> {
    let records: Vec<ImageRecord> = match kind {
        DatasetKind::Mnist => {
            let (images, labels) = mnist_paths(dir, split);
            load_mnist(&images, &labels)?
                .iter()
                .map(pad_to_32)
                .collect::<Result<_>>()?
        }
        DatasetKind::Cifar10 => load_cifar10(&cifar_paths(dir, split))?
            .iter()
            .map(|rgb| to_grayscale(rgb, gray))
            .collect(),
    };
    let expected = kind.expected_len(split);
    if records.len() != expected {
        return Err(Error::format(
            dir,
            0,
            format!(
                "{} {} split has {} records, expected {expected}",
                kind.as_str(),
                split.as_str(),
                records.len()
            ),
        ));
    }
    Ok(DatasetSplit {
        name: split,
        records,
    })
}
