//! Single-pixel measurement simulation, caching, and multi-rate training
//! sets.
//!
//! Measuring an image against the first 256 rows of a sensing matrix gives
//! its full measurement vector `y`, with `y[i] = (row_i . pixels) / 1024`
//! so every entry stays in [0, 1]. Lower measurement counts are nested
//! prefixes of `y`: a training or test input for count `m` is `y` with
//! entries `m..` zeroed. A multi-rate training set takes every image at
//! every count of a rate schedule and globally shuffles the examples;
//! batches grouped by rate are rejected by construction because the builder
//! always emits a shuffled order.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::dataio::{DatasetSplit, ImageRecord};
use crate::error::{Error, Result};
use crate::rng;
use crate::sensing::{SensingMatrix, FORMAT_VERSION};
use crate::IMAGE_PIXELS;

/// Smallest measurement count in the operating range.
pub const M_MIN: usize = 10;
/// Largest measurement count; also the network input dimension for
/// multi-rate models.
pub const M_MAX: usize = 256;

/// Magic bytes of the measurement cache file format.
pub const CACHE_MAGIC: &[u8; 4] = b"CSMC";

/// How raw pattern sums are scaled into measurement values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MeasurementScale {
    /// Divide by the pixel count (1024), keeping entries in [0, 1]. Default.
    DivideByN,
    /// Leave the raw sums untouched (for sensitivity experiments).
    None,
}

impl MeasurementScale {
    pub fn as_str(self) -> &'static str {
        match self {
            MeasurementScale::DivideByN => "n",
            MeasurementScale::None => "none",
        }
    }

    fn factor(self) -> f64 {
        match self {
            MeasurementScale::DivideByN => 1.0 / IMAGE_PIXELS as f64,
            MeasurementScale::None => 1.0,
        }
    }
}

impl std::str::FromStr for MeasurementScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n" => Ok(MeasurementScale::DivideByN),
            "none" => Ok(MeasurementScale::None),
            other => Err(Error::invalid(format!(
                "unknown measurement scale '{other}' (expected n or none)"
            ))),
        }
    }
}

/// The full 256-entry measurement vector of one image, with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct FullMeasurement {
    pub y: Vec<f32>,
    pub label: u8,
}

/// Measure one image against the first 256 rows of a matrix.
///
/// Accumulation is sequential over pixel index in f64, then rounded to f32,
/// so results are deterministic and match any oracle using the same order.
pub fn measure_full(matrix: &SensingMatrix, image: &ImageRecord) -> Result<FullMeasurement> {
    measure_full_scaled(matrix, image, MeasurementScale::DivideByN)
}

pub fn measure_full_scaled(
    matrix: &SensingMatrix,
    image: &ImageRecord,
    scale: MeasurementScale,
) -> Result<FullMeasurement> {
    if matrix.n() != IMAGE_PIXELS {
        return Err(Error::Dimension(format!(
            "matrix has n = {}, expected {IMAGE_PIXELS}",
            matrix.n()
        )));
    }
    if matrix.num_rows() < M_MAX {
        return Err(Error::Dimension(format!(
            "matrix has {} rows, need at least {M_MAX}",
            matrix.num_rows()
        )));
    }
    if image.pixels.len() != IMAGE_PIXELS {
        return Err(Error::Dimension(format!(
            "image has {} pixels, expected {IMAGE_PIXELS}",
            image.pixels.len()
        )));
    }
    let factor = scale.factor();
    let y = (0..M_MAX)
        .map(|i| (row_dot(matrix.row_words(i), &image.pixels) * factor) as f32)
        .collect();
    Ok(FullMeasurement {
        y,
        label: image.label,
    })
}

/// Sum of the pixels selected by the set bits of one packed row.
fn row_dot(words: &[u64], pixels: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (w_idx, &w) in words.iter().enumerate() {
        let base = w_idx * 64;
        for bit in 0..64 {
            if (w >> bit) & 1 == 1 {
                acc += pixels[base + bit] as f64;
            }
        }
    }
    acc
}

/// Measure every record of a split; parallel over images, output ordered
/// by image index.
pub fn measure_split(
    split: &DatasetSplit,
    matrix: &SensingMatrix,
    scale: MeasurementScale,
) -> Result<Vec<FullMeasurement>> {
    split
        .records
        .par_iter()
        .map(|rec| measure_full_scaled(matrix, rec, scale))
        .collect()
}

/// Copy entries `0..m` of a full measurement and zero the rest; the result
/// always has length 256.
pub fn truncate_pad(y: &[f32], m: usize) -> Result<Vec<f32>> {
    if y.len() != M_MAX {
        return Err(Error::Dimension(format!(
            "measurement vector has length {}, expected {M_MAX}",
            y.len()
        )));
    }
    if m == 0 || m > M_MAX {
        return Err(Error::invalid(format!(
            "measurement count {m} out of range 1-{M_MAX}"
        )));
    }
    let mut out = vec![0.0f32; M_MAX];
    out[..m].copy_from_slice(&y[..m]);
    Ok(out)
}

/// Named rate-schedule presets from the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScheduleName {
    FourPoint,
    SixPoint,
    TenPoint,
    FiftyPoint,
    Custom,
}

impl ScheduleName {
    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleName::FourPoint => "4pt",
            ScheduleName::SixPoint => "6pt",
            ScheduleName::TenPoint => "10pt",
            ScheduleName::FiftyPoint => "50pt",
            ScheduleName::Custom => "custom",
        }
    }
}

/// A strictly increasing list of measurement counts to train on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RateSchedule {
    points: Vec<usize>,
    name: ScheduleName,
}

impl RateSchedule {
    fn validated(points: Vec<usize>, name: ScheduleName) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("rate schedule must be nonempty"));
        }
        for w in points.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::invalid(format!(
                    "rate schedule must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if points[0] < M_MIN || *points.last().unwrap() > M_MAX {
            return Err(Error::invalid(format!(
                "rate schedule points must lie in [{M_MIN}, {M_MAX}], got {points:?}"
            )));
        }
        Ok(RateSchedule { points, name })
    }

    /// A custom schedule from an explicit point list.
    pub fn custom(points: Vec<usize>) -> Result<Self> {
        Self::validated(points, ScheduleName::Custom)
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn name(&self) -> ScheduleName {
        self.name
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// The preset schedules: every preset contains both 10 and 256.
pub fn preset_schedule(name: &str) -> Result<RateSchedule> {
    let (points, tag): (Vec<usize>, ScheduleName) = match name {
        "4pt" => (vec![10, 51, 102, 256], ScheduleName::FourPoint),
        "6pt" => (vec![10, 20, 51, 102, 150, 256], ScheduleName::SixPoint),
        "10pt" => (
            vec![10, 18, 26, 34, 42, 51, 75, 102, 180, 256],
            ScheduleName::TenPoint,
        ),
        "50pt" => {
            let mut pts: Vec<usize> = (10..=250).step_by(5).collect();
            pts.push(256);
            (pts, ScheduleName::FiftyPoint)
        }
        other => {
            return Err(Error::invalid(format!(
                "unknown schedule preset '{other}' (expected 4pt, 6pt, 10pt or 50pt)"
            )))
        }
    };
    RateSchedule::validated(points, tag)
}

/// A globally shuffled multi-rate training set.
///
/// Examples are materialized lazily: the 256-entry vectors of the source
/// images are stored once and each example is an (image index, count) pair;
/// the pair list is the Fisher-Yates shuffle of the image-major, count-minor
/// enumeration under `shuffle_seed`.
#[derive(Debug, Clone)]
pub struct MultiRateSet {
    measurements: Arc<Vec<FullMeasurement>>,
    pairs: Vec<(u32, u16)>,
    shuffle_seed: u64,
    schedule: RateSchedule,
}

impl MultiRateSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn shuffle_seed(&self) -> u64 {
        self.shuffle_seed
    }

    pub fn schedule(&self) -> &RateSchedule {
        &self.schedule
    }

    /// The shuffled (image index, measurement count) pair of example `i`.
    pub fn pair(&self, i: usize) -> (u32, u16) {
        self.pairs[i]
    }

    /// Zero-copy view of example `i`: the full measurement vector, the
    /// originating count `m` (entries `m..` must be treated as zero), and
    /// the label.
    pub fn parts(&self, i: usize) -> (&[f32], usize, u8) {
        let (img, m) = self.pairs[i];
        let meas = &self.measurements[img as usize];
        (&meas.y, m as usize, meas.label)
    }

    /// Materialize example `i` as a padded length-256 input vector.
    pub fn input_vec(&self, i: usize) -> Vec<f32> {
        let (y, m, _) = self.parts(i);
        truncate_pad(y, m).expect("stored pair is valid")
    }
}

/// Assemble a multi-rate set from already-measured vectors.
pub fn multirate_from_measurements(
    measurements: Arc<Vec<FullMeasurement>>,
    schedule: RateSchedule,
    shuffle_seed: u64,
) -> MultiRateSet {
    let mut pairs = Vec::with_capacity(measurements.len() * schedule.len());
    for img in 0..measurements.len() as u32 {
        for &m in schedule.points() {
            pairs.push((img, m as u16));
        }
    }
    let mut rng = rng::rng_from_seed(shuffle_seed);
    rng::shuffle(&mut rng, &mut pairs);
    MultiRateSet {
        measurements,
        pairs,
        shuffle_seed,
        schedule,
    }
}

/// Measure a split and assemble its shuffled multi-rate training set.
pub fn build_multirate(
    split: &DatasetSplit,
    matrix: &SensingMatrix,
    schedule: &RateSchedule,
    shuffle_seed: u64,
) -> Result<MultiRateSet> {
    let measurements = measure_split(split, matrix, MeasurementScale::DivideByN)?;
    Ok(multirate_from_measurements(
        Arc::new(measurements),
        schedule.clone(),
        shuffle_seed,
    ))
}

/// Write a measurement cache: magic "CSMC", u32 LE version, u64 LE matrix
/// fingerprint, u32 LE record count, then per record one label byte and
/// 256 f32 LE measurement values.
pub fn write_cache(path: &Path, matrix_fingerprint: u64, records: &[FullMeasurement]) -> Result<()> {
    let mut out = Vec::with_capacity(20 + records.len() * (1 + M_MAX * 4));
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&matrix_fingerprint.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for rec in records {
        debug_assert_eq!(rec.y.len(), M_MAX);
        out.push(rec.label);
        for &v in &rec.y {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a measurement cache, checking the stored matrix fingerprint when an
/// expected one is supplied.
pub fn read_cache(
    path: &Path,
    expected_fingerprint: Option<u64>,
) -> Result<(u64, Vec<FullMeasurement>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 {
        return Err(Error::format(path, bytes.len() as u64, "truncated header"));
    }
    if &bytes[0..4] != CACHE_MAGIC {
        return Err(Error::format(path, 0, "bad magic, expected CSMC"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::format(path, 4, format!("unsupported version {version}")));
    }
    let fingerprint = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    if let Some(expected) = expected_fingerprint {
        if fingerprint != expected {
            return Err(Error::format(
                path,
                8,
                format!(
                    "matrix fingerprint {fingerprint:#018x} does not match expected {expected:#018x}"
                ),
            ));
        }
    }
    let count = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let record_bytes = 1 + M_MAX * 4;
    let expected_len = 20 + count * record_bytes;
    if bytes.len() != expected_len {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            format!("expected {expected_len} bytes, found {}", bytes.len()),
        ));
    }
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let start = 20 + i * record_bytes;
        let label = bytes[start];
        let y = bytes[start + 1..start + record_bytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(FullMeasurement { y, label });
    }
    Ok((fingerprint, records))
}

/// Measure a split and persist the vectors, keyed to the matrix by its
/// fingerprint. Reloading reproduces bit-identical vectors.
pub fn cache_measurements(
    split: &DatasetSplit,
    matrix: &SensingMatrix,
    path: &Path,
    scale: MeasurementScale,
) -> Result<()> {
    let records = measure_split(split, matrix, scale)?;
    write_cache(path, matrix.fingerprint(), &records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::SplitName;
    use crate::sensing::build_pc;

    fn random_image(seed: u64) -> ImageRecord {
        let mut rng = rng::rng_from_seed(seed);
        ImageRecord {
            pixels: (0..IMAGE_PIXELS)
                .map(|_| rng::uniform_unit(&mut rng) as f32)
                .collect(),
            label: (seed % 10) as u8,
        }
    }

    #[test]
    fn zero_image_measures_zero() {
        let pc = build_pc(IMAGE_PIXELS).unwrap();
        let img = ImageRecord {
            pixels: vec![0.0; IMAGE_PIXELS],
            label: 0,
        };
        let meas = measure_full(&pc, &img).unwrap();
        assert!(meas.y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pc_row_zero_gives_mean_intensity() {
        let pc = build_pc(IMAGE_PIXELS).unwrap();
        let ones = ImageRecord {
            pixels: vec![1.0; IMAGE_PIXELS],
            label: 3,
        };
        let meas = measure_full(&pc, &ones).unwrap();
        assert_eq!(meas.y[0], 1.0);
        assert_eq!(meas.label, 3);

        let img = random_image(17);
        let meas = measure_full(&pc, &img).unwrap();
        let mean: f64 = img.pixels.iter().map(|&v| v as f64).sum::<f64>() / IMAGE_PIXELS as f64;
        assert_eq!(meas.y[0], mean as f32);
        assert!(meas.y.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn measurement_matches_naive_dot_oracle_exactly() {
        let pc = build_pc(IMAGE_PIXELS).unwrap();
        let img = random_image(5);
        let meas = measure_full(&pc, &img).unwrap();
        for i in 0..M_MAX {
            let mut acc = 0.0f64;
            for j in 0..IMAGE_PIXELS {
                if pc.bit(i, j) == 1 {
                    acc += img.pixels[j] as f64;
                }
            }
            let expected = (acc / IMAGE_PIXELS as f64) as f32;
            assert_eq!(meas.y[i], expected, "row {i}");
        }
    }

    #[test]
    fn truncate_pad_semantics() {
        let y: Vec<f32> = (0..M_MAX).map(|i| i as f32 / 300.0).collect();
        let full = truncate_pad(&y, 256).unwrap();
        assert_eq!(full, y);
        let ten = truncate_pad(&y, 10).unwrap();
        assert_eq!(&ten[..10], &y[..10]);
        assert!(ten[10..].iter().all(|&v| v == 0.0));
        assert!(truncate_pad(&y, 0).is_err());
        assert!(truncate_pad(&y, 257).is_err());
    }

    #[test]
    fn truncation_equals_submatrix_measurement() {
        let pc = build_pc(IMAGE_PIXELS).unwrap();
        let img = random_image(9);
        let meas = measure_full(&pc, &img).unwrap();
        for m in [1, 10, 51, 255] {
            let padded = truncate_pad(&meas.y, m).unwrap();
            // Oracle: measure with only the first m rows, then pad.
            for (i, &v) in padded.iter().enumerate() {
                if i < m {
                    let mut acc = 0.0f64;
                    for j in 0..IMAGE_PIXELS {
                        if pc.bit(i, j) == 1 {
                            acc += img.pixels[j] as f64;
                        }
                    }
                    assert_eq!(v, (acc / IMAGE_PIXELS as f64) as f32);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn measurement_nesting() {
        let pc = build_pc(IMAGE_PIXELS).unwrap();
        let img = random_image(1);
        let y = measure_full(&pc, &img).unwrap().y;
        for (m1, m2) in [(1, 2), (10, 51), (102, 256), (17, 200)] {
            let a = truncate_pad(&y, m1).unwrap();
            let b = truncate_pad(&y, m2).unwrap();
            assert_eq!(&a[..m1], &b[..m1]);
        }
    }

    #[test]
    fn preset_schedules_match_grid() {
        assert_eq!(preset_schedule("4pt").unwrap().points(), &[10, 51, 102, 256]);
        assert_eq!(
            preset_schedule("6pt").unwrap().points(),
            &[10, 20, 51, 102, 150, 256]
        );
        assert_eq!(
            preset_schedule("10pt").unwrap().points(),
            &[10, 18, 26, 34, 42, 51, 75, 102, 180, 256]
        );
        let fifty = preset_schedule("50pt").unwrap();
        assert_eq!(fifty.len(), 50);
        assert_eq!(&fifty.points()[48..], &[250, 256]);
        assert_eq!(fifty.points()[0], 10);
        assert!(preset_schedule("3pt").is_err());
    }

    #[test]
    fn schedule_validation() {
        assert!(RateSchedule::custom(vec![]).is_err());
        assert!(RateSchedule::custom(vec![10, 10]).is_err());
        assert!(RateSchedule::custom(vec![9, 256]).is_err());
        assert!(RateSchedule::custom(vec![10, 257]).is_err());
        assert!(RateSchedule::custom(vec![256]).is_ok());
    }

    fn tiny_split(n: usize) -> DatasetSplit {
        DatasetSplit {
            name: SplitName::Train,
            records: (0..n).map(|i| random_image(i as u64 + 100)).collect(),
        }
    }

    #[test]
    fn multirate_set_is_a_shuffled_permutation() {
        let pc = build_pc(IMAGE_PIXELS).unwrap();
        let split = tiny_split(30);
        let schedule = preset_schedule("4pt").unwrap();
        let set = build_multirate(&split, &pc, &schedule, 77).unwrap();
        assert_eq!(set.len(), 30 * 4);

        // Sorting the shuffled pairs recovers the full enumeration.
        let mut pairs: Vec<(u32, u16)> = (0..set.len()).map(|i| set.pair(i)).collect();
        pairs.sort_unstable();
        let expected: Vec<(u32, u16)> = (0..30u32)
            .flat_map(|img| schedule.points().iter().map(move |&m| (img, m as u16)))
            .collect();
        assert_eq!(pairs, expected);

        // Same seed, same order; different seed, different order.
        let again = build_multirate(&split, &pc, &schedule, 77).unwrap();
        assert_eq!(
            (0..set.len()).map(|i| set.pair(i)).collect::<Vec<_>>(),
            (0..again.len()).map(|i| again.pair(i)).collect::<Vec<_>>()
        );
        let other = build_multirate(&split, &pc, &schedule, 78).unwrap();
        assert_ne!(
            (0..set.len()).map(|i| set.pair(i)).collect::<Vec<_>>(),
            (0..other.len()).map(|i| other.pair(i)).collect::<Vec<_>>()
        );
    }

    #[test]
    fn multirate_examples_are_zero_padded_and_interleaved() {
        let pc = build_pc(IMAGE_PIXELS).unwrap();
        let split = tiny_split(50);
        let schedule = preset_schedule("4pt").unwrap();
        let set = build_multirate(&split, &pc, &schedule, 3).unwrap();

        for i in 0..set.len() {
            let (_, m, _) = set.parts(i);
            let input = set.input_vec(i);
            assert!(input[m..].iter().all(|&v| v == 0.0), "example {i}");
        }

        // Smoke check of the global shuffle: every window of 10 * |schedule|
        // examples mixes at least two distinct counts.
        let window = 10 * schedule.len();
        let ms: Vec<u16> = (0..set.len()).map(|i| set.pair(i).1).collect();
        for w in ms.windows(window) {
            let first = w[0];
            assert!(w.iter().any(|&m| m != first), "window of a single rate");
        }
    }

    #[test]
    fn single_point_schedule_degenerates_to_single_rate() {
        let pc = build_pc(IMAGE_PIXELS).unwrap();
        let split = tiny_split(8);
        let schedule = RateSchedule::custom(vec![256]).unwrap();
        let set = build_multirate(&split, &pc, &schedule, 1).unwrap();
        assert_eq!(set.len(), 8);
        for i in 0..set.len() {
            assert_eq!(set.pair(i).1, 256);
        }
    }

    #[test]
    fn cache_round_trip_and_fingerprint_check() {
        let dir = std::env::temp_dir().join(format!("csmc_test_{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.csmc");

        let pc = build_pc(IMAGE_PIXELS).unwrap();
        let split = tiny_split(7);
        let records = measure_split(&split, &pc, MeasurementScale::DivideByN).unwrap();
        write_cache(&path, pc.fingerprint(), &records).unwrap();

        // Header 20 bytes, each record 1 label byte + 256 * 4.
        let expected_size = 20 + 7 * (1 + M_MAX * 4);
        assert_eq!(fs::metadata(&path).unwrap().len(), expected_size as u64);

        let (fp, loaded) = read_cache(&path, Some(pc.fingerprint())).unwrap();
        assert_eq!(fp, pc.fingerprint());
        assert_eq!(loaded, records);

        let err = read_cache(&path, Some(pc.fingerprint() ^ 1)).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");

        fs::remove_dir_all(&dir).unwrap();
    }
}
