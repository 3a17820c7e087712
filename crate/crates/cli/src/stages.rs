//! Pipeline stages with content-fingerprint gating.
//!
//! Every stage writes its artifact plus a `<artifact>.fp` sidecar holding a
//! fingerprint of the stage inputs (upstream file contents and the relevant
//! configuration keys). A stage whose artifact exists with a matching
//! sidecar is skipped with an "up to date" notice; changing any relevant
//! input or key invalidates it and everything downstream.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use csmr_core::dataio::{load_split, split_files, DatasetKind, SplitName};
use csmr_core::error::{Error, Result};
use csmr_core::experiment::{
    emit_curve_csv, emit_table_markdown, reproduce_table, sweep, AccuracyCurve, ComparisonTable,
    TableColumn, SINGLE_RATE_COUNTS,
};
use csmr_core::fingerprint::{file_fingerprint, fnv1a64};
use csmr_core::model::{load_model, save_model, train_with_progress, MlpParams};
use csmr_core::pipeline::{
    measure_split, multirate_from_measurements, read_cache, write_cache, FullMeasurement,
    RateSchedule, M_MAX,
};
use csmr_core::rng::derive_seed;
use csmr_core::sensing::{build_pc, build_pwh, MatrixKind, SensingMatrix};
use csmr_core::IMAGE_PIXELS;

use crate::config::{schedule_label, ExperimentConfig};

/// Stream tag separating the example-shuffle seed from the training seed.
const SHUFFLE_STREAM: u64 = 0x5348_5546; // "SHUF"

fn sidecar(path: &Path) -> PathBuf {
    PathBuf::from(format!("{}.fp", path.display()))
}

fn combine_fp(parts: &[String]) -> u64 {
    fnv1a64(parts.join("\n").as_bytes())
}

fn up_to_date(artifact: &Path, fp: u64) -> bool {
    artifact.is_file()
        && std::fs::read_to_string(sidecar(artifact))
            .map(|s| s.trim() == format!("{fp:016x}"))
            .unwrap_or(false)
}

fn mark_done(artifact: &Path, fp: u64) -> Result<()> {
    let side = sidecar(artifact);
    std::fs::write(&side, format!("{fp:016x}\n")).map_err(|e| Error::io(&side, e))
}

fn ensure_parent_dir(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

fn require_file(path: &Path, produced_by: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{} not found; produce it with `{produced_by}`",
            path.display()
        )))
    }
}

/// Content fingerprint of the files behind one dataset split.
fn dataset_fingerprint(config: &ExperimentConfig, split: SplitName) -> Result<u64> {
    let dir = config.data_dir.join(config.dataset.as_str());
    let mut parts = vec![format!("dataset {} {}", config.dataset.as_str(), split.as_str())];
    for file in split_files(config.dataset, &dir, split) {
        require_file(
            &file,
            &format!(
                "a copy of the {} files at {} (see README)",
                config.dataset.as_str(),
                dir.display()
            ),
        )?;
        parts.push(format!("{:016x}", file_fingerprint(&file)?));
    }
    Ok(combine_fp(&parts))
}

/// Per-dataset ingestion keys that change the produced records.
fn ingestion_keys(config: &ExperimentConfig) -> String {
    match config.dataset {
        DatasetKind::Mnist => format!("scale={}", config.measurement_scale.as_str()),
        DatasetKind::Cifar10 => format!(
            "scale={} gray={}",
            config.measurement_scale.as_str(),
            config.grayscale.as_str()
        ),
    }
}

/// Standard artifact names, shared by the subcommands and `repro-all`.
pub mod names {
    use super::*;

    pub fn matrix_tag(config: &ExperimentConfig, kind: MatrixKind) -> String {
        match kind {
            MatrixKind::Pc => "pc".to_string(),
            MatrixKind::Pwh => format!("pwh_s{}", config.matrix_seed),
        }
    }

    pub fn matrix(config: &ExperimentConfig, kind: MatrixKind) -> PathBuf {
        config
            .out_dir
            .join(format!("matrix_{}.csmx", matrix_tag(config, kind)))
    }

    pub fn cache(config: &ExperimentConfig, kind: MatrixKind, split: SplitName) -> PathBuf {
        config.out_dir.join(format!(
            "cache_{}_{}_{}.csmc",
            config.dataset.as_str(),
            matrix_tag(config, kind),
            split.as_str()
        ))
    }

    pub fn model(config: &ExperimentConfig, kind: MatrixKind, schedule: &RateSchedule) -> PathBuf {
        config.out_dir.join(format!(
            "model_{}_{}_{}_t{}.csmm",
            config.dataset.as_str(),
            matrix_tag(config, kind),
            schedule_label(schedule),
            config.train_seed
        ))
    }

    pub fn sweep_csv(config: &ExperimentConfig, model_path: &Path) -> PathBuf {
        let stem = model_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into());
        config.out_dir.join(format!("sweep_{stem}.csv"))
    }

    pub fn table_md(config: &ExperimentConfig) -> PathBuf {
        config
            .out_dir
            .join(format!("table_{}.md", config.dataset.as_str()))
    }
}

/// Build (or reuse) a sensing matrix file.
pub fn ensure_matrix(config: &ExperimentConfig, kind: MatrixKind, path: &Path) -> Result<PathBuf> {
    ensure_parent_dir(path)?;
    let seed = match kind {
        MatrixKind::Pc => 0,
        MatrixKind::Pwh => config.matrix_seed,
    };
    let fp = combine_fp(&[format!(
        "matrix kind={} seed={seed} n={IMAGE_PIXELS}",
        kind.as_str()
    )]);
    if up_to_date(path, fp) {
        println!("[gen-matrix] up to date: {}", path.display());
        return Ok(path.to_path_buf());
    }
    let matrix = match kind {
        MatrixKind::Pc => build_pc(IMAGE_PIXELS)?,
        MatrixKind::Pwh => build_pwh(IMAGE_PIXELS, seed)?,
    };
    matrix.write_to(path)?;
    mark_done(path, fp)?;
    println!("[gen-matrix] wrote {}", path.display());
    Ok(path.to_path_buf())
}

/// Validate a dataset and write an ingestion summary.
pub fn prepare(config: &ExperimentConfig) -> Result<PathBuf> {
    let path = config
        .out_dir
        .join(format!("prepared_{}.txt", config.dataset.as_str()));
    ensure_parent_dir(&path)?;
    let fp = combine_fp(&[
        format!("{:016x}", dataset_fingerprint(config, SplitName::Train)?),
        format!("{:016x}", dataset_fingerprint(config, SplitName::Test)?),
        ingestion_keys(config),
    ]);
    if up_to_date(&path, fp) {
        println!("[prepare] up to date: {}", path.display());
        return Ok(path);
    }
    let dir = config.data_dir.join(config.dataset.as_str());
    let mut summary = format!("dataset: {}\n", config.dataset.as_str());
    for split in [SplitName::Train, SplitName::Test] {
        let loaded = load_split(config.dataset, &dir, split, config.grayscale)?;
        let mut hist = [0usize; 10];
        for rec in &loaded.records {
            hist[rec.label as usize] += 1;
        }
        summary.push_str(&format!(
            "{}: {} records, label histogram {:?}\n",
            split.as_str(),
            loaded.records.len(),
            hist
        ));
    }
    std::fs::write(&path, &summary).map_err(|e| Error::io(&path, e))?;
    mark_done(&path, fp)?;
    println!("[prepare] wrote {}", path.display());
    Ok(path)
}

fn cache_fp(config: &ExperimentConfig, matrix_path: &Path, split: SplitName) -> Result<u64> {
    Ok(combine_fp(&[
        "cache".into(),
        format!("{:016x}", file_fingerprint(matrix_path)?),
        format!("{:016x}", dataset_fingerprint(config, split)?),
        ingestion_keys(config),
    ]))
}

/// Measure a split against a matrix file and persist the cache.
pub fn ensure_cache(
    config: &ExperimentConfig,
    matrix_path: &Path,
    split: SplitName,
    path: &Path,
) -> Result<PathBuf> {
    ensure_parent_dir(path)?;
    require_file(matrix_path, "csmr gen-matrix")?;
    let fp = cache_fp(config, matrix_path, split)?;
    if up_to_date(path, fp) {
        println!("[cache] up to date: {}", path.display());
        return Ok(path.to_path_buf());
    }
    let started = Instant::now();
    let matrix = SensingMatrix::read_from(matrix_path)?;
    let dir = config.data_dir.join(config.dataset.as_str());
    let loaded = load_split(config.dataset, &dir, split, config.grayscale)?;
    let records = measure_split(&loaded, &matrix, config.measurement_scale)?;
    write_cache(path, matrix.fingerprint(), &records)?;
    mark_done(path, fp)?;
    println!(
        "[cache] wrote {} ({} records, {:.1?})",
        path.display(),
        records.len(),
        started.elapsed()
    );
    Ok(path.to_path_buf())
}

/// Load measurements for a split: from the standard cache file when it is
/// valid for the current inputs, otherwise measured directly.
pub fn load_measurements(
    config: &ExperimentConfig,
    matrix_path: &Path,
    split: SplitName,
) -> Result<Vec<FullMeasurement>> {
    require_file(matrix_path, "csmr gen-matrix")?;
    let matrix = SensingMatrix::read_from(matrix_path)?;
    let cache_path = names::cache(config, matrix.kind(), split);
    if cache_path.is_file() && up_to_date(&cache_path, cache_fp(config, matrix_path, split)?) {
        return Ok(read_cache(&cache_path, Some(matrix.fingerprint()))?.1);
    }
    let dir = config.data_dir.join(config.dataset.as_str());
    let loaded = load_split(config.dataset, &dir, split, config.grayscale)?;
    measure_split(&loaded, &matrix, config.measurement_scale)
}

fn train_fp(
    config: &ExperimentConfig,
    matrix_path: &Path,
    schedule: &RateSchedule,
    d_in: usize,
) -> Result<u64> {
    let tc = config.train_config();
    Ok(combine_fp(&[
        "model".into(),
        format!("{:016x}", file_fingerprint(matrix_path)?),
        format!("{:016x}", dataset_fingerprint(config, SplitName::Train)?),
        ingestion_keys(config),
        format!("schedule={:?}", schedule.points()),
        format!("d_in={d_in}"),
        format!(
            "lr={} drop={} period={} epochs={} batch={} seed={} b1={} b2={} eps={}",
            tc.initial_lr,
            tc.lr_drop_factor,
            tc.lr_drop_period_epochs,
            tc.epochs,
            tc.batch_size,
            tc.seed,
            tc.adam_beta1,
            tc.adam_beta2,
            tc.adam_epsilon
        ),
    ]))
}

/// Train (or reuse) a model for a schedule. A single-point schedule trains
/// a single-rate network with input dimension equal to its point; any other
/// schedule trains a multi-rate network with input dimension 256.
pub fn ensure_model(
    config: &ExperimentConfig,
    matrix_path: &Path,
    schedule: &RateSchedule,
    path: &Path,
) -> Result<PathBuf> {
    ensure_parent_dir(path)?;
    require_file(matrix_path, "csmr gen-matrix")?;
    let d_in = if schedule.len() == 1 {
        schedule.points()[0]
    } else {
        M_MAX
    };
    let fp = train_fp(config, matrix_path, schedule, d_in)?;
    if up_to_date(path, fp) {
        println!("[train] up to date: {}", path.display());
        return Ok(path.to_path_buf());
    }

    let measurements = load_measurements(config, matrix_path, SplitName::Train)?;
    let shuffle_seed = derive_seed(config.train_seed, SHUFFLE_STREAM);
    let set = multirate_from_measurements(Arc::new(measurements), schedule.clone(), shuffle_seed);
    let tc = config.train_config();
    println!(
        "[train] {} examples, d_in {d_in}, {} epochs, batch {}",
        set.len(),
        tc.epochs,
        tc.batch_size
    );
    let started = Instant::now();
    let total = tc.epochs;
    let (params, history) = train_with_progress(&set, d_in, &tc, |s| {
        println!(
            "[train] epoch {}/{}: loss {:.4}, accuracy {:.4}, lr {:.3e} ({:.0?})",
            s.epoch + 1,
            total,
            s.mean_loss,
            s.accuracy,
            s.lr,
            started.elapsed()
        );
    })?;
    save_model(&params, path)?;

    let history_path = path.with_extension("history.csv");
    let mut csv = String::from("epoch,mean_loss,train_accuracy,lr\n");
    for s in &history {
        csv.push_str(&format!("{},{},{},{}\n", s.epoch, s.mean_loss, s.accuracy, s.lr));
    }
    std::fs::write(&history_path, csv).map_err(|e| Error::io(&history_path, e))?;

    mark_done(path, fp)?;
    println!("[train] wrote {} ({:.0?})", path.display(), started.elapsed());
    Ok(path.to_path_buf())
}

/// Evaluate a model at every count from 10 to 256 and write the curve CSV.
pub fn run_sweep(
    config: &ExperimentConfig,
    matrix_path: &Path,
    model_path: &Path,
    label: &str,
    path: &Path,
) -> Result<PathBuf> {
    ensure_parent_dir(path)?;
    require_file(model_path, "csmr train")?;
    require_file(matrix_path, "csmr gen-matrix")?;
    let fp = combine_fp(&[
        "sweep".into(),
        format!("{:016x}", file_fingerprint(model_path)?),
        format!("{:016x}", file_fingerprint(matrix_path)?),
        format!("{:016x}", dataset_fingerprint(config, SplitName::Test)?),
        ingestion_keys(config),
    ]);
    if up_to_date(path, fp) {
        println!("[sweep] up to date: {}", path.display());
        return Ok(path.to_path_buf());
    }
    let started = Instant::now();
    let curve = compute_sweep(config, matrix_path, model_path, label)?;
    emit_curve_csv(&curve, path)?;
    mark_done(path, fp)?;
    println!("[sweep] wrote {} ({:.1?})", path.display(), started.elapsed());
    Ok(path.to_path_buf())
}

/// The sweep itself, without the artifact bookkeeping.
pub fn compute_sweep(
    config: &ExperimentConfig,
    matrix_path: &Path,
    model_path: &Path,
    label: &str,
) -> Result<AccuracyCurve> {
    let params = load_model(model_path)?;
    let matrix = SensingMatrix::read_from(matrix_path)?;
    let test = load_measurements(config, matrix_path, SplitName::Test)?;
    sweep(&params, &test, matrix.kind(), label, file_fingerprint(model_path)?)
}

/// The model and cache paths the comparison table needs for one matrix.
pub struct TableInputs {
    pub matrix_path: PathBuf,
    pub multi_model: PathBuf,
    pub single_models: BTreeMap<usize, PathBuf>,
}

impl TableInputs {
    /// The standard artifact locations for one matrix kind.
    pub fn standard(config: &ExperimentConfig, kind: MatrixKind) -> Result<Self> {
        let mut single_models = BTreeMap::new();
        for m in SINGLE_RATE_COUNTS {
            single_models.insert(m, names::model(config, kind, &RateSchedule::custom(vec![m])?));
        }
        Ok(TableInputs {
            matrix_path: names::matrix(config, kind),
            multi_model: names::model(config, kind, &config.schedule),
            single_models,
        })
    }
}

/// Build the multi-rate vs single-rate table for the configured dataset.
pub fn run_table(
    config: &ExperimentConfig,
    pc: &TableInputs,
    pwh: &TableInputs,
    path: &Path,
) -> Result<PathBuf> {
    ensure_parent_dir(path)?;
    let mut fp_parts = vec![
        "table".into(),
        format!("{:016x}", dataset_fingerprint(config, SplitName::Test)?),
        ingestion_keys(config),
    ];
    for inputs in [pc, pwh] {
        require_file(&inputs.multi_model, "csmr train")?;
        require_file(&inputs.matrix_path, "csmr gen-matrix")?;
        fp_parts.push(format!("{:016x}", file_fingerprint(&inputs.multi_model)?));
        fp_parts.push(format!("{:016x}", file_fingerprint(&inputs.matrix_path)?));
        for m in SINGLE_RATE_COUNTS {
            let model = inputs.single_models.get(&m).ok_or_else(|| {
                Error::invalid(format!(
                    "missing single-rate model for m = {m}; train it with `csmr train --schedule m={m}`"
                ))
            })?;
            require_file(model, &format!("csmr train --schedule m={m}"))?;
            fp_parts.push(format!("{:016x}", file_fingerprint(model)?));
        }
    }
    let fp = combine_fp(&fp_parts);
    if up_to_date(path, fp) {
        println!("[table] up to date: {}", path.display());
        return Ok(path.to_path_buf());
    }

    let table = compute_table(config, pc, pwh)?;
    emit_table_markdown(&table, path)?;
    mark_done(path, fp)?;
    println!("[table] wrote {}", path.display());
    Ok(path.to_path_buf())
}

/// The table itself, without the artifact bookkeeping.
pub fn compute_table(
    config: &ExperimentConfig,
    pc: &TableInputs,
    pwh: &TableInputs,
) -> Result<ComparisonTable> {
    type Column = (MlpParams, BTreeMap<usize, MlpParams>, Vec<FullMeasurement>);
    let load_column = |inputs: &TableInputs| -> Result<Column> {
        let multi = load_model(&inputs.multi_model)?;
        let mut singles = BTreeMap::new();
        for (&m, path) in &inputs.single_models {
            singles.insert(m, load_model(path)?);
        }
        let test = load_measurements(config, &inputs.matrix_path, SplitName::Test)?;
        Ok((multi, singles, test))
    };
    let (pc_multi, pc_singles, pc_test) = load_column(pc)?;
    let (pwh_multi, pwh_singles, pwh_test) = load_column(pwh)?;
    reproduce_table(
        config.dataset.as_str(),
        &schedule_label(&config.schedule),
        &TableColumn {
            multi: &pc_multi,
            singles: &pc_singles,
            test: &pc_test,
        },
        &TableColumn {
            multi: &pwh_multi,
            singles: &pwh_singles,
            test: &pwh_test,
        },
    )
}

/// Chain the full pipeline for one dataset: matrices, caches, the
/// multi-rate model and sweep per matrix, the four single-rate models per
/// matrix, and the comparison table.
pub fn repro_dataset(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let mut artifacts = Vec::new();
    let mut table_inputs: Vec<TableInputs> = Vec::new();
    for kind in [MatrixKind::Pc, MatrixKind::Pwh] {
        let matrix_path = ensure_matrix(config, kind, &names::matrix(config, kind))?;
        artifacts.push(matrix_path.clone());
        for split in [SplitName::Train, SplitName::Test] {
            artifacts.push(ensure_cache(
                config,
                &matrix_path,
                split,
                &names::cache(config, kind, split),
            )?);
        }
        let multi_model = ensure_model(
            config,
            &matrix_path,
            &config.schedule,
            &names::model(config, kind, &config.schedule),
        )?;
        artifacts.push(multi_model.clone());
        artifacts.push(run_sweep(
            config,
            &matrix_path,
            &multi_model,
            &schedule_label(&config.schedule),
            &names::sweep_csv(config, &multi_model),
        )?);
        let mut singles = BTreeMap::new();
        for m in SINGLE_RATE_COUNTS {
            let schedule = RateSchedule::custom(vec![m])?;
            let model = ensure_model(
                config,
                &matrix_path,
                &schedule,
                &names::model(config, kind, &schedule),
            )?;
            artifacts.push(model.clone());
            singles.insert(m, model);
        }
        table_inputs.push(TableInputs {
            matrix_path,
            multi_model,
            single_models: singles,
        });
    }
    let pwh_inputs = table_inputs.pop().expect("pwh inputs");
    let pc_inputs = table_inputs.pop().expect("pc inputs");
    artifacts.push(run_table(
        config,
        &pc_inputs,
        &pwh_inputs,
        &names::table_md(config),
    )?);
    Ok(artifacts)
}

/// `repro-all`: the full chain for each requested dataset.
pub fn repro_all(base: &ExperimentConfig, datasets: &[DatasetKind]) -> Result<Vec<PathBuf>> {
    let mut artifacts = Vec::new();
    for &dataset in datasets {
        let mut config = base.clone();
        config.dataset = dataset;
        println!("[repro-all] dataset {}", dataset.as_str());
        artifacts.extend(repro_dataset(&config)?);
    }
    println!("[repro-all] {} artifacts", artifacts.len());
    Ok(artifacts)
}
