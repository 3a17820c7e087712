//! Evaluation: accuracy at a single measurement count, full sweeps over
//! every count from 10 to 256, comparison tables, and CSV/markdown reports.
//!
//! Cross-rate semantics for a network with input dimension D evaluated at
//! count m: if m > D the measurement vector is truncated to D, if m < D it
//! is zero-padded to D. Multi-rate networks have D = 256, so they always
//! see the zero-padded vector; a single-rate network sees at most its
//! trained count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{predict_with_len, MlpParams};
use crate::pipeline::{FullMeasurement, M_MAX, M_MIN};
use crate::sensing::MatrixKind;
use crate::IMAGE_PIXELS;

/// The comparison grid of Tables 1-2: (measurement rate, count) pairs in
/// the paper's row order.
pub const RATE_GRID: [(f64, usize); 6] = [
    (0.25, 256),
    (0.15, 154),
    (0.1, 102),
    (0.08, 82),
    (0.05, 51),
    (0.01, 10),
];

/// Counts the single-rate baselines are trained at.
pub const SINGLE_RATE_COUNTS: [usize; 4] = [10, 51, 102, 256];

/// Fraction of test records whose argmax class equals the label.
///
/// Deterministic: the prediction of each record is independent of every
/// other, ties in the argmax break toward the lowest class index, and the
/// correct-count reduction is an integer sum.
pub fn evaluate(params: &MlpParams, test: &[FullMeasurement], m: usize) -> Result<f64> {
    if !(M_MIN..=M_MAX).contains(&m) {
        return Err(Error::invalid(format!(
            "evaluation count {m} out of range {M_MIN}-{M_MAX}"
        )));
    }
    if test.is_empty() {
        return Err(Error::invalid("test split is empty"));
    }
    if params.d_in > M_MAX {
        return Err(Error::Dimension(format!(
            "model input dimension {} exceeds {M_MAX}",
            params.d_in
        )));
    }
    let eff = m.min(params.d_in);
    let correct: u64 = test
        .par_iter()
        .map_init(
            || vec![0.0f64; params.d_in],
            |x, rec| {
                for (dst, &src) in x[..eff].iter_mut().zip(&rec.y[..eff]) {
                    *dst = src as f64;
                }
                (predict_with_len(params, x, eff) == rec.label as usize) as u64
            },
        )
        .sum();
    Ok(correct as f64 / test.len() as f64)
}

/// One point of an accuracy curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub m: usize,
    pub measurement_rate: f64,
    pub accuracy: f64,
}

/// Test accuracy at every measurement count in [10, 256] for one model and
/// matrix: 247 points.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyCurve {
    pub matrix_kind: MatrixKind,
    pub schedule: String,
    pub model_fingerprint: u64,
    pub points: Vec<CurvePoint>,
}

impl AccuracyCurve {
    /// Accuracy at a given count, if the curve covers it.
    pub fn accuracy_at(&self, m: usize) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.m == m)
            .map(|p| p.accuracy)
    }
}

/// Evaluate at every count from 10 to 256 inclusive.
pub fn sweep(
    params: &MlpParams,
    test: &[FullMeasurement],
    matrix_kind: MatrixKind,
    schedule: &str,
    model_fingerprint: u64,
) -> Result<AccuracyCurve> {
    let points = (M_MIN..=M_MAX)
        .map(|m| {
            Ok(CurvePoint {
                m,
                measurement_rate: m as f64 / IMAGE_PIXELS as f64,
                accuracy: evaluate(params, test, m)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AccuracyCurve {
        matrix_kind,
        schedule: schedule.to_string(),
        model_fingerprint,
        points,
    })
}

/// A single-rate column cell. At the two rates no network was trained on,
/// the cell holds two accuracies: from the network trained below the rate
/// and from the one trained above it.
#[derive(Debug, Clone, PartialEq)]
pub enum CellValue {
    Single { accuracy: f64, trained_at_m: usize },
    Cross {
        below: f64,
        below_trained_at_m: usize,
        above: f64,
        above_trained_at_m: usize,
    },
}

impl CellValue {
    fn render(&self) -> String {
        match self {
            CellValue::Single { accuracy, .. } => format!("{accuracy:.4}"),
            CellValue::Cross { below, above, .. } => format!("{below:.4}/{above:.4}"),
        }
    }
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub measurement_rate: f64,
    pub m: usize,
    pub multi_pc: f64,
    pub multi_pwh: f64,
    pub single_pc: CellValue,
    pub single_pwh: CellValue,
}

/// A multi-rate vs single-rate accuracy comparison for one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub dataset: String,
    pub schedule: String,
    pub rows: Vec<TableRow>,
}

/// Models and test measurements for one matrix kind.
pub struct TableColumn<'a> {
    /// The 10-point multi-rate network (D = 256).
    pub multi: &'a MlpParams,
    /// Single-rate networks keyed by their trained count; all of
    /// [`SINGLE_RATE_COUNTS`] must be present.
    pub singles: &'a BTreeMap<usize, MlpParams>,
    /// Test measurements taken with this matrix.
    pub test: &'a [FullMeasurement],
}

fn single_cell(column: &TableColumn<'_>, m: usize) -> Result<CellValue> {
    let model_for = |count: usize| -> Result<&MlpParams> {
        column.singles.get(&count).ok_or_else(|| {
            Error::invalid(format!(
                "missing single-rate model trained at m = {count}; train it first"
            ))
        })
    };
    if SINGLE_RATE_COUNTS.contains(&m) {
        let params = model_for(m)?;
        Ok(CellValue::Single {
            accuracy: evaluate(params, column.test, m)?,
            trained_at_m: m,
        })
    } else {
        let below_m = *SINGLE_RATE_COUNTS
            .iter()
            .filter(|&&c| c < m)
            .max()
            .expect("grid rates lie inside the trained range");
        let above_m = *SINGLE_RATE_COUNTS
            .iter()
            .filter(|&&c| c > m)
            .min()
            .expect("grid rates lie inside the trained range");
        Ok(CellValue::Cross {
            below: evaluate(model_for(below_m)?, column.test, m)?,
            below_trained_at_m: below_m,
            above: evaluate(model_for(above_m)?, column.test, m)?,
            above_trained_at_m: above_m,
        })
    }
}

/// Fill the comparison grid: multi-rate cells at every grid rate, and
/// single-rate cells including the paired cross-rate cells at 0.08 and
/// 0.15 (first value from the network trained below the rate, second from
/// the one trained above).
pub fn reproduce_table(
    dataset: &str,
    schedule: &str,
    pc: &TableColumn<'_>,
    pwh: &TableColumn<'_>,
) -> Result<ComparisonTable> {
    let rows = RATE_GRID
        .iter()
        .map(|&(rate, m)| {
            Ok(TableRow {
                measurement_rate: rate,
                m,
                multi_pc: evaluate(pc.multi, pc.test, m)?,
                multi_pwh: evaluate(pwh.multi, pwh.test, m)?,
                single_pc: single_cell(pc, m)?,
                single_pwh: single_cell(pwh, m)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonTable {
        dataset: dataset.to_string(),
        schedule: schedule.to_string(),
        rows,
    })
}

/// Render a curve as CSV: header `m,measurement_rate,accuracy`, full
/// precision values (shortest round-trip decimal).
pub fn curve_to_csv(curve: &AccuracyCurve) -> String {
    let mut out = String::from("m,measurement_rate,accuracy\n");
    for p in &curve.points {
        let _ = writeln!(out, "{},{},{}", p.m, p.measurement_rate, p.accuracy);
    }
    out
}

pub fn emit_curve_csv(curve: &AccuracyCurve, path: &Path) -> Result<()> {
    fs::write(path, curve_to_csv(curve)).map_err(|e| Error::io(path, e))
}

/// Render a comparison table as markdown, accuracies to 4 decimal places.
pub fn table_to_markdown(table: &ComparisonTable) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "## {} test accuracy: multi-rate vs single-rate ({} training)\n",
        table.dataset, table.schedule
    );
    let _ = writeln!(
        out,
        "| Measurement rate | Measurements | Multi-rate PC | Multi-rate PWH | Single-rate PC | Single-rate PWH |"
    );
    let _ = writeln!(out, "|---|---|---|---|---|---|");
    for row in &table.rows {
        let _ = writeln!(
            out,
            "| {} | {} | {:.4} | {:.4} | {} | {} |",
            row.measurement_rate,
            row.m,
            row.multi_pc,
            row.multi_pwh,
            row.single_pc.render(),
            row.single_pwh.render()
        );
    }
    let _ = writeln!(
        out,
        "\nCross-rate cells (rates no single-rate network was trained on) show\ntwo values: trained-below / trained-above, using truncation or\nzero-padding to fit the network input."
    );
    out
}

pub fn emit_table_markdown(table: &ComparisonTable, path: &Path) -> Result<()> {
    fs::write(path, table_to_markdown(table)).map_err(|e| Error::io(path, e))
}

/// Write every curve (named by its stem) and table into a directory.
/// Deterministic inputs give byte-identical files.
pub fn emit_report(
    curves: &[(String, AccuracyCurve)],
    tables: &[ComparisonTable],
    out_dir: &Path,
) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (stem, curve) in curves {
        emit_curve_csv(curve, &out_dir.join(format!("{stem}.csv")))?;
    }
    for table in tables {
        emit_table_markdown(table, &out_dir.join(format!("table_{}.md", table.dataset)))?;
    }
    Ok(())
}
