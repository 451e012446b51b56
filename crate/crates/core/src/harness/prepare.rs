//! Turning raw CSVs and drift scenarios into frame files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::config::frame_path;
use crate::data::{
    dataset_epoch, fit_schema, ieee_cis_specs, load_table, monthly_schedule, slice_frames, transform, ColumnSpec,
    DesignMatrix, TableOptions, DEFAULT_LABEL_DELAY_DAYS,
};
use crate::driftgen::{generate, write_csv, DriftScenario, CSV_LABEL_COLUMN, CSV_TIME_COLUMN};
use crate::error::{LatkdError, Result};
use crate::registry::atomic_write;

/// Shift that places the first IEEE-CIS `TransactionDT` (86400) at midnight
/// on the dataset epoch.
pub const IEEE_CIS_TIME_OFFSET: f64 = -86_400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub transactions: PathBuf,
    pub identity: Option<PathBuf>,
    /// JSON list of column specs. The IEEE-CIS feature set when absent.
    pub specs: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub start: NaiveDate,
    pub months: usize,
    pub label_delay_days: u32,
    pub time_offset_seconds: f64,
    pub timestamp_column: String,
    pub label_column: String,
    pub key_column: String,
}

impl PreprocessOptions {
    pub fn new(transactions: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            transactions: transactions.into(),
            identity: None,
            specs: None,
            out_dir: out_dir.into(),
            start: dataset_epoch(),
            months: 6,
            label_delay_days: DEFAULT_LABEL_DELAY_DAYS,
            time_offset_seconds: IEEE_CIS_TIME_OFFSET,
            timestamp_column: CSV_TIME_COLUMN.into(),
            label_column: CSV_LABEL_COLUMN.into(),
            key_column: "TransactionID".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCounts {
    pub index: usize,
    pub label: String,
    pub nonfraud: usize,
    pub fraud: usize,
    pub cumulative_nonfraud: usize,
    pub cumulative_fraud: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub frames: Vec<FrameCounts>,
    /// Rows outside the schedule.
    pub dropped: usize,
    pub empty_frames: usize,
    pub output_dimension: usize,
}

impl PreprocessReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>5}  {:<7}  {:>17}  {:>17}", "frame", "month", "nonfraud / fraud", "cumulative");
        for f in &self.frames {
            let _ = writeln!(
                out,
                "{:>5}  {:<7}  {:>17}  {:>17}",
                f.index,
                f.label,
                format!("{} / {}", f.nonfraud, f.fraud),
                format!("{} / {}", f.cumulative_nonfraud, f.cumulative_fraud)
            );
        }
        let _ = writeln!(out, "dropped rows: {}, empty frames: {}", self.dropped, self.empty_frames);
        out
    }
}

fn frame_counts(frames: &[DesignMatrix], labels: &[String]) -> Vec<FrameCounts> {
    let mut cn = 0;
    let mut cf = 0;
    frames
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(index, (m, label))| {
            let (nonfraud, fraud) = m.class_counts();
            cn += nonfraud;
            cf += fraud;
            FrameCounts {
                index,
                label: label.clone(),
                nonfraud,
                fraud,
                cumulative_nonfraud: cn,
                cumulative_fraud: cf,
            }
        })
        .collect()
}

fn write_frames(dir: &Path, frames: &[DesignMatrix]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| LatkdError::io(dir, e))?;
    for (i, f) in frames.iter().enumerate() {
        f.save(frame_path(dir, i))?;
    }
    Ok(())
}

/// Loads the transaction CSV (joined with the identity CSV when given), fits
/// the feature schema on every loaded row, and writes one design matrix per
/// calendar month plus `schema.json` and `counts.json` into `out_dir`.
pub fn preprocess(opts: &PreprocessOptions) -> Result<PreprocessReport> {
    let specs: Vec<ColumnSpec> = match &opts.specs {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| LatkdError::io(p, e))?;
            serde_json::from_str(&text)?
        }
        None => ieee_cis_specs(),
    };
    let mut table_opts = TableOptions::new(&opts.timestamp_column).with_label(&opts.label_column);
    table_opts.time_offset_seconds = opts.time_offset_seconds;
    let mut table = load_table(&opts.transactions, &table_opts)?;
    if let Some(identity) = &opts.identity {
        // The identity file has no timestamp; its key doubles as one so it parses.
        let right = load_table(identity, &TableOptions::new(&opts.key_column))?;
        table = table.left_join(&right, &opts.key_column)?;
    }
    let schema = fit_schema(&table, &specs)?;
    let matrix = transform(&table, &schema)?;
    let schedule = monthly_schedule(opts.start, opts.months, opts.label_delay_days);
    let sliced = slice_frames(&matrix, &schedule, dataset_epoch())?;

    write_frames(&opts.out_dir, &sliced.frames)?;
    schema.save(opts.out_dir.join("schema.json"))?;
    let labels: Vec<String> = schedule.iter().map(|f| f.label()).collect();
    let report = PreprocessReport {
        frames: frame_counts(&sliced.frames, &labels),
        dropped: sliced.dropped,
        empty_frames: sliced.empty_frames,
        output_dimension: schema.output_dimension,
    };
    atomic_write(&opts.out_dir.join("counts.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateReport {
    pub frames: Vec<FrameCounts>,
    pub csv: PathBuf,
}

/// Samples every frame of `scenario` and writes `transactions.csv`,
/// `scenario.json`, `assignments.json` and `frame-<i>.bin` into `out_dir`.
pub fn generate_to_dir(scenario: &DriftScenario, out_dir: &Path) -> Result<GenerateReport> {
    let stream = generate(scenario)?;
    write_frames(out_dir, &stream.frames)?;
    let csv_path = out_dir.join("transactions.csv");
    let mut buf = Vec::new();
    write_csv(&stream.frames, &mut buf)?;
    atomic_write(&csv_path, &buf)?;
    atomic_write(&out_dir.join("scenario.json"), scenario.to_json_pretty()?.as_bytes())?;
    atomic_write(&out_dir.join("assignments.json"), serde_json::to_string(&stream.log)?.as_bytes())?;
    let labels: Vec<String> = (0..stream.frames.len()).map(|i| format!("frame-{i}")).collect();
    Ok(GenerateReport {
        frames: frame_counts(&stream.frames, &labels),
        csv: csv_path,
    })
}
