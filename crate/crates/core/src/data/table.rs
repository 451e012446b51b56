//! Raw CSV ingestion.
//!
//! Cells are kept as text; numeric interpretation happens when a schema is
//! fitted, so the same table can feed both continuous and categorical columns.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{LatkdError, Result};

/// Tokens read as explicit nulls. Matches the pandas defaults used by the
/// public dataset dumps.
const NULL_TOKENS: &[&str] = &["", "NA", "N/A", "NaN", "nan", "null", "NULL", "None"];

pub type Cell = Option<String>;

/// Which columns carry the timestamp and label, plus an optional projection.
#[derive(Debug, Clone)]
pub struct TableOptions {
    pub timestamp_column: String,
    pub label_column: Option<String>,
    /// Keep only these columns (plus timestamp/label). `None` keeps everything.
    pub columns: Option<Vec<String>>,
    /// Added to every parsed timestamp. The raw IEEE-CIS `TransactionDT` is an
    /// offset that starts at one day, so callers may shift it here.
    pub time_offset_seconds: f64,
}

impl TableOptions {
    pub fn new(timestamp_column: impl Into<String>) -> Self {
        Self {
            timestamp_column: timestamp_column.into(),
            label_column: None,
            columns: None,
            time_offset_seconds: 0.0,
        }
    }

    pub fn with_label(mut self, label_column: impl Into<String>) -> Self {
        self.label_column = Some(label_column.into());
        self
    }

    pub fn with_columns<I, S>(mut self, columns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.columns = Some(columns.into_iter().map(Into::into).collect());
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataFrameTable {
    columns: Vec<String>,
    index: HashMap<String, usize>,
    rows: Vec<Vec<Cell>>,
    event_time: Vec<f64>,
    labels: Vec<Option<u8>>,
}

pub(crate) fn is_null_token(s: &str) -> bool {
    NULL_TOKENS.contains(&s.trim())
}

impl DataFrameTable {
    /// Builds a table from in-memory parts. Every row must have one cell per column.
    pub fn from_parts(
        columns: Vec<String>,
        rows: Vec<Vec<Cell>>,
        event_time: Vec<f64>,
        labels: Vec<Option<u8>>,
    ) -> Result<Self> {
        if rows.len() != event_time.len() || rows.len() != labels.len() {
            return Err(LatkdError::RowMismatch {
                expected: rows.len(),
                actual: event_time.len().min(labels.len()),
            });
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(LatkdError::Malformed(format!(
                    "row {i} has {} cells, expected {}",
                    row.len(),
                    columns.len()
                )));
            }
        }
        for (i, &t) in event_time.iter().enumerate() {
            if !t.is_finite() || t < 0.0 {
                return Err(LatkdError::Malformed(format!(
                    "row {i}: event time {t} must be finite and nonnegative"
                )));
            }
        }
        let index = columns
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i))
            .collect();
        Ok(Self {
            columns,
            index,
            rows,
            event_time,
            labels,
        })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn event_time(&self) -> &[f64] {
        &self.event_time
    }

    pub fn labels(&self) -> &[Option<u8>] {
        &self.labels
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn cell(&self, row: usize, column: usize) -> Option<&str> {
        self.rows[row][column].as_deref()
    }

    /// Iterates one column's cells in row order.
    pub fn column(&self, name: &str) -> Result<impl Iterator<Item = Option<&str>> + '_> {
        let c = self
            .column_index(name)
            .ok_or_else(|| LatkdError::MissingColumn(name.to_string()))?;
        Ok(self.rows.iter().map(move |r| r[c].as_deref()))
    }

    /// Left join on a key column; unmatched right-hand cells become nulls.
    /// Right-hand columns that already exist on the left are skipped.
    pub fn left_join(&self, right: &DataFrameTable, key: &str) -> Result<DataFrameTable> {
        let lk = self
            .column_index(key)
            .ok_or_else(|| LatkdError::MissingColumn(key.to_string()))?;
        let rk = right
            .column_index(key)
            .ok_or_else(|| LatkdError::MissingColumn(key.to_string()))?;
        let extra: Vec<usize> = (0..right.columns.len())
            .filter(|&c| c != rk && self.column_index(&right.columns[c]).is_none())
            .collect();
        let mut lookup: HashMap<&str, usize> = HashMap::new();
        for (i, row) in right.rows.iter().enumerate() {
            if let Some(k) = row[rk].as_deref() {
                lookup.entry(k).or_insert(i);
            }
        }
        let mut columns = self.columns.clone();
        columns.extend(extra.iter().map(|&c| right.columns[c].clone()));
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let hit = row[lk].as_deref().and_then(|k| lookup.get(k)).copied();
                let mut out = row.clone();
                out.extend(
                    extra
                        .iter()
                        .map(|&c| hit.and_then(|r| right.rows[r][c].clone())),
                );
                out
            })
            .collect();
        DataFrameTable::from_parts(columns, rows, self.event_time.clone(), self.labels.clone())
    }
}

fn parse_label(raw: Option<&str>, row: usize) -> Result<Option<u8>> {
    let Some(s) = raw else { return Ok(None) };
    match s.trim().parse::<f64>() {
        Ok(v) if v == 0.0 => Ok(Some(0)),
        Ok(v) if v == 1.0 => Ok(Some(1)),
        _ => Err(LatkdError::Malformed(format!(
            "row {row}: label `{s}` is not 0 or 1"
        ))),
    }
}

/// Loads a comma-separated, double-quote-escaped UTF-8 file with a header row.
pub fn load_table(path: impl AsRef<Path>, opts: &TableOptions) -> Result<DataFrameTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| LatkdError::io(path, e))?;
    let meta = file.metadata().map_err(|e| LatkdError::io(path, e))?;
    if meta.len() == 0 {
        return Err(LatkdError::EmptyFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(LatkdError::EmptyFile(path.to_path_buf()));
    }
    let find = |name: &str| header.iter().position(|h| h == name);
    let ts_idx = find(&opts.timestamp_column)
        .ok_or_else(|| LatkdError::MissingColumn(opts.timestamp_column.clone()))?;
    // An absent label column is allowed: every row is then unlabeled.
    let label_idx = opts.label_column.as_deref().and_then(find);

    let keep: Vec<usize> = match &opts.columns {
        Some(wanted) => {
            let mut keep = Vec::with_capacity(wanted.len());
            for w in wanted {
                let i = find(w).ok_or_else(|| LatkdError::MissingColumn(w.clone()))?;
                if !keep.contains(&i) {
                    keep.push(i);
                }
            }
            keep
        }
        None => (0..header.len()).collect(),
    };
    let columns: Vec<String> = keep.iter().map(|&i| header[i].clone()).collect();

    let mut rows = Vec::new();
    let mut event_time = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let raw_ts = record.get(ts_idx).unwrap_or("");
        let ts = raw_ts
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(|v| v + opts.time_offset_seconds)
            .filter(|v| *v >= 0.0)
            .ok_or_else(|| {
                LatkdError::Malformed(format!(
                    "row {r}: timestamp `{raw_ts}` in column `{}` is not a nonnegative number",
                    opts.timestamp_column
                ))
            })?;
        let label = match label_idx {
            Some(li) => {
                let s = record.get(li).filter(|s| !is_null_token(s));
                parse_label(s, r)?
            }
            None => None,
        };
        let cells = keep
            .iter()
            .map(|&i| {
                record
                    .get(i)
                    .filter(|s| !is_null_token(s))
                    .map(str::to_string)
            })
            .collect();
        rows.push(cells);
        event_time.push(ts);
        labels.push(label);
    }
    DataFrameTable::from_parts(columns, rows, event_time, labels)
}
