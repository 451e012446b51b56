//! Column specs, vocabulary fitting and the table → design-matrix transform.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::matrix::DesignMatrix;
use super::table::DataFrameTable;
use crate::error::{LatkdError, Result};
use crate::hash;

pub const SCHEMA_VERSION: u32 = 1;
pub const OTHERS: &str = "Others";
pub const NA: &str = "NA";

/// Null value written for dist1/dist2 in the preprocessing table.
pub const DEFAULT_NULL_SENTINEL: f64 = -0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// `log10(1 + x)`, defined for `x >= 0`.
    Log10p,
    #[default]
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default)]
    pub transform: Transform,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_sentinel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rare_threshold: Option<usize>,
}

impl ColumnSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Continuous,
            transform: Transform::None,
            null_sentinel: None,
            rare_threshold: None,
        }
    }

    pub fn log10p(name: impl Into<String>) -> Self {
        Self {
            transform: Transform::Log10p,
            ..Self::continuous(name)
        }
    }

    pub fn with_sentinel(mut self, sentinel: f64) -> Self {
        self.null_sentinel = Some(sentinel);
        self
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            transform: Transform::None,
            null_sentinel: None,
            rare_threshold: None,
        }
    }

    pub fn with_rare_threshold(mut self, threshold: usize) -> Self {
        self.rare_threshold = Some(threshold);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| LatkdError::InvalidColumnSpec {
            column: self.name.clone(),
            reason: reason.to_string(),
        };
        match self.kind {
            ColumnKind::Continuous if self.rare_threshold.is_some() => {
                Err(bad("rare_threshold applies to categorical columns only"))
            }
            ColumnKind::Categorical if self.null_sentinel.is_some() => {
                Err(bad("null_sentinel applies to continuous columns only"))
            }
            ColumnKind::Categorical if self.transform != Transform::None => {
                Err(bad("categorical columns take no numeric transform"))
            }
            _ => match self.null_sentinel {
                Some(s) if !s.is_finite() => Err(bad("null_sentinel must be finite")),
                _ => Ok(()),
            },
        }
    }

    /// Value emitted for a null cell. Unset sentinels fall back to 0.
    fn null_value(&self) -> f64 {
        self.null_sentinel.unwrap_or(0.0)
    }
}

/// The raw-feature rows of the fraud preprocessing table, mapped onto the
/// IEEE-CIS column names (`DeviceInfo` is the device name, `id_30` the OS,
/// `id_31` the browser).
pub fn ieee_cis_specs() -> Vec<ColumnSpec> {
    let mut specs = vec![
        ColumnSpec::log10p("TransactionAmt"),
        ColumnSpec::log10p("dist1").with_sentinel(DEFAULT_NULL_SENTINEL),
        ColumnSpec::log10p("dist2").with_sentinel(DEFAULT_NULL_SENTINEL),
        ColumnSpec::categorical("ProductCD"),
        ColumnSpec::categorical("card4"),
        ColumnSpec::categorical("card6"),
    ];
    specs.extend((1..=9).map(|i| ColumnSpec::categorical(format!("M{i}"))));
    specs.extend([
        ColumnSpec::categorical("DeviceInfo").with_rare_threshold(200),
        ColumnSpec::categorical("id_30"),
        ColumnSpec::categorical("id_31").with_rare_threshold(200),
        ColumnSpec::categorical("DeviceType"),
    ]);
    specs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub version: u32,
    pub columns: Vec<ColumnSpec>,
    /// Retained categories per categorical column, in one-hot order.
    pub vocabularies: BTreeMap<String, Vec<String>>,
    pub output_dimension: usize,
    pub fingerprint: String,
}

#[derive(Serialize)]
struct FingerprintView<'a> {
    version: u32,
    columns: &'a [ColumnSpec],
    vocabularies: &'a BTreeMap<String, Vec<String>>,
}

fn parse_numeric(raw: &str, column: &str, row: usize) -> Result<Option<f64>> {
    match raw.trim().parse::<f64>() {
        // Non-finite numerics are nulls, same as an empty cell.
        Ok(v) if v.is_finite() => Ok(Some(v)),
        Ok(_) => Ok(None),
        Err(_) => Err(LatkdError::NonNumeric {
            column: column.to_string(),
            row,
            value: raw.to_string(),
        }),
    }
}

fn fit_vocabulary(spec: &ColumnSpec, cells: impl Iterator<Item = Option<String>>) -> Vec<String> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut saw_null = false;
    for cell in cells {
        match cell {
            Some(v) => *counts.entry(v).or_default() += 1,
            None => saw_null = true,
        }
    }
    let threshold = spec.rare_threshold.unwrap_or(0);
    let mut kept: Vec<(String, usize)> = Vec::new();
    let mut collapsed = false;
    for (value, count) in counts {
        if count >= threshold && value != OTHERS && value != NA {
            kept.push((value, count));
        } else if value == NA {
            saw_null = true;
        } else {
            collapsed = true;
        }
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut vocab: Vec<String> = kept.into_iter().map(|(v, _)| v).collect();
    if collapsed {
        vocab.push(OTHERS.to_string());
    }
    if saw_null {
        vocab.push(NA.to_string());
    }
    vocab
}

/// Fits categorical vocabularies and checks continuous columns parse.
pub fn fit_schema(table: &DataFrameTable, specs: &[ColumnSpec]) -> Result<FeatureSchema> {
    let mut vocabularies = BTreeMap::new();
    for spec in specs {
        spec.validate()?;
        let cells = table.column(&spec.name)?;
        match spec.kind {
            ColumnKind::Continuous => {
                for (row, cell) in cells.enumerate() {
                    if let Some(raw) = cell {
                        parse_numeric(raw, &spec.name, row)?;
                    }
                }
            }
            ColumnKind::Categorical => {
                let vocab = fit_vocabulary(spec, cells.map(|c| c.map(str::to_string)));
                vocabularies.insert(spec.name.clone(), vocab);
            }
        }
    }
    FeatureSchema::new(specs.to_vec(), vocabularies)
}

impl FeatureSchema {
    pub fn new(columns: Vec<ColumnSpec>, vocabularies: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let mut output_dimension = 0;
        for spec in &columns {
            spec.validate()?;
            output_dimension += match spec.kind {
                ColumnKind::Continuous => 1,
                ColumnKind::Categorical => vocabularies
                    .get(&spec.name)
                    .ok_or_else(|| LatkdError::InvalidColumnSpec {
                        column: spec.name.clone(),
                        reason: "no fitted vocabulary".into(),
                    })?
                    .len(),
            };
        }
        let fingerprint = hash::content_hash(&FingerprintView {
            version: SCHEMA_VERSION,
            columns: &columns,
            vocabularies: &vocabularies,
        })?;
        Ok(Self {
            version: SCHEMA_VERSION,
            columns,
            vocabularies,
            output_dimension,
            fingerprint,
        })
    }

    /// Schema of an already-numeric table: every column continuous, untransformed.
    pub fn identity(names: &[String]) -> Result<Self> {
        Self::new(
            names.iter().map(ColumnSpec::continuous).collect(),
            BTreeMap::new(),
        )
    }

    /// Output feature names, one per design-matrix column.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.output_dimension);
        for spec in &self.columns {
            match spec.kind {
                ColumnKind::Continuous => names.push(spec.name.clone()),
                ColumnKind::Categorical => names.extend(
                    self.vocabularies[&spec.name]
                        .iter()
                        .map(|v| format!("{}={}", spec.name, v)),
                ),
            }
        }
        names
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and re-derives the fingerprint, rejecting edited documents.
    pub fn from_json(s: &str) -> Result<Self> {
        let parsed: FeatureSchema = serde_json::from_str(s)?;
        if parsed.version != SCHEMA_VERSION {
            return Err(LatkdError::FormatVersion {
                found: parsed.version,
                expected: SCHEMA_VERSION,
            });
        }
        let rebuilt = FeatureSchema::new(parsed.columns.clone(), parsed.vocabularies.clone())?;
        if rebuilt.fingerprint != parsed.fingerprint || rebuilt.output_dimension != parsed.output_dimension {
            return Err(LatkdError::Integrity {
                expected: parsed.fingerprint,
                actual: rebuilt.fingerprint,
            });
        }
        Ok(rebuilt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| LatkdError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| LatkdError::io(path, e))?;
        Self::from_json(&s)
    }
}

fn one_hot_slot(vocab: &[String], cell: Option<&str>) -> Option<usize> {
    let find = |v: &str| vocab.iter().position(|x| x == v);
    match cell {
        Some(v) => find(v).or_else(|| find(OTHERS)).or_else(|| find(NA)),
        None => find(NA),
    }
}

/// Encodes a table with a fitted schema. Unseen categories go to `Others`,
/// then `NA`; a column with neither bucket emits an all-zero block for them.
pub fn transform(table: &DataFrameTable, schema: &FeatureSchema) -> Result<DesignMatrix> {
    let n = table.n_rows();
    let mut features = Array2::<f64>::zeros((n, schema.output_dimension));
    let mut offset = 0;
    for spec in &schema.columns {
        let cells = table.column(&spec.name)?;
        match spec.kind {
            ColumnKind::Continuous => {
                for (row, cell) in cells.enumerate() {
                    let value = match cell {
                        None => spec.null_value(),
                        Some(raw) => match parse_numeric(raw, &spec.name, row)? {
                            None => spec.null_value(),
                            Some(x) => match spec.transform {
                                Transform::None => x,
                                Transform::Log10p if x < 0.0 => {
                                    return Err(LatkdError::NegativeLogInput {
                                        column: spec.name.clone(),
                                        row,
                                        value: x,
                                    })
                                }
                                Transform::Log10p => x.ln_1p() / std::f64::consts::LN_10,
                            },
                        },
                    };
                    features[[row, offset]] = value;
                }
                offset += 1;
            }
            ColumnKind::Categorical => {
                let vocab = &schema.vocabularies[&spec.name];
                for (row, cell) in cells.enumerate() {
                    if let Some(slot) = one_hot_slot(vocab, cell) {
                        features[[row, offset + slot]] = 1.0;
                    }
                }
                offset += vocab.len();
            }
        }
    }
    DesignMatrix::new(
        features,
        table.labels().to_vec(),
        table.event_time().to_vec(),
        schema.fingerprint.clone(),
    )
}
