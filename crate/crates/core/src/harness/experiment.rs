//! Variant × period × seed experiments.
//!
//! Each (variant, seed) pair is one chain in the run manifest, named
//! `VARIANT/seed-S`, whose entry `p` is the model for period `p + 1`. A
//! cumulative variant trains entry `p` on frames `0..=p`, a window variant on
//! frame `p` alone, and a LATKD variant on frame `p` with the chain's earlier
//! entries as teachers. Every model is scored on the same held-out test set.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{load_data, ExperimentConfig, ExperimentData, Strategy, VariantSpec};
use crate::data::DesignMatrix;
use crate::distill::{evaluate, record_model, run_schedule, train_learner, LatkdConfig, SoftLabelCache, TeacherLabels};
use crate::error::{LatkdError, Result};
use crate::eval::{mean_std, pr_curve, pr_points_csv, relative_diff, RunReport};
use crate::hash::content_hash;
use crate::model::{positive_scores, Model};
use crate::registry::{atomic_write, RunDir, RunManifest};

pub const TABLES_ARTIFACT: &str = "tables.json";
pub const TABLE_TEXT_ARTIFACT: &str = "table.txt";

pub fn chain_name(variant: &str, seed: u64) -> String {
    format!("{variant}/seed-{seed}")
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOptions {
    /// Stop after registering this many new models. Rerunning the same
    /// configuration picks up where the previous call stopped.
    pub max_new_entries: Option<usize>,
    /// Also write PR-curve points for the first seed of every variant and period.
    pub pr_csv: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub run_root: PathBuf,
    pub manifest_hash: String,
    pub new_entries: usize,
    /// False when `max_new_entries` cut the run short.
    pub complete: bool,
    pub tables: Option<ExperimentTables>,
}

/// One cell of the results table: AUPRC over seeds for a variant and period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub variant: String,
    pub period: usize,
    pub rows_consumed: Vec<usize>,
    pub report: RunReport,
    /// Percentage difference of the mean against the baseline variant.
    pub relative_diff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTables {
    pub experiment: String,
    pub baseline: Option<String>,
    pub variants: Vec<String>,
    pub periods: usize,
    pub cells: Vec<CellReport>,
}

impl ExperimentTables {
    pub fn cell(&self, variant: &str, period: usize) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.variant == variant && c.period == period)
    }

    /// Aligned plain-text tables: AUPRC mean ± std per period, then the
    /// relative difference of every other variant against the baseline.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let width = self.variants.iter().map(String::len).max().unwrap_or(0).max(17);
        let _ = writeln!(out, "AUPRC ({})", self.experiment);
        let _ = write!(out, "{:<8}", "Period");
        for v in &self.variants {
            let _ = write!(out, "  {v:>width$}");
        }
        out.push('\n');
        for p in 1..=self.periods {
            let _ = write!(out, "{p:<8}");
            for v in &self.variants {
                let text = self
                    .cell(v, p)
                    .map(|c| format!("{:.4} ± {:.4}", c.report.mean, c.report.std_dev))
                    .unwrap_or_else(|| "-".into());
                let _ = write!(out, "  {text:>width$}");
            }
            out.push('\n');
        }
        let Some(baseline) = &self.baseline else { return out };
        let others: Vec<&String> = self.variants.iter().filter(|v| *v != baseline).collect();
        if others.is_empty() {
            return out;
        }
        let _ = writeln!(out, "\nRelative AUPRC difference against {baseline}");
        let _ = write!(out, "{:<8}", "Period");
        for v in &others {
            let _ = write!(out, "  {v:>width$}");
        }
        out.push('\n');
        for p in 1..=self.periods {
            let _ = write!(out, "{p:<8}");
            for v in &others {
                let text = match self.cell(v, p).and_then(|c| c.relative_diff) {
                    Some(d) => format!("{d:+.2}%"),
                    None => "-".into(),
                };
                let _ = write!(out, "  {text:>width$}");
            }
            out.push('\n');
        }
        out
    }
}

/// Rebuilds the results tables from a manifest. Wall-clock times are left
/// out so the output depends only on hashed manifest content.
pub fn build_tables(manifest: &RunManifest) -> Result<ExperimentTables> {
    let config: ExperimentConfig = serde_json::from_value(manifest.config.clone())?;
    let variants = config.variants()?;
    let periods = train_frame_count(&config);
    let mut cells = Vec::new();
    for v in &variants {
        for p in 0..periods {
            let mut values = Vec::new();
            let mut rows = Vec::new();
            for seed in config.seeds() {
                let chain = chain_name(&v.name, seed);
                let entry = manifest.entry(&chain, p).ok_or_else(|| {
                    LatkdError::InvalidConfig(format!("manifest has no entry {p} for `{chain}`"))
                })?;
                let auprc = entry.metrics.get("test_auprc").copied().ok_or_else(|| {
                    LatkdError::InvalidConfig(format!("`{chain}` entry {p} has no test_auprc"))
                })?;
                values.push(auprc);
                rows.push(entry.rows_consumed);
            }
            cells.push(CellReport {
                variant: v.name.clone(),
                period: p + 1,
                rows_consumed: rows,
                report: RunReport::new(values, Vec::new())?,
                relative_diff: None,
            });
        }
    }
    if let Some(b) = &config.baseline {
        let base: BTreeMap<usize, RunReport> = cells
            .iter()
            .filter(|c| &c.variant == b)
            .map(|c| (c.period, c.report.clone()))
            .collect();
        for c in cells.iter_mut().filter(|c| &c.variant != b) {
            c.relative_diff = Some(relative_diff(&c.report, &base[&c.period])?);
        }
    }
    Ok(ExperimentTables {
        experiment: config.name.clone(),
        baseline: config.baseline.clone(),
        variants: variants.into_iter().map(|v| v.name).collect(),
        periods,
        cells,
    })
}

fn train_frame_count(config: &ExperimentConfig) -> usize {
    match &config.data {
        super::config::DataSource::Synthetic { train_frames, .. }
        | super::config::DataSource::Frames { train_frames, .. } => train_frames.len(),
    }
}

/// Mean and spread of recorded training times per variant and period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub variant: String,
    pub period: usize,
    pub mean_seconds: f64,
    pub std_seconds: f64,
}

pub fn timing_rows(manifest: &RunManifest, tables: &ExperimentTables) -> Vec<TimingRow> {
    let config: ExperimentConfig = match serde_json::from_value(manifest.config.clone()) {
        Ok(c) => c,
        Err(_) => return Vec::new(),
    };
    let mut rows = Vec::new();
    for v in &tables.variants {
        for p in 0..tables.periods {
            let secs: Vec<f64> = config
                .seeds()
                .filter_map(|s| manifest.entry(&chain_name(v, s), p))
                .map(|e| e.wall_clock_seconds)
                .collect();
            let (mean_seconds, std_seconds) = mean_std(&secs);
            rows.push(TimingRow {
                variant: v.clone(),
                period: p + 1,
                mean_seconds,
                std_seconds,
            });
        }
    }
    rows
}

/// Rows a variant's entry `p` trains on.
fn training_rows(strategy: Strategy, frames: &[DesignMatrix], p: usize) -> Result<(DesignMatrix, String)> {
    match strategy {
        Strategy::Cumulative => {
            let parts: Vec<&DesignMatrix> = frames[..=p].iter().collect();
            Ok((DesignMatrix::concat(&parts)?, format!("frames 0..={p}")))
        }
        Strategy::Window | Strategy::Latkd => Ok((frames[p].clone(), format!("frame {p}"))),
    }
}

/// Trains the non-distilled chain for one (variant, seed), at most `budget`
/// new entries. Returns the number of new entries.
fn run_plain_chain(
    run: &mut RunDir,
    chain: &str,
    strategy: Strategy,
    data: &ExperimentData,
    config: &LatkdConfig,
    budget: Option<usize>,
) -> Result<usize> {
    let config_hash = content_hash(config)?;
    let mut added = 0;
    for p in 0..data.train.len() {
        if let Some(done) = run.manifest().entry(chain, p) {
            if done.config_hash != config_hash {
                return Err(LatkdError::InvalidConfig(format!(
                    "chain `{chain}` entry {p} was trained under a different configuration"
                )));
            }
            continue;
        }
        if budget.is_some_and(|b| added >= b) {
            break;
        }
        let (rows, window) = training_rows(strategy, &data.train, p)?;
        let start = Instant::now();
        let trained = train_learner(&rows, &TeacherLabels::default(), config).map_err(|e| e.in_frame(p))?;
        let secs = start.elapsed().as_secs_f64();
        let metrics = evaluate(&trained.model, Some(&data.test))?;
        record_model(
            run,
            chain,
            p,
            &trained.model,
            trained.rows_consumed,
            window,
            config_hash.clone(),
            metrics,
            secs,
        )?;
        added += 1;
    }
    Ok(added)
}

fn run_chain(
    run: &mut RunDir,
    cache: &mut SoftLabelCache,
    variant: &VariantSpec,
    seed: u64,
    experiment: &ExperimentConfig,
    data: &ExperimentData,
    budget: Option<usize>,
) -> Result<usize> {
    let chain = chain_name(&variant.name, seed);
    let config = experiment.latkd_config(variant, seed)?;
    match variant.strategy {
        Strategy::Latkd => {
            let existing = run.manifest().chain(&chain).count();
            let upto = budget.map_or(data.train.len(), |b| (existing + b).min(data.train.len()));
            let out = run_schedule(run, cache, &chain, &data.train[..upto], Some(&data.test), &config)?;
            Ok(out.frames.iter().filter(|f| !f.resumed).count())
        }
        strategy => run_plain_chain(run, &chain, strategy, data, &config, budget),
    }
}

fn write_pr_curves(run: &RunDir, tables: &ExperimentTables, config: &ExperimentConfig, test: &DesignMatrix) -> Result<()> {
    let labels = test.hard_labels()?;
    let seed = config.seed;
    let dir = run.reports_dir().join("pr");
    for v in &tables.variants {
        for p in 0..tables.periods {
            let Some(entry) = run.manifest().entry(&chain_name(v, seed), p) else { continue };
            let model = Model::load(run.store(), &entry.model_hash)?;
            let scores = positive_scores(&model, test.features.view())?;
            let curve = pr_curve(&scores, &labels)?;
            let name = format!("{}-period{}.csv", v.replace('/', "_"), p + 1);
            atomic_write(&dir.join(name), pr_points_csv(&curve).as_bytes())?;
        }
    }
    Ok(())
}

/// Runs (or resumes) every chain of `config` under `run_root/<name>`.
pub fn run_experiment(config: &ExperimentConfig, run_root: &Path, options: &ExperimentOptions) -> Result<ExperimentOutcome> {
    let resolved = config.resolved()?;
    let root = run_root.join(&config.name);
    let mut run = RunDir::open(&root, &config.name, serde_json::to_value(&resolved)?)?;
    let mut cache = SoftLabelCache::new(run.cache_dir().join("softlabels"));
    let data = load_data(&config.data)?;

    let mut new_entries = 0;
    let mut complete = true;
    'outer: for variant in resolved.variants()? {
        for seed in resolved.seeds() {
            let budget = options.max_new_entries.map(|m| m - new_entries);
            if budget == Some(0) {
                complete = false;
                break 'outer;
            }
            log::info!("training {}", chain_name(&variant.name, seed));
            new_entries += run_chain(&mut run, &mut cache, &variant, seed, &resolved, &data, budget)?;
        }
    }
    if complete {
        complete = resolved.variants()?.iter().all(|v| {
            resolved
                .seeds()
                .all(|s| run.manifest().chain(&chain_name(&v.name, s)).count() == data.train.len())
        });
    }

    let tables = if complete {
        let tables = build_tables(run.manifest())?;
        let json = serde_json::to_string_pretty(&tables)?;
        let text = tables.to_text();
        run.put_artifact(TABLES_ARTIFACT, json.as_bytes())?;
        run.put_artifact(TABLE_TEXT_ARTIFACT, text.as_bytes())?;
        let reports = run.reports_dir();
        atomic_write(&reports.join(TABLES_ARTIFACT), json.as_bytes())?;
        atomic_write(&reports.join(TABLE_TEXT_ARTIFACT), text.as_bytes())?;
        let timings = timing_rows(run.manifest(), &tables);
        atomic_write(&reports.join("timings.json"), serde_json::to_string_pretty(&timings)?.as_bytes())?;
        if options.pr_csv {
            write_pr_curves(&run, &tables, &resolved, &data.test)?;
        }
        Some(tables)
    } else {
        None
    };
    Ok(ExperimentOutcome {
        run_root: root,
        manifest_hash: run.manifest().content_hash()?,
        new_entries,
        complete,
        tables,
    })
}

/// Tables rebuilt from a run directory's manifest.
#[derive(Debug, Clone)]
pub struct RegeneratedTables {
    pub tables: ExperimentTables,
    pub text: String,
    /// Whether the rebuilt JSON equals the registered artifact byte for byte.
    /// `None` when the run never registered tables.
    pub matches_registered: Option<bool>,
}

pub fn regenerate_tables(run_dir: &Path) -> Result<RegeneratedTables> {
    let manifest = crate::registry::read_manifest(run_dir)?;
    let tables = build_tables(&manifest)?;
    let json = serde_json::to_string_pretty(&tables)?;
    let matches_registered = match manifest.artifacts.get(TABLES_ARTIFACT) {
        Some(hash) => {
            let store = crate::registry::BlobStore::new(run_dir.join("objects"));
            Some(store.get_blob(hash)? == json.as_bytes())
        }
        None => None,
    };
    Ok(RegeneratedTables {
        text: tables.to_text(),
        tables,
        matches_registered,
    })
}
