use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{load_data, ExperimentConfig, VariantSpec};
use crate::distill::{evaluate, gather_teachers, run_schedule, teacher_set, train_learner, LatkdConfig, SoftLabelCache};
use crate::error::{LatkdError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepRow {
    pub k: usize,
    pub teachers: usize,
    pub auprc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepReport {
    pub variant: String,
    pub frame: usize,
    pub seed: u64,
    pub rows: Vec<KSweepRow>,
    /// Highest AUPRC; the smallest K wins ties.
    pub best_k: usize,
}

impl KSweepReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("K sweep: {} at frame {} (seed {})\n", self.variant, self.frame, self.seed);
        let _ = writeln!(out, "{:>4}  {:>8}  {:>8}", "K", "teachers", "AUPRC");
        for r in &self.rows {
            let mark = if r.k == self.best_k { "  *" } else { "" };
            let _ = writeln!(out, "{:>4}  {:>8}  {:>8.4}{mark}", r.k, r.teachers, r.auprc);
        }
        out
    }
}

/// Trains one model per K in `0..=t` on training frame `t`, each with teachers
/// `K..t` from a shared chain, and scores them on the configured test set.
///
/// The teacher chain itself is trained with every earlier frame as a teacher
/// and lives in `run_root/<name>-ksweep`.
pub fn k_sweep(config: &ExperimentConfig, variant: &str, t: usize, run_root: &Path) -> Result<KSweepReport> {
    config.validate()?;
    let spec = match config.variants()?.into_iter().find(|v| v.name.eq_ignore_ascii_case(variant)) {
        Some(v) => v,
        None => VariantSpec::named(variant)?,
    };
    let data = load_data(&config.data)?;
    if t >= data.train.len() {
        return Err(LatkdError::InvalidConfig(format!(
            "frame {t} is out of range for {} training frames",
            data.train.len()
        )));
    }
    let seed = config.seed;
    let base = config.latkd_config(&spec, seed)?;
    let chain_config = LatkdConfig {
        truncation_start: 0,
        ..base.clone()
    };
    let run_id = format!("{}-ksweep", config.name);
    let mut run = crate::registry::RunDir::open(
        run_root.join(&run_id),
        &run_id,
        serde_json::json!({ "experiment": config.resolved()?, "variant": spec }),
    )?;
    let mut cache = SoftLabelCache::new(run.cache_dir().join("softlabels"));
    let chain = format!("{}/seed-{seed}", spec.name);
    let schedule = run_schedule(&mut run, &mut cache, &chain, &data.train[..t], None, &chain_config)?;

    let mut rows = Vec::with_capacity(t + 1);
    for k in 0..=t {
        let entries = teacher_set(&schedule.registry, t, k)?;
        let teachers = gather_teachers(&run, &mut cache, &entries, &data.train[t], &base)?;
        let trained = train_learner(&data.train[t], &teachers, &base)?;
        let metrics = evaluate(&trained.model, Some(&data.test))?;
        let auprc = metrics.get("test_auprc").copied().ok_or(LatkdError::NoPositives)?;
        rows.push(KSweepRow {
            k,
            teachers: entries.len(),
            auprc,
        });
    }
    let best_k = rows
        .iter()
        .fold(None::<&KSweepRow>, |best, r| match best {
            Some(b) if b.auprc >= r.auprc => Some(b),
            _ => Some(r),
        })
        .map_or(0, |r| r.k);
    Ok(KSweepReport {
        variant: spec.name,
        frame: t,
        seed,
        rows,
        best_k,
    })
}
