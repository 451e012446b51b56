use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{load_data, ExperimentConfig, Strategy, VariantSpec};
use crate::data::DesignMatrix;
use crate::distill::{gather_teachers, run_schedule, teacher_set, train_learner, SoftLabelCache, TeacherLabels};
use crate::error::{LatkdError, Result};
use crate::eval::mean_std;
use crate::registry::RunDir;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub frame: usize,
    pub baseline_rows: usize,
    pub latkd_rows: usize,
    pub baseline_seconds: Vec<f64>,
    pub latkd_seconds: Vec<f64>,
    pub baseline_mean: f64,
    pub baseline_std: f64,
    pub latkd_mean: f64,
    pub latkd_std: f64,
    /// `baseline_mean / latkd_mean`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    /// Learner whose training was timed.
    pub learner: String,
    pub repetitions: usize,
    pub rows: Vec<BenchmarkRow>,
    /// `100 (1 - Σ latkd / Σ baseline)` over the per-frame means.
    pub mean_reduction_percent: f64,
}

impl BenchmarkReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "frame,baseline_rows,latkd_rows,baseline_mean_s,baseline_std_s,latkd_mean_s,latkd_std_s,ratio\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.frame, r.baseline_rows, r.latkd_rows, r.baseline_mean, r.baseline_std, r.latkd_mean, r.latkd_std, r.ratio
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("Training time, {} ({} repetitions)\n", self.learner, self.repetitions);
        let _ = writeln!(
            out,
            "{:>5}  {:>10}  {:>10}  {:>18}  {:>18}  {:>6}",
            "frame", "base rows", "latkd rows", "cumulative (s)", "latkd (s)", "ratio"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>5}  {:>10}  {:>10}  {:>18}  {:>18}  {:>6.2}",
                r.frame,
                r.baseline_rows,
                r.latkd_rows,
                format!("{:.3} ± {:.3}", r.baseline_mean, r.baseline_std),
                format!("{:.3} ± {:.3}", r.latkd_mean, r.latkd_std),
                r.ratio
            );
        }
        let _ = writeln!(out, "mean reduction: {:.1}%", self.mean_reduction_percent);
        out
    }
}

/// Times cumulative training against frame-only distilled training for every
/// training frame.
///
/// The distillation chain is built once (untimed) in `run_root/<name>-benchmark`.
/// Each repetition then times, on a monotonic clock, either one call to the
/// learner on frames `0..=t` or teacher scoring plus one call to the learner on
/// frame `t`. Soft labels are recomputed every repetition.
pub fn benchmark(config: &ExperimentConfig, variant: &str, repetitions: usize, run_root: &Path) -> Result<BenchmarkReport> {
    if repetitions == 0 {
        return Err(LatkdError::InvalidConfig("repetitions must be >= 1".into()));
    }
    config.validate()?;
    let spec = match config.variants()?.into_iter().find(|v| v.name.eq_ignore_ascii_case(variant)) {
        Some(v) => v,
        None => VariantSpec::named(variant)?,
    };
    let data = load_data(&config.data)?;
    let latkd_spec = VariantSpec {
        strategy: Strategy::Latkd,
        teacher_source: spec.teacher_source.filter(|_| spec.strategy == Strategy::Latkd),
        ..spec.clone()
    };
    let latkd = config.latkd_config(&latkd_spec, config.seed)?;
    let baseline = config.latkd_config(&spec, config.seed)?;

    let run_id = format!("{}-benchmark", config.name);
    let mut run = RunDir::open(
        run_root.join(&run_id),
        &run_id,
        serde_json::json!({ "experiment": config.resolved()?, "variant": spec }),
    )?;
    let chain = format!("{}-latkd/seed-{}", spec.learner, config.seed);
    let mut cache = SoftLabelCache::new(run.cache_dir().join("softlabels"));
    let schedule = run_schedule(&mut run, &mut cache, &chain, &data.train, None, &latkd)?;

    let mut rows = Vec::with_capacity(data.train.len());
    for t in 0..data.train.len() {
        let parts: Vec<&DesignMatrix> = data.train[..=t].iter().collect();
        let cumulative = DesignMatrix::concat(&parts)?;
        let entries = teacher_set(&schedule.registry, t, latkd.truncation_start.min(t))?;
        let mut baseline_seconds = Vec::with_capacity(repetitions);
        let mut latkd_seconds = Vec::with_capacity(repetitions);
        let mut baseline_rows = 0;
        let mut latkd_rows = 0;
        for _ in 0..repetitions {
            let start = Instant::now();
            let b = train_learner(&cumulative, &TeacherLabels::default(), &baseline)?;
            baseline_seconds.push(start.elapsed().as_secs_f64());
            baseline_rows = b.rows_consumed;

            let mut uncached = SoftLabelCache::disabled();
            let start = Instant::now();
            let teachers = gather_teachers(&run, &mut uncached, &entries, &data.train[t], &latkd)?;
            let l = train_learner(&data.train[t], &teachers, &latkd)?;
            latkd_seconds.push(start.elapsed().as_secs_f64());
            latkd_rows = l.rows_consumed;
        }
        let (baseline_mean, baseline_std) = mean_std(&baseline_seconds);
        let (latkd_mean, latkd_std) = mean_std(&latkd_seconds);
        log::info!("frame {t}: cumulative {baseline_mean:.3}s, latkd {latkd_mean:.3}s");
        rows.push(BenchmarkRow {
            frame: t,
            baseline_rows,
            latkd_rows,
            baseline_seconds,
            latkd_seconds,
            baseline_mean,
            baseline_std,
            latkd_mean,
            latkd_std,
            ratio: baseline_mean / latkd_mean,
        });
    }
    let total_base: f64 = rows.iter().map(|r| r.baseline_mean).sum();
    let total_latkd: f64 = rows.iter().map(|r| r.latkd_mean).sum();
    Ok(BenchmarkReport {
        learner: spec.learner.to_string(),
        repetitions,
        rows,
        mean_reduction_percent: 100.0 * (1.0 - total_latkd / total_base),
    })
}
