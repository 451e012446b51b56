//! The per-frame model chain: teacher selection, training and resumable schedules.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{LatkdConfig, TeacherSource};
use super::soft::{materialize_soft_labels, SoftLabelCache, SoftLabelMatrix};
use crate::data::DesignMatrix;
use crate::ensemble::EnsembleModel;
use crate::error::{LatkdError, Result};
use crate::eval;
use crate::gbt;
use crate::hash::content_hash;
use crate::mlp::{self, CompositeLossSpec};
use crate::model::{positive_scores, LearnerKind, Model};
use crate::registry::{FrameEntry, RunDir, RunManifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherEntry {
    pub frame_index: usize,
    pub model_hash: String,
    pub training_window: String,
    pub config_hash: String,
    pub created_at: String,
}

/// The models registered so far for one chain, ordered by frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherRegistry {
    pub chain: String,
    pub entries: Vec<TeacherEntry>,
}

impl TeacherRegistry {
    pub fn from_manifest(manifest: &RunManifest, chain: &str) -> Self {
        let mut entries: Vec<TeacherEntry> = manifest
            .chain(chain)
            .map(|e| TeacherEntry {
                frame_index: e.index,
                model_hash: e.model_hash.clone(),
                training_window: e.training_window.clone(),
                config_hash: e.config_hash.clone(),
                created_at: e.created_at.clone(),
            })
            .collect();
        entries.sort_by_key(|e| e.frame_index);
        Self {
            chain: chain.to_string(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, frame_index: usize) -> Option<&TeacherEntry> {
        self.entries.iter().find(|e| e.frame_index == frame_index)
    }
}

/// Models for frames `k..t`, ascending. Fails when any of them is missing.
pub fn teacher_set(registry: &TeacherRegistry, t: usize, k: usize) -> Result<Vec<TeacherEntry>> {
    if k > t {
        return Err(LatkdError::InvalidConfig(format!(
            "truncation start {k} is after frame {t}"
        )));
    }
    let missing: Vec<usize> = (k..t).filter(|&i| registry.get(i).is_none()).collect();
    if !missing.is_empty() {
        return Err(LatkdError::RegistryGap {
            kind: registry.chain.clone(),
            missing,
        });
    }
    Ok((k..t).filter_map(|i| registry.get(i).cloned()).collect())
}

/// Soft labels routed to each member learner.
#[derive(Debug, Clone, Default)]
pub struct TeacherLabels {
    pub mlp: Vec<SoftLabelMatrix>,
    pub gbt: Vec<SoftLabelMatrix>,
}

impl TeacherLabels {
    pub fn shared(labels: Vec<SoftLabelMatrix>) -> Self {
        Self {
            mlp: labels.clone(),
            gbt: labels,
        }
    }

    pub fn count_for(&self, learner: LearnerKind) -> usize {
        match learner {
            LearnerKind::Mlp => self.mlp.len(),
            LearnerKind::Gbt => self.gbt.len(),
            LearnerKind::Ensemble => self.mlp.len().max(self.gbt.len()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Model,
    /// Rows passed to the learner.
    pub rows_consumed: usize,
    pub loss_trace: Vec<f64>,
}

fn train_mlp(data: &DesignMatrix, teachers: &[SoftLabelMatrix], config: &LatkdConfig) -> Result<TrainedModel> {
    let spec = if teachers.is_empty() {
        CompositeLossSpec::hard_labels_only()
    } else {
        CompositeLossSpec::with_teachers(
            teachers.iter().map(|t| t.probs.clone()).collect(),
            config.kl_weight,
            config.temperature,
        )
    };
    let arch = config.learners.architecture(data.n_cols());
    let out = mlp::fit(&arch, data, &spec, &config.mlp_config())?;
    Ok(TrainedModel {
        model: Model::Mlp(out.model),
        rows_consumed: out.rows_consumed,
        loss_trace: out.loss_trace,
    })
}

fn train_gbt(data: &DesignMatrix, teachers: &[SoftLabelMatrix], config: &LatkdConfig) -> Result<TrainedModel> {
    let positives: Vec<Vec<f64>> = teachers.iter().map(SoftLabelMatrix::positive).collect();
    let out = gbt::train(data, &positives, config.kl_weight, &config.gbt_config())?;
    Ok(TrainedModel {
        model: Model::Gbt(out.model),
        rows_consumed: out.rows_consumed,
        loss_trace: out.loss_trace,
    })
}

/// Trains `config.learner` on `data` alone. With no teachers this is plain
/// baseline training.
pub fn train_learner(data: &DesignMatrix, teachers: &TeacherLabels, config: &LatkdConfig) -> Result<TrainedModel> {
    config.validate()?;
    for t in teachers.mlp.iter().chain(&teachers.gbt) {
        if t.n_rows() != data.n_rows() {
            return Err(LatkdError::RowMismatch {
                expected: data.n_rows(),
                actual: t.n_rows(),
            });
        }
    }
    match config.learner {
        LearnerKind::Mlp => train_mlp(data, &teachers.mlp, config),
        LearnerKind::Gbt => train_gbt(data, &teachers.gbt, config),
        LearnerKind::Ensemble => {
            let a = train_mlp(data, &teachers.mlp, config)?;
            let b = train_gbt(data, &teachers.gbt, config)?;
            Ok(TrainedModel {
                model: Model::Ensemble(EnsembleModel::new(vec![a.model, b.model], None)?),
                rows_consumed: data.n_rows(),
                loss_trace: a.loss_trace,
            })
        }
    }
}

fn member_of(model: &Model, kind: LearnerKind) -> Result<&Model> {
    match model {
        Model::Ensemble(e) => e
            .members()
            .iter()
            .find(|m| m.kind() == kind)
            .ok_or_else(|| LatkdError::InvalidConfig(format!("teacher ensemble has no {kind} member"))),
        other => Err(LatkdError::InvalidConfig(format!(
            "expected an ensemble teacher, found {}",
            other.kind()
        ))),
    }
}

/// Loads the teachers and scores them on `data`.
pub fn gather_teachers(
    run: &RunDir,
    cache: &mut SoftLabelCache,
    entries: &[TeacherEntry],
    data: &DesignMatrix,
    config: &LatkdConfig,
) -> Result<TeacherLabels> {
    let mut labels = TeacherLabels::default();
    for entry in entries {
        let model = Model::load(run.store(), &entry.model_hash)?;
        match (config.learner, config.teacher_source) {
            (LearnerKind::Ensemble, TeacherSource::SameLearner) => {
                for kind in [LearnerKind::Mlp, LearnerKind::Gbt] {
                    let member = member_of(&model, kind)?;
                    let sl = materialize_soft_labels(&member.content_hash()?, member, data, cache)?;
                    match kind {
                        LearnerKind::Mlp => labels.mlp.push(sl),
                        _ => labels.gbt.push(sl),
                    }
                }
            }
            (learner, _) => {
                if model.kind() != learner {
                    return Err(LatkdError::InvalidConfig(format!(
                        "frame {} teacher is {}, expected {learner}",
                        entry.frame_index,
                        model.kind()
                    )));
                }
                let sl = materialize_soft_labels(&entry.model_hash, &model, data, cache)?;
                labels.mlp.push(sl.clone());
                labels.gbt.push(sl);
            }
        }
    }
    Ok(labels)
}

/// Held-out metrics for a trained model. Empty when `test` lacks positives.
pub fn evaluate(model: &Model, test: Option<&DesignMatrix>) -> Result<BTreeMap<String, f64>> {
    let mut metrics = BTreeMap::new();
    if let Some(test) = test {
        let labels = test.hard_labels()?;
        if labels.contains(&1) {
            let scores = positive_scores(model, test.features.view())?;
            metrics.insert("test_auprc".to_string(), eval::average_precision(&scores, &labels)?);
            if labels.contains(&0) {
                metrics.insert("test_auroc".to_string(), eval::auroc(&scores, &labels)?);
            }
        }
    }
    Ok(metrics)
}

/// What one call to [`train_frame`] did.
#[derive(Debug, Clone)]
pub struct FrameOutcome {
    pub index: usize,
    pub model: Model,
    pub model_hash: String,
    pub rows_consumed: usize,
    pub teachers: usize,
    pub loss_trace: Vec<f64>,
    /// Teacher scoring plus learner training.
    pub train_seconds: f64,
    pub metrics: BTreeMap<String, f64>,
}

/// Stores `model` and appends it to `chain` at `index`.
#[allow(clippy::too_many_arguments)]
pub fn record_model(
    run: &mut RunDir,
    chain: &str,
    index: usize,
    model: &Model,
    rows_consumed: usize,
    training_window: String,
    config_hash: String,
    metrics: BTreeMap<String, f64>,
    wall_clock_seconds: f64,
) -> Result<String> {
    let model_hash = model.store(run.store())?;
    run.append_frame(FrameEntry {
        chain: chain.to_string(),
        index,
        learner: model.kind().to_string(),
        model_hash: model_hash.clone(),
        training_window,
        config_hash,
        rows_consumed,
        metrics,
        wall_clock_seconds,
        created_at: chrono::Utc::now().to_rfc3339(),
    })?;
    Ok(model_hash)
}

/// Trains frame `t` of `chain` on `frame_data` only, with the chain's models
/// for frames `K..t` as teachers, and registers the result.
pub fn train_frame(
    run: &mut RunDir,
    cache: &mut SoftLabelCache,
    chain: &str,
    t: usize,
    frame_data: &DesignMatrix,
    config: &LatkdConfig,
    test: Option<&DesignMatrix>,
) -> Result<FrameOutcome> {
    config.validate()?;
    let registry = TeacherRegistry::from_manifest(run.manifest(), chain);
    let k = config.truncation_start.min(t);
    let entries = teacher_set(&registry, t, k)?;

    let start = Instant::now();
    let teachers = gather_teachers(run, cache, &entries, frame_data, config)?;
    let trained = train_learner(frame_data, &teachers, config)?;
    let train_seconds = start.elapsed().as_secs_f64();

    let metrics = evaluate(&trained.model, test)?;
    let window = if entries.is_empty() {
        format!("frame {t}; no teachers")
    } else {
        format!("frame {t}; teachers {k}..={}", t - 1)
    };
    let model_hash = record_model(
        run,
        chain,
        t,
        &trained.model,
        trained.rows_consumed,
        window,
        content_hash(config)?,
        metrics.clone(),
        train_seconds,
    )?;
    Ok(FrameOutcome {
        index: t,
        model: trained.model,
        model_hash,
        rows_consumed: trained.rows_consumed,
        teachers: entries.len(),
        loss_trace: trained.loss_trace,
        train_seconds,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub index: usize,
    pub model_hash: String,
    pub rows_consumed: usize,
    pub train_seconds: f64,
    pub metrics: BTreeMap<String, f64>,
    /// True when the frame was already in the manifest and was not retrained.
    pub resumed: bool,
}

#[derive(Debug, Clone)]
pub struct ScheduleOutcome {
    pub registry: TeacherRegistry,
    pub frames: Vec<FrameReport>,
}

/// Trains every frame in order, scoring each new model on `test`. Frames already registered for `chain` under the
/// same configuration are skipped, so an interrupted schedule can be rerun to
/// completion.
pub fn run_schedule(
    run: &mut RunDir,
    cache: &mut SoftLabelCache,
    chain: &str,
    frames: &[DesignMatrix],
    test: Option<&DesignMatrix>,
    config: &LatkdConfig,
) -> Result<ScheduleOutcome> {
    config.validate()?;
    let config_hash = content_hash(config)?;
    let mut reports = Vec::with_capacity(frames.len());
    for (t, frame) in frames.iter().enumerate() {
        if let Some(done) = run.manifest().entry(chain, t) {
            if done.config_hash != config_hash {
                return Err(LatkdError::InvalidConfig(format!(
                    "chain `{chain}` frame {t} was trained under a different configuration"
                ))
                .in_frame(t));
            }
            reports.push(FrameReport {
                index: t,
                model_hash: done.model_hash.clone(),
                rows_consumed: done.rows_consumed,
                train_seconds: done.wall_clock_seconds,
                metrics: done.metrics.clone(),
                resumed: true,
            });
            continue;
        }
        let out = train_frame(run, cache, chain, t, frame, config, test).map_err(|e| e.in_frame(t))?;
        reports.push(FrameReport {
            index: t,
            model_hash: out.model_hash,
            rows_consumed: out.rows_consumed,
            train_seconds: out.train_seconds,
            metrics: out.metrics,
            resumed: false,
        });
    }
    Ok(ScheduleOutcome {
        registry: TeacherRegistry::from_manifest(run.manifest(), chain),
        frames: reports,
    })
}
