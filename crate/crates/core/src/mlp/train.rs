//! Mini-batch SGD with momentum under the composite loss.

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{composite_loss_unchecked, logit_gradient, CompositeLossSpec};
use super::network::{MlpArchitecture, MlpModel, Pass};
use crate::data::DesignMatrix;
use crate::error::{LatkdError, Result};
use crate::{eval, hash};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStopping {
    pub validation_fraction: f64,
    pub patience: usize,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        Self {
            validation_fraction: 0.1,
            patience: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpTrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stopping: Option<EarlyStopping>,
    pub seed: u64,
}

impl Default for MlpTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 512,
            max_epochs: 100,
            early_stopping: Some(EarlyStopping::default()),
            seed: 0,
        }
    }
}

impl MlpTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || self.max_epochs == 0 {
            return Err(LatkdError::InvalidConfig(
                "batch_size must be >= 2 and max_epochs >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(LatkdError::InvalidConfig(
                "learning_rate must be > 0 and momentum in [0, 1)".into(),
            ));
        }
        if let Some(es) = &self.early_stopping {
            if !(es.validation_fraction > 0.0 && es.validation_fraction < 1.0) {
                return Err(LatkdError::InvalidConfig(
                    "validation_fraction must be in (0, 1)".into(),
                ));
            }
        }
        Ok(())
    }
}

// Independent RNG streams derived from one seed.
const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_SPLIT: u64 = 3;

pub(crate) fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone)]
pub struct MlpTrainOutcome {
    pub model: MlpModel,
    /// Mean composite loss over the training rows, per epoch.
    pub loss_trace: Vec<f64>,
    pub epochs_run: usize,
    /// Rows handed to the trainer (training plus validation split).
    pub rows_consumed: usize,
    pub best_validation_auprc: Option<f64>,
}

fn check_classes(labels: &[u8]) -> Result<()> {
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(LatkdError::SingleClass {
            positives,
            negatives,
        });
    }
    Ok(())
}

/// Stratified split; `None` when either class is too small to spare a validation row.
fn validation_split(labels: &[u8], fraction: f64, rng: &mut ChaCha8Rng) -> Option<(Vec<usize>, Vec<usize>)> {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(rng);
        let k = ((idx.len() as f64) * fraction).round() as usize;
        if k == 0 || k >= idx.len() {
            return None;
        }
        val.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Some((train, val))
}

/// Batch boundaries; a trailing single row joins the previous batch so
/// batch statistics are always defined.
fn batch_ranges(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    let mut ranges: Vec<_> = (0..n)
        .step_by(batch_size)
        .map(|s| s..(s + batch_size).min(n))
        .collect();
    if ranges.len() > 1 && ranges.last().is_some_and(|r| r.len() == 1) {
        let last = ranges.pop().expect("non-empty");
        ranges.last_mut().expect("non-empty").end = last.end;
    }
    ranges
}

/// Initializes a model from `config.seed` and trains it.
pub fn fit(
    architecture: &MlpArchitecture,
    data: &DesignMatrix,
    spec: &CompositeLossSpec,
    config: &MlpTrainConfig,
) -> Result<MlpTrainOutcome> {
    let model = MlpModel::init(architecture.clone(), &mut stream(config.seed, STREAM_INIT))?;
    train(model, data, spec, config)
}

/// Trains `model` on `data` under the composite loss; returns the model in
/// inference form (the best validation epoch when early stopping is on).
pub fn train(
    mut model: MlpModel,
    data: &DesignMatrix,
    spec: &CompositeLossSpec,
    config: &MlpTrainConfig,
) -> Result<MlpTrainOutcome> {
    config.validate()?;
    if data.n_cols() != model.input_dim() {
        return Err(LatkdError::DimensionMismatch {
            expected: model.input_dim(),
            actual: data.n_cols(),
        });
    }
    let labels = data.hard_labels()?;
    check_classes(&labels)?;
    spec.validate(data.n_rows())?;

    let (train_rows, val_rows) = match &config.early_stopping {
        Some(es) => match validation_split(&labels, es.validation_fraction, &mut stream(config.seed, STREAM_SPLIT)) {
            Some((t, v)) => (t, Some(v)),
            None => {
                log::warn!("too few rows per class for a validation split; early stopping disabled");
                ((0..labels.len()).collect(), None)
            }
        },
        None => ((0..labels.len()).collect(), None),
    };
    let patience = config.early_stopping.as_ref().map_or(usize::MAX, |es| es.patience);
    let val = val_rows.as_ref().map(|v| {
        let x = data.features.select(Axis(0), v);
        let y: Vec<u8> = v.iter().map(|&i| labels[i]).collect();
        (x, y)
    });

    let mut shuffle_rng = stream(config.seed, STREAM_SHUFFLE);
    let mut dropout_rng = stream(config.seed, STREAM_DROPOUT);
    let mut velocity = model.zero_like_params();
    let mut loss_trace = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(f64, MlpModel)> = None;
    let mut since_best = 0;
    let mut order = train_rows.clone();

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (b, range) in batch_ranges(order.len(), config.batch_size).into_iter().enumerate() {
            let rows = &order[range];
            let x = data.features.select(Axis(0), rows);
            let y: Vec<u8> = rows.iter().map(|&i| labels[i]).collect();
            let batch_spec = spec.select_rows(rows);
            let cache = model.forward_cached(
                x.view(),
                Pass {
                    batch_stats: true,
                    dropout: Some(&mut dropout_rng),
                },
            );
            let loss = composite_loss_unchecked(cache.probs.view(), &y, &batch_spec);
            if !loss.is_finite() {
                return Err(LatkdError::Divergence { epoch, batch: b });
            }
            epoch_loss += loss * rows.len() as f64;
            let dlogits = logit_gradient(cache.probs.view(), &y, &batch_spec);
            let grads = model.backward(&cache, &dlogits, true);
            if let (Some(bn), Some(stats)) = (model.batch_norm.as_mut(), cache.hidden[0].bn.as_ref()) {
                bn.update_running(&stats.batch_mean, &stats.batch_var);
            }
            for ((param, vel), grad) in model
                .param_slices_mut()
                .into_iter()
                .zip(velocity.iter_mut())
                .zip(grads.iter())
            {
                for ((p, v), g) in param.iter_mut().zip(vel.iter_mut()).zip(grad.iter()) {
                    *v = config.momentum * *v - config.learning_rate * g;
                    *p += *v;
                }
            }
        }
        let mean_loss = epoch_loss / order.len() as f64;
        if !mean_loss.is_finite() {
            return Err(LatkdError::Divergence { epoch, batch: 0 });
        }
        loss_trace.push(mean_loss);

        if let Some((vx, vy)) = &val {
            let score = validation_auprc(&model, vx.view(), vy)?;
            match &best {
                Some((b, _)) if score <= *b => since_best += 1,
                _ => {
                    best = Some((score, model.clone()));
                    since_best = 0;
                }
            }
            if since_best >= patience {
                break;
            }
        }
    }

    let epochs_run = loss_trace.len();
    let (best_validation_auprc, mut model) = match best {
        Some((score, m)) => (Some(score), m),
        None => (None, model),
    };
    model.training_config_hash = Some(hash::content_hash(&(&model.architecture, config))?);
    Ok(MlpTrainOutcome {
        model,
        loss_trace,
        epochs_run,
        rows_consumed: data.n_rows(),
        best_validation_auprc,
    })
}

fn validation_auprc(model: &MlpModel, x: ArrayView2<f64>, y: &[u8]) -> Result<f64> {
    let probs = model.predict_proba(x)?;
    let scores: Vec<f64> = probs.column(1).to_vec();
    eval::average_precision(&scores, y)
}
