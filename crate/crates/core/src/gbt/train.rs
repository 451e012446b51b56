use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::objective::{binary_composite_loss, grad_hess, logit, sigmoid};
use super::tree::{build_tree, split_gain, SortedColumns, SplitParams, TreeNode};
use crate::data::DesignMatrix;
use crate::error::{LatkdError, Result};
use crate::hash;
use crate::mlp::stream;

pub const GBT_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_MISSING_MARKER: f64 = -0.001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtConfig {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub gamma: f64,
    pub reg_lambda: f64,
    pub reg_alpha: f64,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub missing_marker: Option<f64>,
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            n_estimators: 200,
            learning_rate: 0.1,
            max_depth: 3,
            min_child_weight: 2.89,
            gamma: 0.9,
            reg_lambda: 40.0,
            reg_alpha: 3.0,
            subsample: 0.94,
            colsample_bytree: 0.8,
            missing_marker: Some(DEFAULT_MISSING_MARKER),
            seed: 0,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| v > 0.0 && v <= 1.0;
        if !frac(self.subsample) || !frac(self.colsample_bytree) {
            return Err(LatkdError::InvalidConfig("subsample and colsample_bytree must be in (0, 1]".into()));
        }
        if self.max_depth == 0 {
            return Err(LatkdError::InvalidConfig("max_depth must be >= 1".into()));
        }
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if ![self.min_child_weight, self.gamma, self.reg_lambda, self.reg_alpha]
            .into_iter()
            .all(nonneg)
        {
            return Err(LatkdError::InvalidConfig(
                "min_child_weight, gamma, reg_lambda and reg_alpha must be finite and >= 0".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(LatkdError::InvalidConfig("learning_rate must be > 0".into()));
        }
        Ok(())
    }

    pub fn split_params(&self) -> SplitParams {
        SplitParams {
            max_depth: self.max_depth,
            min_child_weight: self.min_child_weight,
            gamma: self.gamma,
            reg_lambda: self.reg_lambda,
            reg_alpha: self.reg_alpha,
            missing_marker: self.missing_marker,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub format_version: u32,
    pub n_features: usize,
    pub base_score: f64,
    pub trees: Vec<TreeNode>,
    pub config: GbtConfig,
    #[serde(default)]
    pub training_config_hash: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GbtTrainOutcome {
    pub model: GbtModel,
    /// Mean composite training loss after each round.
    pub loss_trace: Vec<f64>,
    pub rows_consumed: usize,
}

impl GbtModel {
    pub fn input_dim(&self) -> usize {
        self.n_features
    }

    fn check_width(&self, batch: ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.n_features {
            return Err(LatkdError::DimensionMismatch {
                expected: self.n_features,
                actual: batch.ncols(),
            });
        }
        Ok(())
    }

    /// Raw log-odds per row.
    pub fn margin(&self, batch: ArrayView2<f64>) -> Result<Vec<f64>> {
        self.check_width(batch)?;
        let marker = self.config.missing_marker;
        Ok(batch
            .rows()
            .into_iter()
            .map(|row| {
                let sum: f64 = self.trees.iter().map(|t| t.predict_row(row, marker)).sum();
                self.base_score + self.config.learning_rate * sum
            })
            .collect())
    }

    /// Positive-class probability per row.
    pub fn score(&self, batch: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self.margin(batch)?.into_iter().map(sigmoid).collect())
    }

    /// Two-column `[P(negative), P(positive)]` output.
    pub fn predict_proba(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        let p = self.score(batch)?;
        let mut out = Array2::zeros((p.len(), 2));
        for (r, &v) in p.iter().enumerate() {
            out[[r, 0]] = 1.0 - v;
            out[[r, 1]] = v;
        }
        Ok(out)
    }

    /// Lists every split that violates the acceptance rules or the depth limit.
    pub fn audit(&self) -> Vec<String> {
        let cfg = &self.config;
        let mut problems = Vec::new();
        for (i, tree) in self.trees.iter().enumerate() {
            if tree.depth() > cfg.max_depth {
                problems.push(format!("tree {i}: depth {} exceeds {}", tree.depth(), cfg.max_depth));
            }
            tree.for_each_split(&mut |node| {
                if let TreeNode::Split { feature, left, right, .. } = node {
                    let (gl, hl) = left.sums();
                    let (gr, hr) = right.sums();
                    let gain = split_gain(gl, hl, gr, hr, cfg.reg_lambda, cfg.gamma);
                    if !(gain > 0.0) {
                        problems.push(format!("tree {i}: split on feature {feature} has gain {gain}"));
                    }
                    if hl < cfg.min_child_weight || hr < cfg.min_child_weight {
                        problems.push(format!(
                            "tree {i}: split on feature {feature} has child hessians {hl}, {hr}"
                        ));
                    }
                }
            });
        }
        problems
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: GbtModel = serde_json::from_str(s)?;
        if m.format_version != GBT_FORMAT_VERSION {
            return Err(LatkdError::FormatVersion {
                found: m.format_version,
                expected: GBT_FORMAT_VERSION,
            });
        }
        m.config.validate()?;
        Ok(m)
    }
}

fn sample_sorted(rng: &mut rand_chacha::ChaCha8Rng, n: usize, fraction: f64) -> Vec<usize> {
    if fraction >= 1.0 {
        return (0..n).collect();
    }
    let k = ((n as f64 * fraction).round() as usize).clamp(1, n);
    let mut idx = sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Boosts exactly `n_estimators` trees on `data`. `teachers` holds one
/// positive-class probability vector per teacher, aligned with `data`'s rows.
pub fn train(data: &DesignMatrix, teachers: &[Vec<f64>], kl_weight: f64, config: &GbtConfig) -> Result<GbtTrainOutcome> {
    config.validate()?;
    let labels = data.hard_labels()?;
    let n = labels.len();
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == n {
        return Err(LatkdError::SingleClass {
            positives,
            negatives: n - positives,
        });
    }
    let teacher_refs: Vec<&[f64]> = teachers.iter().map(Vec::as_slice).collect();
    // Validates shapes and ranges before any tree is grown.
    grad_hess(&vec![0.5; n], &labels, &teacher_refs, kl_weight)?;

    let x = data.features.view();
    let d = x.ncols();
    let params = config.split_params();
    let sorted = SortedColumns::new(x);
    let base_score = logit(positives as f64 / n as f64);
    let mut margin = vec![base_score; n];
    let mut trees = Vec::with_capacity(config.n_estimators);
    let mut loss_trace = Vec::with_capacity(config.n_estimators);

    for round in 0..config.n_estimators {
        let mut rng = stream(config.seed, round as u64);
        let rows = sample_sorted(&mut rng, n, config.subsample);
        let cols = sample_sorted(&mut rng, d, config.colsample_bytree);
        let p: Vec<f64> = margin.iter().map(|&m| sigmoid(m)).collect();
        let (g, h) = grad_hess(&p, &labels, &teacher_refs, kl_weight)?;
        let tree = build_tree(x, &rows, &g, &h, &cols, &params, &sorted);
        for (r, row) in x.rows().into_iter().enumerate() {
            margin[r] += config.learning_rate * tree.predict_row(row, params.missing_marker);
        }
        let p: Vec<f64> = margin.iter().map(|&m| sigmoid(m)).collect();
        loss_trace.push(binary_composite_loss(&p, &labels, &teacher_refs, kl_weight));
        trees.push(tree);
    }

    Ok(GbtTrainOutcome {
        model: GbtModel {
            format_version: GBT_FORMAT_VERSION,
            n_features: d,
            base_score,
            trees,
            config: config.clone(),
            training_config_hash: Some(hash::content_hash(config)?),
        },
        loss_trace,
        rows_consumed: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::average_precision;
    use ndarray::array;

    fn toy(n: usize) -> DesignMatrix {
        let mut x = Array2::zeros((n, 2));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let a = (i as f64 * 0.618).fract();
            let b = (i as f64 * 0.382 + 0.1).fract();
            x[[i, 0]] = a;
            x[[i, 1]] = b;
            y.push(u8::from(a + b > 1.0));
        }
        DesignMatrix::labeled(x, y).unwrap()
    }

    #[test]
    fn separable_toy_reaches_high_auprc() {
        let data = toy(400);
        let cfg = GbtConfig {
            n_estimators: 60,
            ..GbtConfig::default()
        };
        let out = train(&data, &[], 0.0, &cfg).unwrap();
        let scores = out.model.score(data.features.view()).unwrap();
        let ap = average_precision(&scores, &data.hard_labels().unwrap()).unwrap();
        assert!(ap >= 0.99, "AUPRC {ap}");
        assert_eq!(out.model.trees.len(), 60);
        assert!(out.model.audit().is_empty());
    }

    #[test]
    fn deterministic_given_seed() {
        let data = toy(200);
        let cfg = GbtConfig {
            n_estimators: 20,
            seed: 9,
            ..GbtConfig::default()
        };
        let a = train(&data, &[], 0.0, &cfg).unwrap().model;
        let b = train(&data, &[], 0.0, &cfg).unwrap().model;
        assert_eq!(a, b);
    }

    #[test]
    fn single_class_rejected() {
        let data = DesignMatrix::labeled(array![[1.0], [2.0]], vec![1, 1]).unwrap();
        assert!(matches!(
            train(&data, &[], 0.0, &GbtConfig::default()),
            Err(LatkdError::SingleClass { positives: 2, negatives: 0 })
        ));
    }

    #[test]
    fn empty_model_scores_prior() {
        let m = GbtModel {
            format_version: GBT_FORMAT_VERSION,
            n_features: 1,
            base_score: logit(0.25),
            trees: vec![],
            config: GbtConfig::default(),
            training_config_hash: None,
        };
        let s = m.score(array![[1.0], [5.0]].view()).unwrap();
        assert!(s.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!(matches!(
            m.score(array![[1.0, 2.0]].view()),
            Err(LatkdError::DimensionMismatch { expected: 1, actual: 2 })
        ));
    }

    #[test]
    fn hand_built_stump_scores() {
        let stump = TreeNode::Split {
            feature: 0,
            threshold: 0.5,
            missing_goes: super::super::tree::Direction::Right,
            gain: 1.0,
            sum_grad: 0.0,
            sum_hess: 0.0,
            left: Box::new(TreeNode::Leaf { weight: -2.0, sum_grad: 0.0, sum_hess: 0.0 }),
            right: Box::new(TreeNode::Leaf { weight: 3.0, sum_grad: 0.0, sum_hess: 0.0 }),
        };
        let m = GbtModel {
            format_version: GBT_FORMAT_VERSION,
            n_features: 1,
            base_score: 0.0,
            trees: vec![stump],
            config: GbtConfig {
                learning_rate: 0.5,
                ..GbtConfig::default()
            },
            training_config_hash: None,
        };
        let s = m.score(array![[0.2], [0.9], [-0.001]].view()).unwrap();
        let expect = [sigmoid(-1.0), sigmoid(1.5), sigmoid(1.5)];
        for (a, b) in s.iter().zip(expect) {
            assert_eq!(*a, b);
        }
        let back = GbtModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let data = toy(150);
        let cfg = GbtConfig {
            n_estimators: 10,
            ..GbtConfig::default()
        };
        let m = train(&data, &[], 0.0, &cfg).unwrap().model;
        let back = GbtModel::from_json(&m.to_json().unwrap()).unwrap();
        let a = m.score(data.features.view()).unwrap();
        let b = back.score(data.features.view()).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn wrong_format_version_rejected() {
        let data = toy(50);
        let cfg = GbtConfig { n_estimators: 1, ..GbtConfig::default() };
        let mut m = train(&data, &[], 0.0, &cfg).unwrap().model;
        m.format_version = 99;
        assert!(matches!(
            GbtModel::from_json(&m.to_json().unwrap()),
            Err(LatkdError::FormatVersion { found: 99, .. })
        ));
    }

    #[test]
    fn full_sample_loss_non_increasing() {
        let data = toy(300);
        let q: Vec<f64> = (0..300).map(|i| ((i * 7) % 10) as f64 / 10.0).collect();
        let cfg = GbtConfig {
            n_estimators: 40,
            subsample: 1.0,
            colsample_bytree: 1.0,
            ..GbtConfig::default()
        };
        let out = train(&data, &[q], 0.5, &cfg).unwrap();
        for w in out.loss_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }
}
