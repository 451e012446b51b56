//! Probability-averaging ensemble over trained models.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{LatkdError, Result};
use crate::model::{Model, Scorer};

const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    members: Vec<Model>,
    /// Uniform when absent.
    weights: Option<Vec<f64>>,
}

impl EnsembleModel {
    pub fn new(members: Vec<Model>, weights: Option<Vec<f64>>) -> Result<Self> {
        if members.is_empty() {
            return Err(LatkdError::InvalidConfig("an ensemble needs at least one member".into()));
        }
        if members.iter().any(|m| matches!(m, Model::Ensemble(_))) {
            return Err(LatkdError::InvalidConfig("ensemble members must be single models".into()));
        }
        let width = members[0].input_dim();
        if let Some(m) = members.iter().find(|m| m.input_dim() != width) {
            return Err(LatkdError::DimensionMismatch {
                expected: width,
                actual: m.input_dim(),
            });
        }
        if let Some(w) = &weights {
            if w.len() != members.len() {
                return Err(LatkdError::InvalidConfig(format!(
                    "{} weights for {} members",
                    w.len(),
                    members.len()
                )));
            }
            let sum: f64 = w.iter().sum();
            if w.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > WEIGHT_TOLERANCE {
                return Err(LatkdError::InvalidConfig(format!(
                    "ensemble weights must be non-negative and sum to 1 (sum {sum})"
                )));
            }
        }
        Ok(Self { members, weights })
    }

    pub fn members(&self) -> &[Model] {
        &self.members
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Effective per-member weights.
    pub fn resolved_weights(&self) -> Vec<f64> {
        match &self.weights {
            Some(w) => w.clone(),
            None => vec![1.0 / self.members.len() as f64; self.members.len()],
        }
    }
}

impl Scorer for EnsembleModel {
    fn input_dim(&self) -> usize {
        self.members[0].input_dim()
    }

    /// Row-wise weighted mean of member probabilities, accumulated in member order.
    fn predict_proba(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        let weights = self.resolved_weights();
        let mut out = Array2::zeros((batch.nrows(), 2));
        for (member, w) in self.members.iter().zip(weights) {
            out.scaled_add(w, &member.predict_proba(batch)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbt::{logit, GbtConfig, GbtModel, GBT_FORMAT_VERSION};
    use ndarray::array;
    use proptest::prelude::*;

    fn constant(p: f64) -> Model {
        Model::Gbt(GbtModel {
            format_version: GBT_FORMAT_VERSION,
            n_features: 1,
            base_score: logit(p),
            trees: vec![],
            config: GbtConfig::default(),
            training_config_hash: None,
        })
    }

    fn close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) -> bool {
        a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn two_member_mean() {
        let e = EnsembleModel::new(vec![constant(0.2), constant(0.4)], None).unwrap();
        let p = e.predict_proba(array![[0.0]].view()).unwrap();
        assert!(close(&p, &array![[0.7, 0.3]], 1e-12));
    }

    #[test]
    fn single_member_is_identity() {
        let m = constant(0.37);
        let e = EnsembleModel::new(vec![m.clone()], None).unwrap();
        let x = array![[0.0], [1.0]];
        assert_eq!(e.predict_proba(x.view()).unwrap(), m.predict_proba(x.view()).unwrap());
    }

    #[test]
    fn weighted_hand_values() {
        // 0.5·0.8 + 0.25·0.4 + 0.25·0.2 = 0.55
        let e = EnsembleModel::new(
            vec![constant(0.8), constant(0.4), constant(0.2)],
            Some(vec![0.5, 0.25, 0.25]),
        )
        .unwrap();
        let p = e.predict_proba(array![[3.0]].view()).unwrap();
        assert!(close(&p, &array![[0.45, 0.55]], 1e-12));
    }

    #[test]
    fn invalid_ensembles_rejected() {
        assert!(EnsembleModel::new(vec![], None).is_err());
        assert!(EnsembleModel::new(vec![constant(0.5)], Some(vec![0.7])).is_err());
        assert!(EnsembleModel::new(vec![constant(0.5), constant(0.5)], Some(vec![1.0])).is_err());
        let inner = Model::Ensemble(EnsembleModel::new(vec![constant(0.5)], None).unwrap());
        assert!(EnsembleModel::new(vec![inner], None).is_err());
        let e = EnsembleModel::new(vec![constant(0.5)], None).unwrap();
        assert!(matches!(
            e.predict_proba(array![[1.0, 2.0]].view()),
            Err(LatkdError::DimensionMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn convex_and_permutation_invariant(ps in prop::collection::vec(0.01f64..0.99, 1..6), rot in 0usize..6) {
            let members: Vec<Model> = ps.iter().map(|&p| constant(p)).collect();
            let mut rotated = members.clone();
            rotated.rotate_left(rot % members.len());
            let x = array![[0.0]];
            let a = EnsembleModel::new(members, None).unwrap().predict_proba(x.view()).unwrap();
            let b = EnsembleModel::new(rotated, None).unwrap().predict_proba(x.view()).unwrap();
            prop_assert!(close(&a, &b, 1e-12));
            let lo = ps.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(a[[0, 1]] >= lo - 1e-12 && a[[0, 1]] <= hi + 1e-12);
            prop_assert!((a[[0, 0]] + a[[0, 1]] - 1.0).abs() < 1e-12);
        }
    }
}
