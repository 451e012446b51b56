//! A single handle over every learner, plus its content-addressed storage form.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::ensemble::EnsembleModel;
use crate::error::{LatkdError, Result};
use crate::gbt::GbtModel;
use crate::hash::{canonical_json, sha256_hex};
use crate::mlp::MlpModel;
use crate::registry::BlobStore;

pub const ENSEMBLE_FORMAT_VERSION: u32 = 1;

/// Anything that maps a feature batch to `[P(negative), P(positive)]` rows.
pub trait Scorer {
    fn input_dim(&self) -> usize;
    fn predict_proba(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>>;
}

impl Scorer for MlpModel {
    fn input_dim(&self) -> usize {
        MlpModel::input_dim(self)
    }

    fn predict_proba(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        MlpModel::predict_proba(self, batch)
    }
}

impl Scorer for GbtModel {
    fn input_dim(&self) -> usize {
        GbtModel::input_dim(self)
    }

    fn predict_proba(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        GbtModel::predict_proba(self, batch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Mlp,
    Gbt,
    Ensemble,
}

impl LearnerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LearnerKind::Mlp => "mlp",
            LearnerKind::Gbt => "gbt",
            LearnerKind::Ensemble => "ensemble",
        }
    }
}

impl std::fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LearnerKind {
    type Err = LatkdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(LearnerKind::Mlp),
            "gbt" | "xg" => Ok(LearnerKind::Gbt),
            "ensemble" => Ok(LearnerKind::Ensemble),
            other => Err(LatkdError::InvalidConfig(format!("unknown learner `{other}`"))),
        }
    }
}

/// Self-contained JSON form (ensemble members inline); used for standalone
/// model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum Model {
    Mlp(MlpModel),
    Gbt(GbtModel),
    Ensemble(EnsembleModel),
}

/// Blob-store form: ensembles reference their members by hash.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum StoredModel {
    Mlp { model: MlpModel },
    Gbt { model: GbtModel },
    Ensemble { format_version: u32, members: Vec<String>, weights: Option<Vec<f64>> },
}

impl Model {
    pub fn kind(&self) -> LearnerKind {
        match self {
            Model::Mlp(_) => LearnerKind::Mlp,
            Model::Gbt(_) => LearnerKind::Gbt,
            Model::Ensemble(_) => LearnerKind::Ensemble,
        }
    }

    fn stored_bytes(&self, member_hash: &mut dyn FnMut(&Model) -> Result<String>) -> Result<Vec<u8>> {
        let stored = match self {
            Model::Mlp(m) => StoredModel::Mlp { model: m.clone() },
            Model::Gbt(m) => StoredModel::Gbt { model: m.clone() },
            Model::Ensemble(e) => StoredModel::Ensemble {
                format_version: ENSEMBLE_FORMAT_VERSION,
                members: e.members().iter().map(|m| member_hash(m)).collect::<Result<_>>()?,
                weights: e.weights().map(<[f64]>::to_vec),
            },
        };
        canonical_json(&stored)
    }

    /// Hash the model would be stored under.
    pub fn content_hash(&self) -> Result<String> {
        Ok(sha256_hex(&self.stored_bytes(&mut |m| m.content_hash())?))
    }

    /// Stores the model (and any ensemble members) and returns its hash.
    pub fn store(&self, store: &BlobStore) -> Result<String> {
        let bytes = self.stored_bytes(&mut |m| m.store(store))?;
        store.put_blob(&bytes)
    }

    pub fn load(store: &BlobStore, hash: &str) -> Result<Model> {
        let bytes = store.get_blob(hash)?;
        let stored: StoredModel = serde_json::from_slice(&bytes)?;
        Ok(match stored {
            StoredModel::Mlp { model } => Model::Mlp(MlpModel::from_json(&serde_json::to_string(&model)?)?),
            StoredModel::Gbt { model } => Model::Gbt(GbtModel::from_json(&serde_json::to_string(&model)?)?),
            StoredModel::Ensemble {
                format_version,
                members,
                weights,
            } => {
                if format_version != ENSEMBLE_FORMAT_VERSION {
                    return Err(LatkdError::FormatVersion {
                        found: format_version,
                        expected: ENSEMBLE_FORMAT_VERSION,
                    });
                }
                let members = members.iter().map(|h| Model::load(store, h)).collect::<Result<_>>()?;
                Model::Ensemble(EnsembleModel::new(members, weights)?)
            }
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Model> {
        let m: Model = serde_json::from_str(s)?;
        // Re-run the per-learner version and shape checks.
        Ok(match m {
            Model::Mlp(inner) => Model::Mlp(MlpModel::from_json(&inner.to_json()?)?),
            Model::Gbt(inner) => Model::Gbt(GbtModel::from_json(&inner.to_json()?)?),
            Model::Ensemble(e) => {
                let members = e
                    .members()
                    .iter()
                    .map(|m| Model::from_json(&m.to_json()?))
                    .collect::<Result<_>>()?;
                Model::Ensemble(EnsembleModel::new(members, e.weights().map(<[f64]>::to_vec))?)
            }
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| LatkdError::io(path, e))
    }

    pub fn load_file(path: impl AsRef<Path>) -> Result<Model> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LatkdError::io(path, e))?;
        Model::from_json(&text)
    }
}

impl Scorer for Model {
    fn input_dim(&self) -> usize {
        match self {
            Model::Mlp(m) => m.input_dim(),
            Model::Gbt(m) => m.input_dim(),
            Model::Ensemble(e) => e.input_dim(),
        }
    }

    fn predict_proba(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            Model::Mlp(m) => m.predict_proba(batch),
            Model::Gbt(m) => m.predict_proba(batch),
            Model::Ensemble(e) => e.predict_proba(batch),
        }
    }
}

/// Positive-class column of [`Scorer::predict_proba`].
pub fn positive_scores(model: &impl Scorer, batch: ArrayView2<f64>) -> Result<Vec<f64>> {
    Ok(model.predict_proba(batch)?.column(1).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbt::{logit, GbtConfig, GBT_FORMAT_VERSION};
    use crate::mlp::MlpArchitecture;
    use ndarray::array;
    use rand::SeedableRng;

    fn gbt(p: f64) -> Model {
        Model::Gbt(GbtModel {
            format_version: GBT_FORMAT_VERSION,
            n_features: 2,
            base_score: logit(p),
            trees: vec![],
            config: GbtConfig::default(),
            training_config_hash: None,
        })
    }

    fn mlp() -> Model {
        let arch = MlpArchitecture::fraud_default(2).with_hidden(vec![3, 3]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        Model::Mlp(MlpModel::init(arch, &mut rng).unwrap())
    }

    #[test]
    fn store_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = BlobStore::new(dir.path());
        let ens = Model::Ensemble(EnsembleModel::new(vec![mlp(), gbt(0.3)], None).unwrap());
        for m in [mlp(), gbt(0.1), ens] {
            let h = m.store(&store).unwrap();
            assert_eq!(h, m.content_hash().unwrap());
            let back = Model::load(&store, &h).unwrap();
            assert_eq!(back, m);
            let x = array![[0.5, -1.0], [2.0, 0.25]];
            assert_eq!(back.predict_proba(x.view()).unwrap(), m.predict_proba(x.view()).unwrap());
        }
    }

    #[test]
    fn portable_json_round_trip() {
        let ens = Model::Ensemble(EnsembleModel::new(vec![mlp(), gbt(0.3)], Some(vec![0.25, 0.75])).unwrap());
        let back = Model::from_json(&ens.to_json().unwrap()).unwrap();
        assert_eq!(back, ens);
        assert_eq!(back.kind(), LearnerKind::Ensemble);
    }

    #[test]
    fn hashes_differ_between_models() {
        assert_ne!(gbt(0.1).content_hash().unwrap(), gbt(0.2).content_hash().unwrap());
    }
}
