use serde::{Deserialize, Serialize};

use crate::error::{LatkdError, Result};
use crate::gbt::GbtConfig;
use crate::mlp::{MlpArchitecture, MlpTrainConfig};
use crate::model::LearnerKind;

/// Where a chain's teachers come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherSource {
    /// Each learner distills from earlier models of its own kind. For an
    /// ensemble chain, every member distills from the matching member of the
    /// earlier ensembles.
    SameLearner,
    /// Earlier ensembles, as a whole, teach both members of the new ensemble.
    EnsembleChain,
}

/// Hyperparameters of the underlying learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerSettings {
    pub mlp_hidden: Vec<usize>,
    pub mlp_batch_norm: bool,
    pub mlp_keep_prob: f64,
    pub mlp: MlpTrainConfig,
    pub gbt: GbtConfig,
}

impl Default for LearnerSettings {
    fn default() -> Self {
        let arch = MlpArchitecture::fraud_default(1);
        Self {
            mlp_hidden: arch.hidden,
            mlp_batch_norm: arch.batch_norm_after_first,
            mlp_keep_prob: arch.dropout_keep_prob,
            mlp: MlpTrainConfig::default(),
            gbt: GbtConfig::default(),
        }
    }
}

impl LearnerSettings {
    pub fn architecture(&self, input_dim: usize) -> MlpArchitecture {
        MlpArchitecture {
            input_dim,
            hidden: self.mlp_hidden.clone(),
            batch_norm_after_first: self.mlp_batch_norm,
            dropout_keep_prob: self.mlp_keep_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatkdConfig {
    /// `K`: the earliest frame whose model may teach.
    pub truncation_start: usize,
    pub kl_weight: f64,
    pub temperature: f64,
    pub learner: LearnerKind,
    pub teacher_source: TeacherSource,
    /// Overrides the seeds inside `learners`.
    pub seed: u64,
    #[serde(default)]
    pub learners: LearnerSettings,
}

impl Default for LatkdConfig {
    fn default() -> Self {
        Self {
            truncation_start: 0,
            kl_weight: 1.0,
            temperature: 1.0,
            learner: LearnerKind::Mlp,
            teacher_source: TeacherSource::SameLearner,
            seed: 0,
            learners: LearnerSettings::default(),
        }
    }
}

impl LatkdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(LatkdError::InvalidConfig(format!("kl_weight must be >= 0, got {}", self.kl_weight)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(LatkdError::InvalidConfig(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if self.teacher_source == TeacherSource::EnsembleChain && self.learner != LearnerKind::Ensemble {
            return Err(LatkdError::InvalidConfig(
                "teacher_source `ensemble_chain` needs learner `ensemble`".into(),
            ));
        }
        self.mlp_config().validate()?;
        self.gbt_config().validate()
    }

    pub fn mlp_config(&self) -> MlpTrainConfig {
        MlpTrainConfig {
            seed: self.seed,
            ..self.learners.mlp.clone()
        }
    }

    pub fn gbt_config(&self) -> GbtConfig {
        GbtConfig {
            seed: self.seed,
            ..self.learners.gbt.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}
