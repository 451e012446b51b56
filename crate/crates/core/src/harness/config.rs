use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DesignMatrix;
use crate::distill::{LatkdConfig, LearnerSettings, TeacherSource};
use crate::driftgen::{generate, DriftScenario};
use crate::error::{LatkdError, Result};
use crate::model::LearnerKind;

/// How a variant uses history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Train on the concatenation of all frames up to the period.
    Cumulative,
    /// Train on the latest frame only, without teachers.
    Window,
    /// Train on the latest frame with earlier frames' models as teachers.
    Latkd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub name: String,
    pub learner: LearnerKind,
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_source: Option<TeacherSource>,
}

impl VariantSpec {
    /// Parses names such as `MLP`, `XG`, `MLP-XG`, `MLP-XG-LATKD` or `XG-WINDOW`.
    pub fn named(name: &str) -> Result<Self> {
        let upper = name.to_ascii_uppercase();
        let (base, strategy) = if let Some(b) = upper.strip_suffix("-LATKD") {
            (b, Strategy::Latkd)
        } else if let Some(b) = upper.strip_suffix("-WINDOW") {
            (b, Strategy::Window)
        } else {
            (upper.as_str(), Strategy::Cumulative)
        };
        let learner = match base {
            "MLP" => LearnerKind::Mlp,
            "XG" | "GBT" => LearnerKind::Gbt,
            "MLP-XG" | "ENSEMBLE" => LearnerKind::Ensemble,
            _ => return Err(LatkdError::InvalidConfig(format!("unknown variant `{name}`"))),
        };
        let teacher_source = match (strategy, learner) {
            (Strategy::Latkd, LearnerKind::Ensemble) => Some(TeacherSource::EnsembleChain),
            (Strategy::Latkd, _) => Some(TeacherSource::SameLearner),
            _ => None,
        };
        Ok(Self {
            name: upper,
            learner,
            strategy,
            teacher_source,
        })
    }
}

/// A variant given either by name or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VariantEntry {
    Name(String),
    Spec(VariantSpec),
}

impl VariantEntry {
    pub fn resolve(&self) -> Result<VariantSpec> {
        match self {
            VariantEntry::Name(n) => VariantSpec::named(n),
            VariantEntry::Spec(s) => Ok(s.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    /// Frames drawn from a drift scenario; the test set is a fresh sample of
    /// `test_frames` (`test_rows` rows each).
    Synthetic {
        scenario: DriftScenario,
        train_frames: Vec<usize>,
        test_frames: Vec<usize>,
        test_rows: usize,
    },
    /// Frames written by `latkd preprocess` (`frame-<i>.bin` in `dir`).
    Frames {
        dir: PathBuf,
        train_frames: Vec<usize>,
        test_frames: Vec<usize>,
    },
}

/// Hyperparameters of the distillation term shared by all LATKD variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatkdParams {
    pub truncation_start: usize,
    pub kl_weight: f64,
    pub temperature: f64,
}

impl Default for LatkdParams {
    fn default() -> Self {
        let d = LatkdConfig::default();
        Self {
            truncation_start: d.truncation_start,
            kl_weight: d.kl_weight,
            temperature: d.temperature,
        }
    }
}

fn default_runs() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub data: DataSource,
    pub variants: Vec<VariantEntry>,
    /// Variant that relative differences are computed against.
    #[serde(default)]
    pub baseline: Option<String>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub latkd: LatkdParams,
    #[serde(default)]
    pub learners: LearnerSettings,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LatkdError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn variants(&self) -> Result<Vec<VariantSpec>> {
        self.variants.iter().map(VariantEntry::resolve).collect()
    }

    /// Copy with every variant spelled out, as recorded in the manifest.
    pub fn resolved(&self) -> Result<Self> {
        self.validate()?;
        let mut c = self.clone();
        c.variants = self.variants()?.into_iter().map(VariantEntry::Spec).collect();
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return Err(LatkdError::InvalidConfig(format!("invalid experiment name `{}`", self.name)));
        }
        let variants = self.variants()?;
        if variants.is_empty() {
            return Err(LatkdError::InvalidConfig("at least one variant is required".into()));
        }
        let mut names: Vec<&str> = variants.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(LatkdError::InvalidConfig("variant names must be unique".into()));
        }
        if let Some(b) = &self.baseline {
            if !variants.iter().any(|v| &v.name == b) {
                return Err(LatkdError::InvalidConfig(format!("baseline `{b}` is not a configured variant")));
            }
        }
        if self.runs == 0 {
            return Err(LatkdError::InvalidConfig("runs must be >= 1".into()));
        }
        let (train, test) = match &self.data {
            DataSource::Synthetic {
                train_frames,
                test_frames,
                ..
            }
            | DataSource::Frames {
                train_frames,
                test_frames,
                ..
            } => (train_frames, test_frames),
        };
        if train.is_empty() || test.is_empty() {
            return Err(LatkdError::InvalidConfig("train_frames and test_frames must be non-empty".into()));
        }
        for v in &variants {
            self.latkd_config(v, self.seed)?.validate()?;
        }
        Ok(())
    }

    /// Learner configuration for one variant and seed.
    pub fn latkd_config(&self, variant: &VariantSpec, seed: u64) -> Result<LatkdConfig> {
        let teacher_source = variant.teacher_source.unwrap_or(match variant.learner {
            LearnerKind::Ensemble if variant.strategy == Strategy::Latkd => TeacherSource::EnsembleChain,
            _ => TeacherSource::SameLearner,
        });
        Ok(LatkdConfig {
            truncation_start: self.latkd.truncation_start,
            kl_weight: self.latkd.kl_weight,
            temperature: self.latkd.temperature,
            learner: variant.learner,
            teacher_source,
            seed,
            learners: self.learners.clone(),
        })
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.runs as u64).map(move |r| self.seed + r)
    }
}

/// Training frames (in period order) and the shared test set.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: Vec<DesignMatrix>,
    pub test: DesignMatrix,
}

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("frame-{index}.bin"))
}

pub fn load_data(source: &DataSource) -> Result<ExperimentData> {
    match source {
        DataSource::Synthetic {
            scenario,
            train_frames,
            test_frames,
            test_rows,
        } => {
            let stream = generate(scenario)?;
            let pick = |i: usize| {
                stream.frames.get(i).cloned().ok_or_else(|| {
                    LatkdError::InvalidConfig(format!("scenario has no frame {i}"))
                })
            };
            let train = train_frames.iter().map(|&i| pick(i)).collect::<Result<Vec<_>>>()?;
            let tests = test_frames
                .iter()
                .map(|&f| scenario.sample_frame(f, *test_rows, 1).map(|(m, _)| m))
                .collect::<Result<Vec<_>>>()?;
            let test = DesignMatrix::concat(&tests.iter().collect::<Vec<_>>())?;
            Ok(ExperimentData { train, test })
        }
        DataSource::Frames {
            dir,
            train_frames,
            test_frames,
        } => {
            let load = |i: &usize| DesignMatrix::load(frame_path(dir, *i));
            let train = train_frames.iter().map(load).collect::<Result<Vec<_>>>()?;
            let tests = test_frames.iter().map(load).collect::<Result<Vec<_>>>()?;
            let test = DesignMatrix::concat(&tests.iter().collect::<Vec<_>>())?;
            Ok(ExperimentData { train, test })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names() {
        let v = VariantSpec::named("mlp-xg-latkd").unwrap();
        assert_eq!(v.name, "MLP-XG-LATKD");
        assert_eq!(v.learner, LearnerKind::Ensemble);
        assert_eq!(v.strategy, Strategy::Latkd);
        assert_eq!(v.teacher_source, Some(TeacherSource::EnsembleChain));
        assert_eq!(VariantSpec::named("XG").unwrap().strategy, Strategy::Cumulative);
        assert_eq!(VariantSpec::named("MLP-WINDOW").unwrap().strategy, Strategy::Window);
        assert!(VariantSpec::named("SVM").is_err());
    }

    #[test]
    fn config_parses_names_and_specs() {
        let text = r#"{
            "name": "demo",
            "data": {"source": "frames", "dir": "x", "train_frames": [0], "test_frames": [1]},
            "variants": ["MLP", {"name": "mine", "learner": "gbt", "strategy": "latkd"}],
            "baseline": "MLP"
        }"#;
        let c: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert_eq!(c.runs, 10);
        let v = c.variants().unwrap();
        assert_eq!(v[1].learner, LearnerKind::Gbt);
        c.validate().unwrap();
        let r = c.resolved().unwrap();
        assert!(r.variants.iter().all(|v| matches!(v, VariantEntry::Spec(_))));
    }

    #[test]
    fn bad_baseline_rejected() {
        let text = r#"{
            "name": "demo",
            "data": {"source": "frames", "dir": "x", "train_frames": [0], "test_frames": [1]},
            "variants": ["MLP"],
            "baseline": "XG"
        }"#;
        let c: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert!(c.validate().is_err());
    }
}
