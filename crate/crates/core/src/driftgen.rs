//! Synthetic labeled monthly frames drawn from Gaussian clusters that move,
//! appear, disappear and come back.
//!
//! Every row records the cluster that produced it, so per-cluster recall can
//! be measured exactly.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{add_months, dataset_epoch, DesignMatrix, FeatureSchema};
use crate::error::{LatkdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Normal,
    Fraud,
}

/// Axis-aligned Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub id: String,
    pub mean: Vec<f64>,
    /// Diagonal of the covariance.
    pub variance: Vec<f64>,
}

impl ClusterSpec {
    pub fn new(id: impl Into<String>, mean: Vec<f64>, variance: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            mean,
            variance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum DriftAction {
    ShiftCluster { cluster: String, delta: Vec<f64> },
    AddCluster { class: ClassLabel, spec: ClusterSpec },
    RetireCluster { cluster: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEvent {
    pub frame_index: usize,
    #[serde(flatten)]
    pub action: DriftAction,
}

/// Brings a retired cluster back, with the parameters it had when retired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recurrence {
    pub frame_index: usize,
    pub cluster: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftScenario {
    pub n_frames: usize,
    pub rows_per_frame: usize,
    pub fraud_rate: f64,
    pub feature_dim: usize,
    pub normal_components: Vec<ClusterSpec>,
    pub fraud_components: Vec<ClusterSpec>,
    #[serde(default)]
    pub drift_events: Vec<DriftEvent>,
    #[serde(default)]
    pub recurrence: Option<Recurrence>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
struct Cluster {
    class: ClassLabel,
    spec: ClusterSpec,
    active: bool,
}

/// Cluster that produced each row, per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentLog {
    pub frames: Vec<Vec<String>>,
}

impl AssignmentLog {
    /// Row indices of `frame` produced by `cluster`.
    pub fn rows_of(&self, frame: usize, cluster: &str) -> Vec<usize> {
        self.frames[frame]
            .iter()
            .enumerate()
            .filter(|(_, c)| c.as_str() == cluster)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedStream {
    pub frames: Vec<DesignMatrix>,
    pub log: AssignmentLog,
}

const SALT_MULTIPLIER: u64 = 0x9E37_79B9_7F4A_7C15;

impl DriftScenario {
    /// Six monthly frames over four features. Fraud cluster `A` is retired at
    /// frame 2 and returns at frame 5, while cluster `B` stays and drifts.
    /// Normal traffic is wide along the dimensions where `A` lives, so normal
    /// rows keep visiting `A`'s region after it is retired.
    pub fn recurring_pattern(seed: u64, rows_per_frame: usize) -> Self {
        Self {
            n_frames: 6,
            rows_per_frame,
            fraud_rate: 0.05,
            feature_dim: 4,
            normal_components: vec![ClusterSpec::new("normal", vec![0.0; 4], vec![1.0, 1.0, 4.0, 4.0])],
            fraud_components: vec![
                ClusterSpec::new("A", vec![0.0, 0.0, 3.0, 3.0], vec![0.5; 4]),
                ClusterSpec::new("B", vec![3.0, 3.0, 0.0, 0.0], vec![0.5; 4]),
            ],
            drift_events: vec![
                DriftEvent {
                    frame_index: 2,
                    action: DriftAction::RetireCluster { cluster: "A".into() },
                },
                DriftEvent {
                    frame_index: 3,
                    action: DriftAction::ShiftCluster {
                        cluster: "B".into(),
                        delta: vec![0.5, -0.5, 0.0, 0.0],
                    },
                },
            ],
            recurrence: Some(Recurrence {
                frame_index: 5,
                cluster: "A".into(),
            }),
            seed,
        }
    }

    /// `n_frames` frames of one normal and one fraud cluster with no drift.
    pub fn stationary(seed: u64, n_frames: usize, rows_per_frame: usize, feature_dim: usize) -> Self {
        let mut fraud_mean = vec![0.0; feature_dim];
        fraud_mean[0] = 2.0;
        Self {
            n_frames,
            rows_per_frame,
            fraud_rate: 0.05,
            feature_dim,
            normal_components: vec![ClusterSpec::new("normal", vec![0.0; feature_dim], vec![1.0; feature_dim])],
            fraud_components: vec![ClusterSpec::new("fraud", fraud_mean, vec![1.0; feature_dim])],
            drift_events: vec![],
            recurrence: None,
            seed,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(s)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LatkdError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn check_cluster(&self, c: &ClusterSpec) -> Result<()> {
        if c.mean.len() != self.feature_dim || c.variance.len() != self.feature_dim {
            return Err(LatkdError::InvalidConfig(format!(
                "cluster `{}` has dimension {}/{}, expected {}",
                c.id,
                c.mean.len(),
                c.variance.len(),
                self.feature_dim
            )));
        }
        if c.variance.iter().any(|&v| !(v > 0.0 && v.is_finite())) || c.mean.iter().any(|v| !v.is_finite()) {
            return Err(LatkdError::InvalidConfig(format!(
                "cluster `{}` needs finite means and positive variances",
                c.id
            )));
        }
        Ok(())
    }

    /// Checks parameters and that every event applies cleanly at its frame.
    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 || self.rows_per_frame == 0 || self.feature_dim == 0 {
            return Err(LatkdError::InvalidConfig(
                "n_frames, rows_per_frame and feature_dim must be positive".into(),
            ));
        }
        if !(self.fraud_rate > 0.0 && self.fraud_rate < 0.5) {
            return Err(LatkdError::InvalidConfig(format!(
                "fraud_rate must be in (0, 0.5), got {}",
                self.fraud_rate
            )));
        }
        let mut ids = BTreeSet::new();
        for c in self.normal_components.iter().chain(&self.fraud_components) {
            self.check_cluster(c)?;
            if !ids.insert(c.id.clone()) {
                return Err(LatkdError::InvalidConfig(format!("duplicate cluster id `{}`", c.id)));
            }
        }
        for e in &self.drift_events {
            if e.frame_index >= self.n_frames {
                return Err(LatkdError::InvalidConfig(format!(
                    "drift event at frame {} but only {} frames",
                    e.frame_index, self.n_frames
                )));
            }
        }
        if let Some(r) = &self.recurrence {
            if r.frame_index >= self.n_frames {
                return Err(LatkdError::InvalidConfig(format!(
                    "recurrence at frame {} but only {} frames",
                    r.frame_index, self.n_frames
                )));
            }
        }
        for f in 0..self.n_frames {
            self.state_at(f)?;
        }
        Ok(())
    }

    fn state_at(&self, frame: usize) -> Result<Vec<Cluster>> {
        let mut clusters: Vec<Cluster> = self
            .normal_components
            .iter()
            .map(|s| (ClassLabel::Normal, s))
            .chain(self.fraud_components.iter().map(|s| (ClassLabel::Fraud, s)))
            .map(|(class, spec)| Cluster {
                class,
                spec: spec.clone(),
                active: true,
            })
            .collect();
        let mut events: Vec<&DriftEvent> = self.drift_events.iter().filter(|e| e.frame_index <= frame).collect();
        events.sort_by_key(|e| e.frame_index);
        let find = |clusters: &mut Vec<Cluster>, id: &str, at: usize| -> Result<usize> {
            clusters
                .iter()
                .position(|c| c.spec.id == id)
                .ok_or_else(|| LatkdError::InvalidConfig(format!("frame {at}: unknown cluster `{id}`")))
        };
        let mut applied_recurrence = false;
        for e in events {
            if let Some(r) = &self.recurrence {
                if !applied_recurrence && r.frame_index < e.frame_index {
                    reactivate(&mut clusters, r)?;
                    applied_recurrence = true;
                }
            }
            match &e.action {
                DriftAction::ShiftCluster { cluster, delta } => {
                    let i = find(&mut clusters, cluster, e.frame_index)?;
                    if delta.len() != self.feature_dim {
                        return Err(LatkdError::InvalidConfig(format!(
                            "shift of `{cluster}` has dimension {}",
                            delta.len()
                        )));
                    }
                    for (m, d) in clusters[i].spec.mean.iter_mut().zip(delta) {
                        *m += d;
                    }
                }
                DriftAction::AddCluster { class, spec } => {
                    self.check_cluster(spec)?;
                    if clusters.iter().any(|c| c.spec.id == spec.id) {
                        return Err(LatkdError::InvalidConfig(format!("duplicate cluster id `{}`", spec.id)));
                    }
                    clusters.push(Cluster {
                        class: *class,
                        spec: spec.clone(),
                        active: true,
                    });
                }
                DriftAction::RetireCluster { cluster } => {
                    let i = find(&mut clusters, cluster, e.frame_index)?;
                    if !clusters[i].active {
                        return Err(LatkdError::InvalidConfig(format!(
                            "frame {}: cluster `{cluster}` is already retired",
                            e.frame_index
                        )));
                    }
                    clusters[i].active = false;
                }
            }
        }
        if let Some(r) = &self.recurrence {
            if !applied_recurrence && r.frame_index <= frame {
                reactivate(&mut clusters, r)?;
            }
        }
        Ok(clusters)
    }

    /// Ids of the clusters active at `frame`, per class.
    pub fn active_clusters(&self, frame: usize) -> Result<(Vec<String>, Vec<String>)> {
        let state = self.state_at(frame)?;
        let pick = |class| {
            state
                .iter()
                .filter(|c| c.active && c.class == class)
                .map(|c| c.spec.id.clone())
                .collect()
        };
        Ok((pick(ClassLabel::Normal), pick(ClassLabel::Fraud)))
    }

    /// Exact number of fraud rows in a frame of `n` rows.
    pub fn fraud_count(&self, n: usize) -> usize {
        ((n as f64) * self.fraud_rate).round() as usize
    }

    /// Draws `n_rows` rows from frame `frame`'s mixture. `salt` 0 is used by
    /// [`generate`]; other salts give independent samples such as test sets.
    pub fn sample_frame(&self, frame: usize, n_rows: usize, salt: u64) -> Result<(DesignMatrix, Vec<String>)> {
        let state = self.state_at(frame)?;
        let normals: Vec<&Cluster> = state.iter().filter(|c| c.active && c.class == ClassLabel::Normal).collect();
        let frauds: Vec<&Cluster> = state.iter().filter(|c| c.active && c.class == ClassLabel::Fraud).collect();
        if frauds.is_empty() {
            return Err(LatkdError::InfeasibleScenario(format!(
                "frame {frame} has no active fraud cluster while fraud_rate is {}",
                self.fraud_rate
            )));
        }
        if normals.is_empty() {
            return Err(LatkdError::InfeasibleScenario(format!("frame {frame} has no active normal cluster")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(salt.wrapping_mul(SALT_MULTIPLIER)));
        rng.set_stream(frame as u64);

        let n_fraud = self.fraud_count(n_rows);
        let mut labels: Vec<u8> = (0..n_rows).map(|i| u8::from(i < n_fraud)).collect();
        labels.shuffle(&mut rng);

        let start = add_months(dataset_epoch(), frame as u32);
        let end = add_months(dataset_epoch(), frame as u32 + 1);
        let t0 = (start - dataset_epoch()).num_seconds() as f64;
        let span = (end - start).num_seconds() as f64;
        let mut times: Vec<f64> = (0..n_rows).map(|_| (t0 + rng.gen::<f64>() * span).floor()).collect();
        times.sort_by(f64::total_cmp);

        let d = self.feature_dim;
        let mut x = Array2::zeros((n_rows, d));
        let mut assignment = Vec::with_capacity(n_rows);
        for (r, &label) in labels.iter().enumerate() {
            let pool = if label == 1 { &frauds } else { &normals };
            let c = pool[rng.gen_range(0..pool.len())];
            for j in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                x[[r, j]] = c.spec.mean[j] + z * c.spec.variance[j].sqrt();
            }
            assignment.push(c.spec.id.clone());
        }
        let schema = FeatureSchema::identity(&feature_names(d))?;
        let m = DesignMatrix::new(x, labels.into_iter().map(Some).collect(), times, schema.fingerprint)?;
        Ok((m, assignment))
    }
}

fn reactivate(clusters: &mut [Cluster], r: &Recurrence) -> Result<()> {
    let c = clusters
        .iter_mut()
        .find(|c| c.spec.id == r.cluster)
        .ok_or_else(|| LatkdError::InvalidConfig(format!("recurrence names unknown cluster `{}`", r.cluster)))?;
    if c.active {
        return Err(LatkdError::InvalidConfig(format!(
            "recurrence at frame {}: cluster `{}` was never retired",
            r.frame_index, r.cluster
        )));
    }
    c.active = true;
    Ok(())
}

pub fn feature_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("f{j}")).collect()
}

/// All frames of the scenario plus the row-to-cluster log.
pub fn generate(scenario: &DriftScenario) -> Result<GeneratedStream> {
    scenario.validate()?;
    let mut frames = Vec::with_capacity(scenario.n_frames);
    let mut log = Vec::with_capacity(scenario.n_frames);
    for f in 0..scenario.n_frames {
        let (m, a) = scenario.sample_frame(f, scenario.rows_per_frame, 0)?;
        frames.push(m);
        log.push(a);
    }
    Ok(GeneratedStream {
        frames,
        log: AssignmentLog { frames: log },
    })
}

pub const CSV_TIME_COLUMN: &str = "TransactionDT";
pub const CSV_LABEL_COLUMN: &str = "isFraud";

/// Writes frames as one CSV with an id, timestamp, label and `f0..` feature columns.
pub fn write_csv(frames: &[DesignMatrix], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = frames.first().map_or(0, DesignMatrix::n_cols);
    let mut header = vec!["TransactionID".to_string(), CSV_TIME_COLUMN.into(), CSV_LABEL_COLUMN.into()];
    header.extend(feature_names(d));
    w.write_record(&header)?;
    let mut id = 0usize;
    for f in frames {
        if f.n_cols() != d {
            return Err(LatkdError::DimensionMismatch {
                expected: d,
                actual: f.n_cols(),
            });
        }
        for r in 0..f.n_rows() {
            let mut rec = vec![
                id.to_string(),
                f.event_time[r].to_string(),
                f.labels[r].map_or(String::new(), |l| l.to_string()),
            ];
            rec.extend(f.features.row(r).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
            id += 1;
        }
    }
    w.flush().map_err(|e| LatkdError::io("<csv output>", e))?;
    Ok(())
}
