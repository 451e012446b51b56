//! Precision-recall curves, AUPRC and multi-run aggregation.
//!
//! AUPRC is the step-wise average precision `Σ (R_k - R_{k-1}) P_k` over
//! thresholds at every distinct score. There is no interpolation between
//! points: linear interpolation in PR space overstates the area.

use serde::{Deserialize, Serialize};

use crate::error::{LatkdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    /// Rows scoring at or above this value are flagged.
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per distinct score, thresholds descending.
    pub points: Vec<PrPoint>,
    pub positive_count: usize,
    pub negative_count: usize,
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(LatkdError::RowMismatch {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(LatkdError::Malformed(format!("score at row {i} is not finite")));
    }
    Ok(())
}

/// Sweeps a threshold over every distinct score, highest first; tied scores
/// enter the flagged set together.
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<PrCurve> {
    check_inputs(scores, labels)?;
    let positive_count = labels.iter().filter(|&&l| l == 1).count();
    if positive_count == 0 {
        return Err(LatkdError::NoPositives);
    }
    let negative_count = labels.len() - positive_count;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold,
            recall: tp as f64 / positive_count as f64,
            precision: tp as f64 / (tp + fp) as f64,
        });
    }
    Ok(PrCurve {
        points,
        positive_count,
        negative_count,
    })
}

/// Step-wise area: `Σ (R_k - R_{k-1}) P_k`, starting from recall 0.
pub fn auprc(curve: &PrCurve) -> f64 {
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for p in &curve.points {
        area += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    area
}

pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    Ok(auprc(&pr_curve(scores, labels)?))
}

/// Area under the ROC curve (ties count half). Supplementary only.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 {
        return Err(LatkdError::NoPositives);
    }
    if neg == 0 {
        return Err(LatkdError::SingleClass {
            positives: pos,
            negatives: 0,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Mann-Whitney U with mid-ranks.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let mid_rank = (i + j + 1) as f64 / 2.0;
        rank_sum += order[i..j].iter().filter(|&&r| labels[r] == 1).count() as f64 * mid_rank;
        i = j;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

/// Fraction of the selected positive rows whose score is at least `threshold`.
pub fn recall_at(scores: &[f64], selected: &[usize], threshold: f64) -> Option<f64> {
    if selected.is_empty() {
        return None;
    }
    let hits = selected.iter().filter(|&&r| scores[r] >= threshold).count();
    Some(hits as f64 / selected.len() as f64)
}

/// Score of the k-th highest row: flagging everything at or above it alerts on
/// (at least) `k` rows.
pub fn top_k_threshold(scores: &[f64], k: usize) -> Option<f64> {
    if k == 0 || k > scores.len() {
        return None;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Some(sorted[k - 1])
}

pub fn pr_points_csv(curve: &PrCurve) -> String {
    let mut out = String::from("threshold,recall,precision\n");
    for p in &curve.points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.recall, p.precision));
    }
    out
}

/// Per-run AUPRC values for one method on one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single run.
    pub std_dev: f64,
    pub wall_clock_seconds: Vec<f64>,
}

impl RunReport {
    pub fn new(values: Vec<f64>, wall_clock_seconds: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(LatkdError::InvalidConfig("run report needs at least one run".into()));
        }
        let (mean, std_dev) = mean_std(&values);
        Ok(Self {
            values,
            mean,
            std_dev,
            wall_clock_seconds,
        })
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// `100 (mean_c - mean_b) / mean_b`.
pub fn relative_diff(candidate: &RunReport, baseline: &RunReport) -> Result<f64> {
    if candidate.values.is_empty() || baseline.values.is_empty() {
        return Err(LatkdError::InvalidConfig("empty run report".into()));
    }
    if baseline.mean == 0.0 {
        return Err(LatkdError::ZeroBaseline);
    }
    Ok(100.0 * (candidate.mean - baseline.mean) / baseline.mean)
}
