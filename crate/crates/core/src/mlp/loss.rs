//! Cross-entropy plus teacher KL terms, on two-class probability rows.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{LatkdError, Result};

pub const PROB_FLOOR: f64 = 1e-7;
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Soft targets from earlier models plus how hard to pull toward them.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeLossSpec {
    /// One `rows x 2` probability matrix per teacher.
    pub teacher_outputs: Vec<Array2<f64>>,
    pub kl_weight: f64,
    pub temperature: f64,
}

impl Default for CompositeLossSpec {
    fn default() -> Self {
        Self::hard_labels_only()
    }
}

impl CompositeLossSpec {
    pub fn hard_labels_only() -> Self {
        Self {
            teacher_outputs: Vec::new(),
            kl_weight: 1.0,
            temperature: 1.0,
        }
    }

    pub fn with_teachers(teacher_outputs: Vec<Array2<f64>>, kl_weight: f64, temperature: f64) -> Self {
        Self {
            teacher_outputs,
            kl_weight,
            temperature,
        }
    }

    pub fn n_teachers(&self) -> usize {
        self.teacher_outputs.len()
    }

    /// True when the KL terms contribute nothing, so training is plain cross-entropy.
    pub fn is_inert(&self) -> bool {
        self.teacher_outputs.is_empty() || self.kl_weight == 0.0
    }

    pub fn validate(&self, n_rows: usize) -> Result<()> {
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(LatkdError::InvalidConfig(format!(
                "kl_weight must be finite and >= 0, got {}",
                self.kl_weight
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(LatkdError::InvalidConfig(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        for t in &self.teacher_outputs {
            if t.nrows() != n_rows {
                return Err(LatkdError::RowMismatch {
                    expected: n_rows,
                    actual: t.nrows(),
                });
            }
            validate_distributions(t.view())?;
        }
        Ok(())
    }

    /// The same spec restricted to `rows` of every teacher.
    pub fn select_rows(&self, rows: &[usize]) -> CompositeLossSpec {
        CompositeLossSpec {
            teacher_outputs: self
                .teacher_outputs
                .iter()
                .map(|t| t.select(Axis(0), rows))
                .collect(),
            kl_weight: self.kl_weight,
            temperature: self.temperature,
        }
    }
}

pub fn validate_distributions(probs: ArrayView2<f64>) -> Result<()> {
    if probs.ncols() != 2 {
        return Err(LatkdError::DimensionMismatch {
            expected: 2,
            actual: probs.ncols(),
        });
    }
    for (row, r) in probs.rows().into_iter().enumerate() {
        let sum: f64 = r.sum();
        if r.iter().any(|&v| !(0.0..=1.0).contains(&v)) || (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(LatkdError::InvalidDistribution {
                row,
                detail: format!("[{}, {}] sums to {sum}", r[0], r[1]),
            });
        }
    }
    Ok(())
}

/// Sharpens or softens a distribution: `q_k^(1/T) / sum_j q_j^(1/T)`.
/// Applied to a softmax output this equals the softmax of logits divided by `T`.
pub fn temper(row: [f64; 2], temperature: f64) -> [f64; 2] {
    if temperature == 1.0 {
        return row;
    }
    let inv = 1.0 / temperature;
    // Work in log space relative to the larger entry to avoid underflow.
    let l0 = if row[0] > 0.0 { row[0].ln() * inv } else { f64::NEG_INFINITY };
    let l1 = if row[1] > 0.0 { row[1].ln() * inv } else { f64::NEG_INFINITY };
    let m = l0.max(l1);
    let e0 = (l0 - m).exp();
    let e1 = (l1 - m).exp();
    [e0 / (e0 + e1), e1 / (e0 + e1)]
}

/// `-ln p[label]` with clamping.
pub fn cross_entropy(pred: [f64; 2], label: u8) -> f64 {
    -clamp_prob(pred[label as usize]).ln()
}

/// `KL(target || pred)`; `0 ln 0` is taken as 0 and `pred` is clamped.
pub fn kl_divergence(target: [f64; 2], pred: [f64; 2]) -> f64 {
    target
        .iter()
        .zip(pred.iter())
        .filter(|(&q, _)| q > 0.0)
        .map(|(&q, &p)| q * (q.ln() - clamp_prob(p).ln()))
        .sum()
}

fn row2(a: ArrayView2<f64>, r: usize) -> [f64; 2] {
    [a[[r, 0]], a[[r, 1]]]
}

/// Per-row summed KL over teachers, each at the configured temperature and scaled by `T^2`.
pub fn summed_kl_per_row(predictions: ArrayView2<f64>, spec: &CompositeLossSpec) -> Vec<f64> {
    let t = spec.temperature;
    (0..predictions.nrows())
        .map(|r| {
            let p = temper(row2(predictions, r), t);
            spec.teacher_outputs
                .iter()
                .map(|q| kl_divergence(temper(row2(q.view(), r), t), p))
                .sum::<f64>()
                * t
                * t
        })
        .collect()
}

/// Mean over rows of `CE(label, p) + kl_weight * sum_i T^2 KL(q_i || p)`.
pub fn composite_loss(
    predictions: ArrayView2<f64>,
    hard_labels: &[u8],
    spec: &CompositeLossSpec,
) -> Result<f64> {
    let n = predictions.nrows();
    if hard_labels.len() != n {
        return Err(LatkdError::RowMismatch {
            expected: n,
            actual: hard_labels.len(),
        });
    }
    validate_distributions(predictions)?;
    spec.validate(n)?;
    if n == 0 {
        return Ok(0.0);
    }
    Ok(composite_loss_unchecked(predictions, hard_labels, spec))
}

pub(crate) fn composite_loss_unchecked(
    predictions: ArrayView2<f64>,
    hard_labels: &[u8],
    spec: &CompositeLossSpec,
) -> f64 {
    let n = predictions.nrows();
    let ce: f64 = (0..n)
        .map(|r| cross_entropy(row2(predictions, r), hard_labels[r]))
        .sum();
    if spec.teacher_outputs.is_empty() {
        return ce / n as f64;
    }
    let kl: f64 = summed_kl_per_row(predictions, spec).iter().sum();
    (ce + spec.kl_weight * kl) / n as f64
}

/// Gradient of the mean composite loss with respect to the output logits:
/// `(p - y)/n + kl_weight * sum_i T (p_T - q_i,T)/n`.
pub(crate) fn logit_gradient(
    probs: ArrayView2<f64>,
    hard_labels: &[u8],
    spec: &CompositeLossSpec,
) -> Array2<f64> {
    let n = probs.nrows();
    let scale = 1.0 / n as f64;
    let t = spec.temperature;
    let mut grad = Array2::zeros((n, 2));
    for r in 0..n {
        let p = row2(probs, r);
        let y = hard_labels[r] as usize;
        for k in 0..2 {
            grad[[r, k]] = p[k] - if k == y { 1.0 } else { 0.0 };
        }
        if spec.kl_weight != 0.0 && !spec.teacher_outputs.is_empty() {
            let pt = temper(p, t);
            for q in &spec.teacher_outputs {
                let qt = temper(row2(q.view(), r), t);
                for k in 0..2 {
                    grad[[r, k]] += spec.kl_weight * t * (pt[k] - qt[k]);
                }
            }
        }
        for k in 0..2 {
            grad[[r, k]] *= scale;
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn perfect_prediction_matching_teacher_is_zero() {
        let p = array![[1.0, 0.0], [0.0, 1.0]];
        let spec = CompositeLossSpec::with_teachers(vec![p.clone()], 1.0, 1.0);
        let loss = composite_loss(p.view(), &[0, 1], &spec).unwrap();
        assert_abs_diff_eq!(loss, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn uniform_prediction_costs_ln2() {
        let p = array![[0.5, 0.5]];
        let loss = composite_loss(p.view(), &[1], &CompositeLossSpec::hard_labels_only()).unwrap();
        assert_abs_diff_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(loss, 0.6931, epsilon = 1e-4);
    }

    #[test]
    fn matching_teacher_adds_nothing() {
        let p = array![[0.9, 0.1]];
        let spec = CompositeLossSpec::with_teachers(vec![p.clone()], 1.0, 1.0);
        let loss = composite_loss(p.view(), &[0], &spec).unwrap();
        assert_abs_diff_eq!(loss, -(0.9f64.ln()), epsilon = 1e-12);
        assert_abs_diff_eq!(loss, 0.1054, epsilon = 1e-4);
    }

    #[test]
    fn zero_teachers_is_mean_cross_entropy() {
        let p = array![[0.3, 0.7], [0.8, 0.2], [0.5, 0.5]];
        let labels = [1, 1, 0];
        let expected = (-(0.7f64.ln()) - 0.2f64.ln() - 0.5f64.ln()) / 3.0;
        let loss = composite_loss(p.view(), &labels, &CompositeLossSpec::hard_labels_only()).unwrap();
        assert!((loss - expected).abs() <= 1e-12);
    }

    #[test]
    fn rejects_invalid_teacher_rows() {
        let p = array![[0.5, 0.5]];
        let spec = CompositeLossSpec::with_teachers(vec![array![[0.7, 0.7]]], 1.0, 1.0);
        assert!(matches!(
            composite_loss(p.view(), &[0], &spec),
            Err(LatkdError::InvalidDistribution { row: 0, .. })
        ));
        let spec = CompositeLossSpec::with_teachers(vec![array![[0.5, 0.5], [0.5, 0.5]]], 1.0, 1.0);
        assert!(matches!(
            composite_loss(p.view(), &[0], &spec),
            Err(LatkdError::RowMismatch { .. })
        ));
    }

    #[test]
    fn exact_zero_prediction_is_clamped() {
        let p = array![[1.0, 0.0]];
        let loss = composite_loss(p.view(), &[1], &CompositeLossSpec::hard_labels_only()).unwrap();
        assert_abs_diff_eq!(loss, -(PROB_FLOOR.ln()), epsilon = 1e-9);
    }

    #[test]
    fn temper_matches_scaled_softmax() {
        let z = [0.3f64, -1.2];
        let softmax = |a: f64, b: f64| {
            let m = a.max(b);
            let (ea, eb) = ((a - m).exp(), (b - m).exp());
            [ea / (ea + eb), eb / (ea + eb)]
        };
        let t = 2.5;
        let direct = softmax(z[0] / t, z[1] / t);
        let via = temper(softmax(z[0], z[1]), t);
        assert_abs_diff_eq!(direct[0], via[0], epsilon = 1e-14);
    }

    fn arb_dist() -> impl Strategy<Value = [f64; 2]> {
        (0.0f64..=1.0).prop_map(|a| [1.0 - a, a])
    }

    proptest! {
        #[test]
        fn kl_nonnegative_and_zero_on_equality(q in arb_dist(), p in arb_dist()) {
            prop_assert!(kl_divergence(q, p) >= -1e-15);
            let pc = [clamp_prob(q[0]), clamp_prob(q[1])];
            // Equality holds up to the clamping floor.
            prop_assert!(kl_divergence(q, pc).abs() < 1e-6);
        }

        #[test]
        fn loss_affine_in_kl_weight(
            rows in prop::collection::vec((arb_dist(), arb_dist(), arb_dist(), 0u8..2), 1..20),
            w in 0.0f64..5.0,
        ) {
            let n = rows.len();
            let p = Array2::from_shape_fn((n, 2), |(r, k)| rows[r].0[k]);
            let q1 = Array2::from_shape_fn((n, 2), |(r, k)| rows[r].1[k]);
            let q2 = Array2::from_shape_fn((n, 2), |(r, k)| rows[r].2[k]);
            let labels: Vec<u8> = rows.iter().map(|r| r.3).collect();
            let at = |w: f64| {
                let spec = CompositeLossSpec::with_teachers(vec![q1.clone(), q2.clone()], w, 1.0);
                composite_loss(p.view(), &labels, &spec).unwrap()
            };
            let spec = CompositeLossSpec::with_teachers(vec![q1.clone(), q2.clone()], 1.0, 1.0);
            let slope = summed_kl_per_row(p.view(), &spec).iter().sum::<f64>() / n as f64;
            prop_assert!((at(w) - (at(0.0) + w * slope)).abs() < 1e-9 * (1.0 + at(w).abs()));
            prop_assert!(slope >= 0.0);
        }
    }
}
