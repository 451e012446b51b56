//! Logistic objective with teacher KL terms, in logit space.

use crate::error::{LatkdError, Result};
use crate::mlp::{cross_entropy, kl_divergence};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Per-row gradient and hessian of `CE + kl_weight Σ_i KL(q_i || p)` with
/// respect to the raw score:
/// `g = (p - y) + w Σ_i (p - q_i)`, `h = (1 + w T) p (1 - p)`.
pub fn grad_hess(
    predictions: &[f64],
    hard_labels: &[u8],
    teachers: &[&[f64]],
    kl_weight: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = predictions.len();
    if hard_labels.len() != n {
        return Err(LatkdError::RowMismatch {
            expected: n,
            actual: hard_labels.len(),
        });
    }
    for t in teachers {
        if t.len() != n {
            return Err(LatkdError::RowMismatch {
                expected: n,
                actual: t.len(),
            });
        }
        if let Some(row) = t.iter().position(|q| !(0.0..=1.0).contains(q)) {
            return Err(LatkdError::InvalidDistribution {
                row,
                detail: format!("teacher probability {} outside [0, 1]", t[row]),
            });
        }
    }
    if !(kl_weight >= 0.0 && kl_weight.is_finite()) {
        return Err(LatkdError::InvalidConfig(format!("kl_weight must be >= 0, got {kl_weight}")));
    }
    let active = kl_weight != 0.0 && !teachers.is_empty();
    let hess_scale = if active {
        1.0 + kl_weight * teachers.len() as f64
    } else {
        1.0
    };
    let mut grad = Vec::with_capacity(n);
    let mut hess = Vec::with_capacity(n);
    for r in 0..n {
        let p = predictions[r];
        let mut g = p - f64::from(hard_labels[r]);
        if active {
            g += kl_weight * teachers.iter().map(|t| p - t[r]).sum::<f64>();
        }
        grad.push(g);
        hess.push(hess_scale * p * (1.0 - p));
    }
    Ok((grad, hess))
}

/// Mean composite loss for positive-class probabilities.
pub fn binary_composite_loss(predictions: &[f64], hard_labels: &[u8], teachers: &[&[f64]], kl_weight: f64) -> f64 {
    let n = predictions.len();
    if n == 0 {
        return 0.0;
    }
    let total: f64 = (0..n)
        .map(|r| {
            let p = [1.0 - predictions[r], predictions[r]];
            let kl: f64 = teachers
                .iter()
                .map(|t| kl_divergence([1.0 - t[r], t[r]], p))
                .sum();
            cross_entropy(p, hard_labels[r]) + kl_weight * kl
        })
        .sum();
    total / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_fit_has_zero_gradient() {
        let (g, _) = grad_hess(&[1.0, 0.0], &[1, 0], &[], 1.0).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn hand_example_with_one_teacher() {
        let t = [0.5];
        let (g, h) = grad_hess(&[0.5], &[1], &[&t], 1.0).unwrap();
        assert_eq!(g, vec![-0.5]);
        assert_eq!(h, vec![0.5]);
    }

    #[test]
    fn zero_weight_ignores_teachers() {
        let p = [0.2, 0.7, 0.9];
        let y = [0, 1, 0];
        let t = [0.9, 0.1, 0.3];
        assert_eq!(grad_hess(&p, &y, &[&t], 0.0).unwrap(), grad_hess(&p, &y, &[], 1.0).unwrap());
    }

    #[test]
    fn out_of_range_teacher_rejected() {
        let t = [1.5];
        assert!(matches!(
            grad_hess(&[0.5], &[1], &[&t], 1.0),
            Err(LatkdError::InvalidDistribution { row: 0, .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_difference_of_loss() {
        let y = [1u8];
        let t1 = [0.3];
        let t2 = [0.8];
        let teachers: [&[f64]; 2] = [&t1, &t2];
        let w = 0.6;
        let z = 0.4;
        let loss = |z: f64| binary_composite_loss(&[sigmoid(z)], &y, &teachers, w);
        let h = 1e-5;
        let numeric_g = (loss(z + h) - loss(z - h)) / (2.0 * h);
        let numeric_h = (loss(z + h) - 2.0 * loss(z) + loss(z - h)) / (h * h);
        let (g, hs) = grad_hess(&[sigmoid(z)], &y, &teachers, w).unwrap();
        assert!((g[0] - numeric_g).abs() < 1e-8);
        assert!((hs[0] - numeric_h).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn replicated_hard_label_teachers_scale_gradient(
            rows in prop::collection::vec((0.001f64..0.999, 0u8..2), 1..50),
            w in 0.0f64..4.0,
        ) {
            let p: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let y: Vec<u8> = rows.iter().map(|r| r.1).collect();
            let q: Vec<f64> = y.iter().map(|&l| f64::from(l)).collect();
            let (g0, _) = grad_hess(&p, &y, &[], 1.0).unwrap();
            let (g1, _) = grad_hess(&p, &y, &[&q], w).unwrap();
            for (a, b) in g0.iter().zip(&g1) {
                prop_assert!(((1.0 + w) * a - b).abs() <= 1e-12);
            }
        }
    }
}
