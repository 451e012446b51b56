//! Central finite differences against backprop for the composite loss.

use ndarray::ArrayView2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{composite_loss_unchecked, logit_gradient, CompositeLossSpec};
use super::network::{MlpModel, Pass};
use crate::error::{LatkdError, Result};

pub const FD_STEP: f64 = 1e-4;
pub const MAX_CHECK_ROWS: usize = 32;
/// Denominator floor for the relative error, so parameters whose true
/// gradient is ~0 are judged on absolute error instead.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheckReport {
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub checked: usize,
    /// Samples discarded because the perturbation flipped a ReLU.
    pub skipped_kinks: usize,
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Analytic parameter gradients, in parameter order.
pub fn analytic_gradients(
    model: &MlpModel,
    batch: ArrayView2<f64>,
    labels: &[u8],
    spec: &CompositeLossSpec,
) -> Vec<Vec<f64>> {
    let cache = model.forward_cached(batch, Pass::infer());
    let dlogits = logit_gradient(cache.probs.view(), labels, spec);
    model.backward(&cache, &dlogits, false)
}

/// Samples at least `samples` parameters round-robin over every tensor and
/// compares backprop gradients with `(L(θ+h) - L(θ-h)) / 2h`.
/// Dropout is off and batch norm uses its running statistics.
pub fn gradient_check(
    model: &MlpModel,
    batch: ArrayView2<f64>,
    labels: &[u8],
    spec: &CompositeLossSpec,
    samples: usize,
    seed: u64,
) -> Result<GradientCheckReport> {
    if batch.nrows() == 0 || batch.nrows() > MAX_CHECK_ROWS {
        return Err(LatkdError::InvalidConfig(format!(
            "gradient check takes 1..={MAX_CHECK_ROWS} rows, got {}",
            batch.nrows()
        )));
    }
    if batch.ncols() != model.input_dim() {
        return Err(LatkdError::DimensionMismatch {
            expected: model.input_dim(),
            actual: batch.ncols(),
        });
    }
    if labels.len() != batch.nrows() {
        return Err(LatkdError::RowMismatch {
            expected: batch.nrows(),
            actual: labels.len(),
        });
    }
    spec.validate(batch.nrows())?;

    let analytic = analytic_gradients(model, batch, labels, spec);
    let base_pattern = model.forward_cached(batch, Pass::infer()).relu_pattern();
    let n_tensors = analytic.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut report = GradientCheckReport {
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    let max_attempts = samples * 20;
    let mut attempt = 0;
    while report.checked < samples && attempt < max_attempts {
        let tensor = attempt % n_tensors;
        attempt += 1;
        let index = rng.gen_range(0..analytic[tensor].len());
        let original = probe.param_slices()[tensor][index];

        let eval_at = |value: f64, probe: &mut MlpModel| {
            probe.param_slices_mut()[tensor][index] = value;
            let cache = probe.forward_cached(batch, Pass::infer());
            let loss = composite_loss_unchecked(cache.probs.view(), labels, spec);
            (loss, cache.relu_pattern())
        };
        let (plus, pattern_plus) = eval_at(original + FD_STEP, &mut probe);
        let (minus, pattern_minus) = eval_at(original - FD_STEP, &mut probe);
        probe.param_slices_mut()[tensor][index] = original;

        if pattern_plus != base_pattern || pattern_minus != base_pattern {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let a = analytic[tensor][index];
        report.max_relative_error = report.max_relative_error.max(relative_error(a, numeric));
        report.max_absolute_error = report.max_absolute_error.max((a - numeric).abs());
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::network::MlpArchitecture;
    use crate::mlp::train::stream;
    use ndarray::Array2;

    fn random_model(seed: u64, hidden: Vec<usize>) -> MlpModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = MlpModel::init(MlpArchitecture::fraud_default(5).with_hidden(hidden), &mut rng).unwrap();
        for l in &mut m.layers {
            l.bias.mapv_inplace(|_| rng.gen_range(-0.1..0.1));
        }
        if let Some(bn) = &mut m.batch_norm {
            bn.gamma.mapv_inplace(|_| rng.gen_range(0.5..1.5));
            bn.beta.mapv_inplace(|_| rng.gen_range(-0.2..0.2));
            bn.running_mean.mapv_inplace(|_| rng.gen_range(0.0..0.5));
            bn.running_var.mapv_inplace(|_| rng.gen_range(0.5..2.0));
        }
        m
    }

    fn random_teacher(rows: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let mut t = Array2::zeros((rows, 2));
        for r in 0..rows {
            let p: f64 = rng.gen_range(0.01..0.99);
            t[[r, 0]] = 1.0 - p;
            t[[r, 1]] = p;
        }
        t
    }

    fn batch(seed: u64) -> (Array2<f64>, Vec<u8>) {
        let mut rng = stream(seed, 9);
        let x = Array2::from_shape_simple_fn((16, 5), || rng.gen_range(-1.0..1.0));
        let y = (0..16).map(|i| (i % 3 == 0) as u8).collect();
        (x, y)
    }

    #[test]
    fn matches_finite_differences_without_teachers() {
        let m = random_model(1, vec![24, 12]);
        let (x, y) = batch(1);
        let r = gradient_check(&m, x.view(), &y, &CompositeLossSpec::hard_labels_only(), 120, 0).unwrap();
        assert!(r.checked >= 100);
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }

    #[test]
    fn matches_finite_differences_with_tempered_teachers() {
        let m = random_model(2, vec![24, 12]);
        let (x, y) = batch(2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = CompositeLossSpec::with_teachers(
            vec![random_teacher(16, &mut rng), random_teacher(16, &mut rng)],
            0.7,
            2.0,
        );
        let r = gradient_check(&m, x.view(), &y, &spec, 120, 1).unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }

    #[test]
    fn batch_statistics_backward_matches_finite_differences() {
        // The training path differentiates through batch mean/variance.
        let m = random_model(3, vec![10, 6]);
        let (x, y) = batch(3);
        let spec = CompositeLossSpec::hard_labels_only();
        let pass = || Pass { batch_stats: true, dropout: None };
        let cache = m.forward_cached(x.view(), pass());
        let dlogits = logit_gradient(cache.probs.view(), &y, &spec);
        let analytic = m.backward(&cache, &dlogits, true);
        let mut probe = m.clone();
        let mut worst: f64 = 0.0;
        for tensor in 0..analytic.len() {
            for index in 0..analytic[tensor].len().min(12) {
                let orig = probe.param_slices()[tensor][index];
                let mut at = |v: f64| {
                    probe.param_slices_mut()[tensor][index] = v;
                    let c = probe.forward_cached(x.view(), pass());
                    (composite_loss_unchecked(c.probs.view(), &y, &spec), c.relu_pattern())
                };
                let (lp, pp) = at(orig + FD_STEP);
                let (lm, pm) = at(orig - FD_STEP);
                probe.param_slices_mut()[tensor][index] = orig;
                if pp != cache.relu_pattern() || pm != cache.relu_pattern() {
                    continue;
                }
                worst = worst.max(relative_error(analytic[tensor][index], (lp - lm) / (2.0 * FD_STEP)));
            }
        }
        assert!(worst < 1e-4, "worst {worst}");
    }

    #[test]
    fn zero_kl_weight_equals_no_teachers() {
        let m = random_model(5, vec![8]);
        let (x, y) = batch(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let with = CompositeLossSpec::with_teachers(vec![random_teacher(16, &mut rng)], 0.0, 1.0);
        let a = analytic_gradients(&m, x.view(), &y, &with);
        let b = analytic_gradients(&m, x.view(), &y, &CompositeLossSpec::hard_labels_only());
        assert_eq!(a, b);
    }

    #[test]
    fn oversized_batch_rejected() {
        let m = random_model(1, vec![4]);
        let x = Array2::zeros((33, 5));
        let y = vec![0; 33];
        assert!(gradient_check(&m, x.view(), &y, &CompositeLossSpec::hard_labels_only(), 10, 0).is_err());
    }
}
