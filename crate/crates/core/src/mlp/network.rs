//! Dense ReLU stack with batch norm after the first hidden layer, inverted
//! dropout after every hidden layer, and a two-way softmax head.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LatkdError, Result};

pub const MLP_FORMAT_VERSION: u32 = 1;
pub const N_CLASSES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub batch_norm_after_first: bool,
    pub dropout_keep_prob: f64,
}

impl MlpArchitecture {
    /// Dense 400 / BN / dropout 0.5 / Dense 400 / dropout 0.5 / Dense 2 softmax.
    pub fn fraud_default(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![400, 400],
            batch_norm_after_first: true,
            dropout_keep_prob: 0.5,
        }
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(LatkdError::InvalidConfig(
                "mlp needs a nonzero input width and at least one nonzero hidden layer".into(),
            ));
        }
        if !(self.dropout_keep_prob > 0.0 && self.dropout_keep_prob <= 1.0) {
            return Err(LatkdError::InvalidConfig(format!(
                "dropout_keep_prob must be in (0, 1], got {}",
                self.dropout_keep_prob
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `in x out`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            momentum: 0.99,
            eps: 1e-5,
        }
    }

    /// Folds one batch's statistics into the running averages.
    pub(crate) fn update_running(&mut self, mean: &Array1<f64>, var: &Array1<f64>) {
        let m = self.momentum;
        self.running_mean = &self.running_mean * m + mean * (1.0 - m);
        self.running_var = &self.running_var * m + var * (1.0 - m);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Batch statistics and dropout.
    Train,
    /// Running statistics, no dropout; deterministic.
    Infer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub format_version: u32,
    pub architecture: MlpArchitecture,
    /// Hidden layers followed by the output layer.
    pub layers: Vec<Dense>,
    pub batch_norm: Option<BatchNorm>,
    /// Hash of the training configuration that produced these weights.
    #[serde(default)]
    pub training_config_hash: Option<String>,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, limit: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-limit..limit))
}

impl MlpModel {
    /// He-uniform hidden layers, Glorot-uniform head, zero biases, identity batch norm.
    pub fn init(architecture: MlpArchitecture, rng: &mut ChaCha8Rng) -> Result<Self> {
        architecture.validate()?;
        let mut layers = Vec::with_capacity(architecture.hidden.len() + 1);
        let mut fan_in = architecture.input_dim;
        for &width in &architecture.hidden {
            let limit = (6.0 / fan_in as f64).sqrt();
            layers.push(Dense {
                weights: uniform(rng, fan_in, width, limit),
                bias: Array1::zeros(width),
            });
            fan_in = width;
        }
        let limit = (6.0 / (fan_in + N_CLASSES) as f64).sqrt();
        layers.push(Dense {
            weights: uniform(rng, fan_in, N_CLASSES, limit),
            bias: Array1::zeros(N_CLASSES),
        });
        let batch_norm = architecture
            .batch_norm_after_first
            .then(|| BatchNorm::new(architecture.hidden[0]));
        Ok(Self {
            format_version: MLP_FORMAT_VERSION,
            architecture,
            layers,
            batch_norm,
            training_config_hash: None,
        })
    }

    /// All-zero parameters; every output row is `[0.5, 0.5]`.
    pub fn zeros(architecture: MlpArchitecture) -> Result<Self> {
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut m = Self::init(architecture, &mut rng)?;
        for l in &mut m.layers {
            l.weights.fill(0.0);
        }
        Ok(m)
    }

    pub fn input_dim(&self) -> usize {
        self.architecture.input_dim
    }

    pub fn n_parameters(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Trainable tensors in a fixed order: (W, b) per layer, then (gamma, beta).
    pub(crate) fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.push(l.weights.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        if let Some(bn) = &self.batch_norm {
            out.push(bn.gamma.as_slice().expect("standard layout"));
            out.push(bn.beta.as_slice().expect("standard layout"));
        }
        out
    }

    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.weights.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        if let Some(bn) = &mut self.batch_norm {
            out.push(bn.gamma.as_slice_mut().expect("standard layout"));
            out.push(bn.beta.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub(crate) fn zero_like_params(&self) -> Vec<Vec<f64>> {
        self.param_slices().iter().map(|s| vec![0.0; s.len()]).collect()
    }

    fn check_width(&self, batch: ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(LatkdError::DimensionMismatch {
                expected: self.input_dim(),
                actual: batch.ncols(),
            });
        }
        Ok(())
    }

    /// Class probabilities, one `[p0, p1]` row per input row.
    ///
    /// `Train` mode needs at least two rows and a dropout RNG; `Infer` ignores `rng`.
    pub fn forward(
        &self,
        batch: ArrayView2<f64>,
        mode: Mode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Array2<f64>> {
        self.check_width(batch)?;
        let pass = match mode {
            Mode::Infer => Pass::infer(),
            Mode::Train => {
                if batch.nrows() < 2 {
                    return Err(LatkdError::InvalidConfig(
                        "train-mode forward needs at least 2 rows for batch statistics".into(),
                    ));
                }
                Pass {
                    batch_stats: true,
                    dropout: rng,
                }
            }
        };
        Ok(self.forward_cached(batch, pass).probs)
    }

    /// Inference-mode probabilities.
    pub fn predict_proba(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.forward(batch, Mode::Infer, None)
    }

    pub(crate) fn forward_cached(&self, batch: ArrayView2<f64>, mut pass: Pass<'_>) -> ForwardCache {
        let keep = self.architecture.dropout_keep_prob;
        let n_hidden = self.architecture.hidden.len();
        let mut hidden = Vec::with_capacity(n_hidden);
        let mut input = batch.to_owned();
        for (li, layer) in self.layers[..n_hidden].iter().enumerate() {
            let pre = input.dot(&layer.weights) + &layer.bias;
            let mut act = pre.mapv(|v| v.max(0.0));
            let bn = match (&self.batch_norm, li) {
                (Some(bn), 0) => {
                    let (mean, var) = if pass.batch_stats {
                        let mean = act.mean_axis(Axis(0)).expect("non-empty batch");
                        let var = act.var_axis(Axis(0), 0.0);
                        (mean, var)
                    } else {
                        (bn.running_mean.clone(), bn.running_var.clone())
                    };
                    let inv_std = var.mapv(|v| 1.0 / (v + bn.eps).sqrt());
                    let xhat = (&act - &mean) * &inv_std;
                    act = &xhat * &bn.gamma + &bn.beta;
                    Some(BnCache {
                        xhat,
                        inv_std,
                        batch_mean: mean,
                        batch_var: var,
                    })
                }
                _ => None,
            };
            let mask = match pass.dropout.as_deref_mut() {
                Some(rng) if keep < 1.0 => {
                    let scale = 1.0 / keep;
                    let mask = Array2::from_shape_simple_fn(act.raw_dim(), || {
                        if rng.gen::<f64>() < keep {
                            scale
                        } else {
                            0.0
                        }
                    });
                    act = &act * &mask;
                    Some(mask)
                }
                _ => None,
            };
            hidden.push(HiddenCache {
                input,
                pre,
                bn,
                mask,
            });
            input = act;
        }
        let head = &self.layers[n_hidden];
        let logits = input.dot(&head.weights) + &head.bias;
        let probs = softmax_rows(&logits);
        ForwardCache {
            hidden,
            head_input: input,
            probs,
        }
    }

    /// Parameter gradients for a given gradient at the logits, in `param_slices` order.
    pub(crate) fn backward(&self, cache: &ForwardCache, dlogits: &Array2<f64>, batch_stats: bool) -> Vec<Vec<f64>> {
        let n_hidden = self.architecture.hidden.len();
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(2 * self.layers.len() + 2);
        let head = &self.layers[n_hidden];
        let mut layer_grads: Vec<(Array2<f64>, Array1<f64>)> = vec![(Array2::zeros((0, 0)), Array1::zeros(0)); self.layers.len()];
        layer_grads[n_hidden] = (cache.head_input.t().dot(dlogits), dlogits.sum_axis(Axis(0)));
        let mut d_out = dlogits.dot(&head.weights.t());
        let mut bn_grads = None;
        for li in (0..n_hidden).rev() {
            let hc = &cache.hidden[li];
            if let Some(mask) = &hc.mask {
                d_out = d_out * mask;
            }
            if let (Some(bn), Some(bc)) = (&self.batch_norm, &hc.bn) {
                let dgamma = (&d_out * &bc.xhat).sum_axis(Axis(0));
                let dbeta = d_out.sum_axis(Axis(0));
                let dxhat = &d_out * &bn.gamma;
                d_out = if batch_stats {
                    let n = d_out.nrows() as f64;
                    let sum_dxhat = dxhat.sum_axis(Axis(0));
                    let sum_dxhat_xhat = (&dxhat * &bc.xhat).sum_axis(Axis(0));
                    ((&dxhat * n) - &sum_dxhat - &bc.xhat * &sum_dxhat_xhat) * &bc.inv_std / n
                } else {
                    dxhat * &bc.inv_std
                };
                bn_grads = Some((dgamma, dbeta));
            }
            let relu_grad = hc.pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            let dpre = &d_out * &relu_grad;
            layer_grads[li] = (hc.input.t().dot(&dpre), dpre.sum_axis(Axis(0)));
            if li > 0 {
                d_out = dpre.dot(&self.layers[li].weights.t());
            }
        }
        for (dw, db) in layer_grads {
            grads.push(dw.as_standard_layout().iter().copied().collect());
            grads.push(db.to_vec());
        }
        if let Some((dg, db)) = bn_grads {
            grads.push(dg.to_vec());
            grads.push(db.to_vec());
        }
        grads
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: MlpModel = serde_json::from_str(s)?;
        if m.format_version != MLP_FORMAT_VERSION {
            return Err(LatkdError::FormatVersion {
                found: m.format_version,
                expected: MLP_FORMAT_VERSION,
            });
        }
        m.architecture.validate()?;
        Ok(m)
    }
}

pub(crate) struct Pass<'r> {
    pub batch_stats: bool,
    pub dropout: Option<&'r mut ChaCha8Rng>,
}

impl Pass<'_> {
    pub fn infer() -> Self {
        Pass {
            batch_stats: false,
            dropout: None,
        }
    }
}

pub(crate) struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    pub batch_mean: Array1<f64>,
    pub batch_var: Array1<f64>,
}

pub(crate) struct HiddenCache {
    input: Array2<f64>,
    pub pre: Array2<f64>,
    pub bn: Option<BnCache>,
    mask: Option<Array2<f64>>,
}

pub(crate) struct ForwardCache {
    pub hidden: Vec<HiddenCache>,
    head_input: Array2<f64>,
    pub probs: Array2<f64>,
}

impl ForwardCache {
    /// Which ReLUs are active, layer by layer.
    pub fn relu_pattern(&self) -> Vec<Vec<bool>> {
        self.hidden
            .iter()
            .map(|h| h.pre.iter().map(|&v| v > 0.0).collect())
            .collect()
    }
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}
