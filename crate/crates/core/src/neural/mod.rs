//! Small feed-forward classifier: ReLU hidden layers with inverted dropout,
//! optionally mean-field Gaussian (variational) hidden layers, softmax output.

mod checkpoint;
mod train;

pub use checkpoint::{
    check_params, load_models, save_models, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use train::{
    grad_check, kl_gaussian, loss_and_grad, train_deterministic, train_ensemble, train_variational,
    GradCheckOptions, LossOptions, TrainConfig, TrainHistory, TrainedModel,
};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Deterministic,
    Variational,
}

/// Layer sizes `input_dim → hidden… → num_classes`. Hidden layers use
/// `hidden_kind`; the output layer is always deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    pub dropout: f64,
    pub hidden_kind: LayerKind,
}

impl Architecture {
    /// `d → 64 → 32 → K` with dropout 0.5 after each hidden layer.
    pub fn dropout_mlp(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![64, 32],
            num_classes,
            dropout: 0.5,
            hidden_kind: LayerKind::Deterministic,
        }
    }

    /// Same shape with both hidden layers variational and no dropout.
    pub fn variational_mlp(input_dim: usize, num_classes: usize) -> Self {
        Self {
            dropout: 0.0,
            hidden_kind: LayerKind::Variational,
            ..Self::dropout_mlp(input_dim, num_classes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(format!(
                "layer sizes must be positive: {self:?}"
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    pub(crate) fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(self.num_classes))
            .collect()
    }

    pub fn is_variational(&self) -> bool {
        self.hidden_kind == LayerKind::Variational && !self.hidden.is_empty()
    }
}

/// One dense layer. Weights are row-major `out_dim × in_dim`. For
/// variational layers `weight`/`bias` hold the posterior means and the `rho`
/// vectors parameterize `σ = softplus(ρ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_rho: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_rho: Option<Vec<f64>>,
}

/// Trained (or initialized) network parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Architecture,
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Deterministic,
    DropoutSampled(u64),
    VariationalSampled(u64),
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Per-layer standard-normal draws used to realize variational weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightNoise {
    pub layers: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl WeightNoise {
    pub fn sample(params: &ModelParams, seed: u64) -> Self {
        let mut rng = rng::stream(seed);
        let layers = params
            .layers
            .iter()
            .map(|l| {
                (l.kind == LayerKind::Variational).then(|| {
                    let w = (0..l.weight.len())
                        .map(|_| StandardNormal.sample(&mut rng))
                        .collect();
                    let b = (0..l.bias.len())
                        .map(|_| StandardNormal.sample(&mut rng))
                        .collect();
                    (w, b)
                })
            })
            .collect();
        Self { layers }
    }
}

/// Concrete dense weights for one forward pass.
#[derive(Debug, Clone)]
pub struct Realized {
    pub(crate) layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl ModelParams {
    /// He-normal weights, zero biases; variational `ρ` set to `init_rho`.
    pub fn init(arch: &Architecture, seed: u64, init_rho: f64) -> Result<Self> {
        arch.validate()?;
        let sizes = arch.sizes();
        let n_layers = sizes.len() - 1;
        let mut rng = rng::stream(rng::derive_index(seed, "init", 0));
        let layers = (0..n_layers)
            .map(|i| {
                let (in_dim, out_dim) = (sizes[i], sizes[i + 1]);
                let kind = if i + 1 < n_layers {
                    arch.hidden_kind
                } else {
                    LayerKind::Deterministic
                };
                let std = (2.0 / in_dim as f64).sqrt();
                let weight = (0..in_dim * out_dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        std * z
                    })
                    .collect();
                let variational = kind == LayerKind::Variational;
                Layer {
                    kind,
                    in_dim,
                    out_dim,
                    weight,
                    bias: vec![0.0; out_dim],
                    weight_rho: variational.then(|| vec![init_rho; in_dim * out_dim]),
                    bias_rho: variational.then(|| vec![init_rho; out_dim]),
                }
            })
            .collect();
        Ok(Self {
            arch: arch.clone(),
            layers,
        })
    }

    /// Parameter buffers in a fixed order: per layer `weight, bias[, weight_rho, bias_rho]`.
    pub fn buffers(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
            if let (Some(wr), Some(br)) = (&l.weight_rho, &l.bias_rho) {
                out.push(wr.as_slice());
                out.push(br.as_slice());
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
            if let (Some(wr), Some(br)) = (&mut l.weight_rho, &mut l.bias_rho) {
                out.push(wr);
                out.push(br);
            }
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.buffers().iter().map(|b| b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.buffers()
            .iter()
            .all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Weights at the posterior means (or the plain weights).
    pub fn realize_mean(&self) -> Realized {
        Realized {
            layers: self
                .layers
                .iter()
                .map(|l| (l.weight.clone(), l.bias.clone()))
                .collect(),
        }
    }

    /// `w = μ + softplus(ρ)·ε` for variational layers.
    pub fn realize(&self, noise: &WeightNoise) -> Realized {
        let layers = self
            .layers
            .iter()
            .zip(&noise.layers)
            .map(|(l, n)| match (n, &l.weight_rho, &l.bias_rho) {
                (Some((ew, eb)), Some(wr), Some(br)) => {
                    let w = l
                        .weight
                        .iter()
                        .zip(wr)
                        .zip(ew)
                        .map(|((m, r), e)| m + softplus(*r) * e)
                        .collect();
                    let b = l
                        .bias
                        .iter()
                        .zip(br)
                        .zip(eb)
                        .map(|((m, r), e)| m + softplus(*r) * e)
                        .collect();
                    (w, b)
                }
                _ => (l.weight.clone(), l.bias.clone()),
            })
            .collect();
        Realized { layers }
    }

    pub fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Logits for one input.
    pub fn forward(&self, x: &[f64], mode: ForwardMode) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(match mode {
            ForwardMode::Deterministic => forward_realized(&self.realize_mean(), x, None),
            ForwardMode::DropoutSampled(seed) => {
                let masks = dropout_masks(&self.arch, seed);
                forward_realized(&self.realize_mean(), x, masks.as_deref())
            }
            ForwardMode::VariationalSampled(seed) => {
                let noise = WeightNoise::sample(self, seed);
                forward_realized(&self.realize(&noise), x, None)
            }
        })
    }

    /// Logits for a batch with a fixed set of realized weights.
    pub fn forward_with(&self, realized: &Realized, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(forward_realized(realized, x, None))
    }

    pub fn same_architecture(&self, other: &ModelParams) -> bool {
        self.arch == other.arch
    }
}

/// Inverted-dropout masks for each hidden layer (`None` when `p == 0`).
/// Kept units are scaled by `1/(1-p)`.
pub fn dropout_masks(arch: &Architecture, seed: u64) -> Option<Vec<Vec<f64>>> {
    if arch.dropout == 0.0 {
        return None;
    }
    let p = arch.dropout;
    let keep = 1.0 / (1.0 - p);
    let mut rng = rng::stream(seed);
    Some(
        arch.hidden
            .iter()
            .map(|&h| {
                (0..h)
                    .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                    .collect()
            })
            .collect(),
    )
}

pub(crate) fn forward_realized(net: &Realized, x: &[f64], masks: Option<&[Vec<f64>]>) -> Vec<f64> {
    let n = net.layers.len();
    let mut a = x.to_vec();
    for (i, (w, b)) in net.layers.iter().enumerate() {
        let in_dim = a.len();
        let mut z: Vec<f64> = b
            .iter()
            .enumerate()
            .map(|(o, bias)| bias + dot(&w[o * in_dim..(o + 1) * in_dim], &a))
            .collect();
        if i + 1 < n {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
            if let Some(m) = masks {
                z.iter_mut().zip(&m[i]).for_each(|(v, k)| *v *= k);
            }
        }
        a = z;
    }
    a
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
