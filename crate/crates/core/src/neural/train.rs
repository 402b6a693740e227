use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{
    dot, dropout_masks, sigmoid, softmax, softplus, softplus_inv, Architecture, LayerKind,
    ModelParams, WeightNoise,
};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// L2 penalty on deterministic weights (not biases).
    pub weight_decay: f64,
    /// Std of the zero-mean Gaussian prior over variational parameters.
    pub prior_sigma: f64,
    /// Fraction of epochs over which the KL weight ramps from 0 to 1.
    pub kl_anneal_fraction: f64,
    /// Initial posterior std of variational parameters.
    pub init_sigma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            weight_decay: 1e-4,
            prior_sigma: 1.0,
            kl_anneal_fraction: 0.25,
            init_sigma: 5e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam decay rates must be in [0, 1)".into()));
        }
        if !(self.prior_sigma > 0.0 && self.init_sigma > 0.0) {
            return Err(Error::Config(
                "prior_sigma and init_sigma must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.kl_anneal_fraction) {
            return Err(Error::Config("kl_anneal_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Number of epochs before the KL weight reaches 1.
    fn anneal_epochs(&self) -> usize {
        (self.kl_anneal_fraction * self.epochs as f64).ceil() as usize
    }

    fn kl_weight(&self, epoch: usize) -> f64 {
        let ramp = self.anneal_epochs();
        if ramp == 0 {
            1.0
        } else {
            (epoch as f64 / ramp as f64).min(1.0)
        }
    }
}

/// Loss curves. Index 0 of `train_loss`/`val_loss` is before the first update;
/// index `e` is after epoch `e`. Both are mean cross-entropy at the mean weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Mean minibatch objective per epoch (includes penalty/KL terms).
    pub objective: Vec<f64>,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub history: TrainHistory,
}

/// What enters the objective besides the data term.
#[derive(Debug, Clone, Copy)]
pub struct LossOptions<'a> {
    /// Frozen reparameterization noise; `None` evaluates variational layers at their means.
    pub noise: Option<&'a WeightNoise>,
    /// Seed for per-sample dropout masks; `None` disables dropout.
    pub dropout_seed: Option<u64>,
    pub kl_weight: f64,
    pub n_train: usize,
    pub prior_sigma: f64,
    pub weight_decay: f64,
}

impl Default for LossOptions<'_> {
    fn default() -> Self {
        Self {
            noise: None,
            dropout_seed: None,
            kl_weight: 0.0,
            n_train: 1,
            prior_sigma: 1.0,
            weight_decay: 0.0,
        }
    }
}

/// `KL(N(μ, σ²) ‖ N(0, σ_p²))` for a single weight.
pub fn kl_gaussian(mu: f64, sigma: f64, prior_sigma: f64) -> f64 {
    (prior_sigma / sigma).ln() + (sigma * sigma + mu * mu) / (2.0 * prior_sigma * prior_sigma) - 0.5
}

fn kl_grads(mu: f64, rho: f64, prior_sigma: f64) -> (f64, f64) {
    let sigma = softplus(rho);
    let p2 = prior_sigma * prior_sigma;
    (mu / p2, (-1.0 / sigma + sigma / p2) * sigmoid(rho))
}

fn log_softmax_at(logits: &[f64], y: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits[y] - lse
}

/// Objective and its gradient, aligned with [`ModelParams::buffers`].
///
/// objective = mean cross-entropy
///           + (weight_decay/2)·Σ w² over deterministic weights
///           + kl_weight·KL(q‖p)/n_train over variational parameters.
pub fn loss_and_grad(
    params: &ModelParams,
    xs: &[&[f64]],
    ys: &[usize],
    opts: &LossOptions<'_>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::Invalid(format!(
            "batch of {} inputs and {} labels",
            xs.len(),
            ys.len()
        )));
    }
    let net = match opts.noise {
        Some(n) => params.realize(n),
        None => params.realize_mean(),
    };
    let n_layers = net.layers.len();
    let mut gw: Vec<Vec<f64>> = net.layers.iter().map(|(w, _)| vec![0.0; w.len()]).collect();
    let mut gb: Vec<Vec<f64>> = net.layers.iter().map(|(_, b)| vec![0.0; b.len()]).collect();
    let inv_b = 1.0 / xs.len() as f64;
    let mut data_loss = 0.0;

    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    for (s, (x, &y)) in xs.iter().zip(ys).enumerate() {
        if x.len() != params.arch.input_dim {
            return Err(Error::DimensionMismatch {
                expected: params.arch.input_dim,
                actual: x.len(),
            });
        }
        if y >= params.arch.num_classes {
            return Err(Error::Invalid(format!("label {y} out of range")));
        }
        let masks = opts.dropout_seed.and_then(|seed| {
            dropout_masks(&params.arch, rng::derive_index(seed, "mask", s as u64))
        });

        acts.clear();
        pre.clear();
        acts.push(x.to_vec());
        for (i, (w, b)) in net.layers.iter().enumerate() {
            let a = &acts[i];
            let in_dim = a.len();
            let z: Vec<f64> = b
                .iter()
                .enumerate()
                .map(|(o, bias)| bias + dot(&w[o * in_dim..(o + 1) * in_dim], a))
                .collect();
            let mut next: Vec<f64> = if i + 1 < n_layers {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            if let (Some(m), true) = (&masks, i + 1 < n_layers) {
                next.iter_mut().zip(&m[i]).for_each(|(v, k)| *v *= k);
            }
            pre.push(z);
            acts.push(next);
        }
        let logits = &acts[n_layers];
        data_loss -= log_softmax_at(logits, y);

        let mut delta = softmax(logits);
        delta[y] -= 1.0;
        delta.iter_mut().for_each(|d| *d *= inv_b);
        for i in (0..n_layers).rev() {
            let a = &acts[i];
            let in_dim = a.len();
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                gb[i][o] += d;
                gw[i][o * in_dim..(o + 1) * in_dim]
                    .iter_mut()
                    .zip(a)
                    .for_each(|(g, av)| *g += d * av);
            }
            if i == 0 {
                break;
            }
            let w = &net.layers[i].0;
            let mut back = vec![0.0; in_dim];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                back.iter_mut()
                    .zip(&w[o * in_dim..(o + 1) * in_dim])
                    .for_each(|(bk, wv)| *bk += d * wv);
            }
            let z = &pre[i - 1];
            for (j, bk) in back.iter_mut().enumerate() {
                let mut g = if z[j] > 0.0 { *bk } else { 0.0 };
                if let Some(m) = &masks {
                    g *= m[i - 1][j];
                }
                *bk = g;
            }
            delta = back;
        }
    }

    let mut loss = data_loss * inv_b;
    let klc = opts.kl_weight / opts.n_train.max(1) as f64;
    let mut grads = Vec::with_capacity(params.layers.len() * 4);
    for (i, layer) in params.layers.iter().enumerate() {
        let (gwi, gbi) = (std::mem::take(&mut gw[i]), std::mem::take(&mut gb[i]));
        match (layer.kind, &layer.weight_rho, &layer.bias_rho) {
            (LayerKind::Variational, Some(wr), Some(br)) => {
                let eps = opts.noise.and_then(|n| n.layers[i].as_ref());
                let mut out = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
                for (slot, (mu, rho, g, e)) in [
                    (&layer.weight, wr, &gwi, eps.map(|e| &e.0)),
                    (&layer.bias, br, &gbi, eps.map(|e| &e.1)),
                ]
                .into_iter()
                .enumerate()
                {
                    let mut g_mu = Vec::with_capacity(mu.len());
                    let mut g_rho = Vec::with_capacity(mu.len());
                    for j in 0..mu.len() {
                        let sigma = softplus(rho[j]);
                        let (km, kr) = kl_grads(mu[j], rho[j], opts.prior_sigma);
                        loss += klc * kl_gaussian(mu[j], sigma, opts.prior_sigma);
                        let e = e.map_or(0.0, |e| e[j]);
                        g_mu.push(g[j] + klc * km);
                        g_rho.push(g[j] * e * sigmoid(rho[j]) + klc * kr);
                    }
                    out[slot] = g_mu;
                    out[slot + 2] = g_rho;
                }
                let [gm_w, gm_b, gr_w, gr_b] = out;
                grads.extend([gm_w, gm_b, gr_w, gr_b]);
            }
            _ => {
                let mut gw_total = gwi;
                if opts.weight_decay > 0.0 {
                    for (g, w) in gw_total.iter_mut().zip(&layer.weight) {
                        *g += opts.weight_decay * w;
                        loss += 0.5 * opts.weight_decay * w * w;
                    }
                }
                grads.push(gw_total);
                grads.push(gbi);
            }
        }
    }
    Ok((loss, grads))
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .buffers()
            .iter()
            .map(|b| vec![0.0; b.len()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &[Vec<f64>], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .buffers_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for j in 0..p.len() {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                p[j] -= cfg.learning_rate * (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.epsilon);
            }
        }
    }
}

fn mean_ce(params: &ModelParams, data: &FeatureMatrix) -> f64 {
    let net = params.realize_mean();
    data.rows
        .iter()
        .zip(&data.labels)
        .map(|(x, &y)| -log_softmax_at(&super::forward_realized(&net, x, None), y))
        .sum::<f64>()
        / data.len() as f64
}

fn check_data(name: &str, d: &FeatureMatrix, arch: &Architecture) -> Result<()> {
    if d.is_empty() {
        return Err(Error::Invalid(format!("{name} split is empty")));
    }
    if d.dim != arch.input_dim {
        return Err(Error::DimensionMismatch {
            expected: arch.input_dim,
            actual: d.dim,
        });
    }
    if let Some(y) = d.labels.iter().find(|&&y| y >= arch.num_classes) {
        return Err(Error::Invalid(format!(
            "{name} label {y} >= {} classes",
            arch.num_classes
        )));
    }
    Ok(())
}

fn train_impl(
    train: &FeatureMatrix,
    val: &FeatureMatrix,
    arch: &Architecture,
    cfg: &TrainConfig,
    variational: bool,
) -> Result<TrainedModel> {
    cfg.validate()?;
    arch.validate()?;
    check_data("train", train, arch)?;
    check_data("validation", val, arch)?;
    if variational != arch.is_variational() {
        return Err(Error::Config(if variational {
            "variational training needs variational hidden layers".into()
        } else {
            "deterministic training got a variational architecture".into()
        }));
    }

    let mut params = ModelParams::init(arch, cfg.seed, softplus_inv(cfg.init_sigma))?;
    let mut adam = Adam::new(&params);
    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = TrainHistory {
        train_loss: vec![mean_ce(&params, train)],
        val_loss: vec![mean_ce(&params, val)],
        objective: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
    };
    // Variational models are only eligible once the KL term is fully on.
    let first_eligible = if variational {
        cfg.anneal_epochs().max(1)
    } else {
        1
    };
    let mut best: Option<(f64, ModelParams)> = None;
    let mut step: u64 = 0;

    for epoch in 1..=cfg.epochs {
        let mut rng = rng::stream(rng::derive_index(cfg.seed, "shuffle", epoch as u64));
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let kl_weight = if variational {
            cfg.kl_weight(epoch - 1)
        } else {
            0.0
        };
        let mut objective = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| train.rows[i].as_slice()).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let noise = variational.then(|| {
                WeightNoise::sample(&params, rng::derive_index(cfg.seed, "vi-noise", step))
            });
            let opts = LossOptions {
                noise: noise.as_ref(),
                dropout_seed: (arch.dropout > 0.0)
                    .then(|| rng::derive_index(cfg.seed, "dropout", step)),
                kl_weight,
                n_train: n,
                prior_sigma: cfg.prior_sigma,
                weight_decay: if variational { 0.0 } else { cfg.weight_decay },
            };
            let (loss, grads) = loss_and_grad(&params, &xs, &ys, &opts)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            objective += loss * batch.len() as f64 / n as f64;
            adam.step(&mut params, &grads, cfg);
            step += 1;
        }
        if !params.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: f64::NAN,
            });
        }
        let train_loss = mean_ce(&params, train);
        let val_loss = mean_ce(&params, val);
        if !(train_loss.is_finite() && val_loss.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                loss: train_loss,
            });
        }
        history.objective.push(objective);
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);
        if epoch >= first_eligible && best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, params.clone()));
            history.best_epoch = epoch;
        }
    }
    let params = best.map(|(_, p)| p).unwrap_or(params);
    Ok(TrainedModel { params, history })
}

/// Minibatch Adam on mean cross-entropy with dropout active; returns the
/// parameters of the epoch with the lowest validation loss.
pub fn train_deterministic(
    train: &FeatureMatrix,
    val: &FeatureMatrix,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    train_impl(train, val, arch, cfg, false)
}

/// Bayes-by-backprop: one reparameterized weight sample per minibatch,
/// objective `NLL + kl_weight·KL/N` with the KL weight annealed from 0 to 1.
pub fn train_variational(
    train: &FeatureMatrix,
    val: &FeatureMatrix,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    train_impl(train, val, arch, cfg, true)
}

/// `members` independent deterministic runs; member `m` uses seed
/// `derive_index(cfg.seed, "member", m)`.
pub fn train_ensemble(
    train: &FeatureMatrix,
    val: &FeatureMatrix,
    arch: &Architecture,
    cfg: &TrainConfig,
    members: usize,
) -> Result<Vec<TrainedModel>> {
    if members < 1 {
        return Err(Error::Config("ensemble needs at least one member".into()));
    }
    crate::par::try_map_range(members, |m| {
        let member_cfg = TrainConfig {
            seed: member_seed(cfg.seed, m),
            ..cfg.clone()
        };
        train_deterministic(train, val, arch, &member_cfg).map_err(|e| Error::Member {
            index: m,
            source: Box::new(e),
        })
    })
}

pub fn member_seed(seed: u64, member: usize) -> u64 {
    rng::derive_index(seed, "member", member as u64)
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    pub probes: usize,
    pub seed: u64,
    pub noise: Option<WeightNoise>,
    pub kl_weight: f64,
    pub n_train: usize,
    pub prior_sigma: f64,
    pub weight_decay: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            probes: 100,
            seed: 0,
            noise: None,
            kl_weight: 0.0,
            n_train: 1,
            prior_sigma: 1.0,
            weight_decay: 0.0,
        }
    }
}

/// Max relative error between analytic gradients and central differences
/// over randomly chosen parameters.
///
/// Relative error is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check(
    params: &ModelParams,
    xs: &[&[f64]],
    ys: &[usize],
    opts: &GradCheckOptions,
) -> Result<f64> {
    let loss_opts = LossOptions {
        noise: opts.noise.as_ref(),
        dropout_seed: None,
        kl_weight: opts.kl_weight,
        n_train: opts.n_train,
        prior_sigma: opts.prior_sigma,
        weight_decay: opts.weight_decay,
    };
    let (_, grads) = loss_and_grad(params, xs, ys, &loss_opts)?;
    let index: Vec<(usize, usize)> = grads
        .iter()
        .enumerate()
        .flat_map(|(b, g)| (0..g.len()).map(move |j| (b, j)))
        .collect();
    let mut rng = rng::stream(rng::derive_index(opts.seed, "gradcheck", 0));
    let picks: Vec<(usize, usize)> = if index.len() <= opts.probes {
        index
    } else {
        (0..opts.probes)
            .map(|_| index[rng.random_range(0..index.len())])
            .collect()
    };

    let mut worst: f64 = 0.0;
    for (b, j) in picks {
        let eval = |delta: f64| -> Result<f64> {
            let mut p = params.clone();
            p.buffers_mut()[b][j] += delta;
            Ok(loss_and_grad(&p, xs, ys, &loss_opts)?.0)
        };
        let numeric = (eval(opts.step)? - eval(-opts.step)?) / (2.0 * opts.step);
        let analytic = grads[b][j];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
