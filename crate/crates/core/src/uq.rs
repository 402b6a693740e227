//! The five uncertainty methods: vanilla softmax, temperature scaling,
//! MC dropout, variational Bayes and deep ensembles.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::neural::{dropout_masks, softmax, ForwardMode, ModelParams, WeightNoise};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Vanilla,
    Scaling,
    #[serde(rename = "mcdropout")]
    McDropout,
    Bayesian,
    Ensemble,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Vanilla,
        Method::Scaling,
        Method::McDropout,
        Method::Bayesian,
        Method::Ensemble,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::Scaling => "scaling",
            Method::McDropout => "mcdropout",
            Method::Bayesian => "bayesian",
            Method::Ensemble => "ensemble",
        }
    }

    pub fn is_sampled(self) -> bool {
        matches!(
            self,
            Method::McDropout | Method::Bayesian | Method::Ensemble
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Per-sample class probabilities, with the per-pass (or per-member) rows
/// they were averaged from when requested.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    pub probs: Vec<f64>,
    pub passes: Option<Vec<Vec<f64>>>,
}

impl PredictiveDistribution {
    pub fn single(probs: Vec<f64>) -> Self {
        Self {
            probs,
            passes: None,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    /// Nonnegative, sums to 1 within 1e-9, and matches the pass mean within 1e-12.
    pub fn validate(&self) -> Result<()> {
        if self.probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Invalid(format!(
                "invalid probabilities {:?}",
                self.probs
            )));
        }
        let s: f64 = self.probs.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("probabilities sum to {s}")));
        }
        if let Some(passes) = &self.passes {
            let m = passes.len() as f64;
            for k in 0..self.probs.len() {
                let mean = passes.iter().map(|row| row[k]).sum::<f64>() / m;
                if (mean - self.probs[k]).abs() > 1e-12 {
                    return Err(Error::Invalid(
                        "probabilities differ from the pass mean".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UQConfig {
    /// Stochastic passes (MC dropout, Bayesian) or ensemble members.
    pub samples: usize,
    /// Fixed temperature; `None` fits it on the validation split.
    pub temperature: Option<f64>,
    pub dropout: f64,
    /// Keep the per-pass matrices in the returned distributions.
    pub keep_passes: bool,
}

impl Default for UQConfig {
    fn default() -> Self {
        Self {
            samples: 10,
            temperature: None,
            dropout: 0.5,
            keep_passes: false,
        }
    }
}

impl UQConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 1 {
            return Err(Error::Config("samples (M) must be >= 1".into()));
        }
        if let Some(t) = self.temperature {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Config(format!(
                    "temperature must be positive, got {t}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

pub fn logits(theta: &ModelParams, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    crate::par::try_map(xs, |_, x| theta.forward(x, ForwardMode::Deterministic))
}

pub fn predict_vanilla(
    theta: &ModelParams,
    xs: &[Vec<f64>],
) -> Result<Vec<PredictiveDistribution>> {
    predict_scaled(theta, 1.0, xs)
}

/// `softmax(logits / T)`.
pub fn predict_scaled(
    theta: &ModelParams,
    temperature: f64,
    xs: &[Vec<f64>],
) -> Result<Vec<PredictiveDistribution>> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::Invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    crate::par::try_map(xs, |_, x| {
        let z = theta.forward(x, ForwardMode::Deterministic)?;
        Ok(PredictiveDistribution::single(scaled_softmax(
            &z,
            temperature,
        )))
    })
}

fn scaled_softmax(z: &[f64], temperature: f64) -> Vec<f64> {
    if temperature == 1.0 {
        softmax(z)
    } else {
        softmax(&z.iter().map(|v| v / temperature).collect::<Vec<_>>())
    }
}

/// Column means; identical rows return the row itself, so degenerate
/// samplers reproduce the deterministic prediction bit for bit.
fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    if rows.iter().all(|r| r == &rows[0]) {
        return rows[0].clone();
    }
    let k = rows[0].len();
    let m = rows.len() as f64;
    (0..k)
        .map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / m)
        .collect()
}

fn aggregate(rows: Vec<Vec<f64>>, keep: bool) -> PredictiveDistribution {
    PredictiveDistribution {
        probs: mean_rows(&rows),
        passes: keep.then_some(rows),
    }
}

/// `passes` forward passes per sample with fresh dropout masks; mask seeds
/// come from `(seed, sample index, pass)`.
pub fn predict_mcdropout(
    theta: &ModelParams,
    xs: &[Vec<f64>],
    passes: usize,
    seed: u64,
    keep_passes: bool,
) -> Result<Vec<PredictiveDistribution>> {
    if passes < 1 {
        return Err(Error::Config("MC dropout needs at least one pass".into()));
    }
    if theta.arch.dropout == 0.0 {
        log::warn!("MC dropout on a network with p = 0 reduces to the vanilla prediction");
    }
    let net = theta.realize_mean();
    crate::par::try_map(xs, |i, x| {
        let rows = (0..passes)
            .map(|m| {
                let s = rng::derive(
                    seed,
                    "mcdropout",
                    &[(i as u64).to_le_bytes(), (m as u64).to_le_bytes()].concat(),
                );
                let masks = dropout_masks(&theta.arch, s);
                theta.check_input(x)?;
                Ok(softmax(&crate::neural::forward_realized(
                    &net,
                    x,
                    masks.as_deref(),
                )))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(aggregate(rows, keep_passes))
    })
}

/// Monte-Carlo posterior predictive: pass `m` draws one weight sample
/// `θ_m ~ q` (seed `(seed, m)`) shared by every input.
pub fn predict_bayesian(
    theta: &ModelParams,
    xs: &[Vec<f64>],
    passes: usize,
    seed: u64,
    keep_passes: bool,
) -> Result<Vec<PredictiveDistribution>> {
    if passes < 1 {
        return Err(Error::Config(
            "Bayesian prediction needs at least one pass".into(),
        ));
    }
    if !theta.arch.is_variational() {
        return Err(Error::Config(
            "Bayesian prediction needs a variational model".into(),
        ));
    }
    let nets: Vec<_> = (0..passes)
        .map(|m| {
            theta.realize(&WeightNoise::sample(
                theta,
                rng::derive_index(seed, "bayesian", m as u64),
            ))
        })
        .collect();
    crate::par::try_map(xs, |_, x| {
        let rows = nets
            .iter()
            .map(|net| Ok(softmax(&theta.forward_with(net, x)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(aggregate(rows, keep_passes))
    })
}

/// Arithmetic mean of member softmax outputs.
///
/// Member rows are summed in a canonical (sorted) order so the result does
/// not depend on member order; `passes` keeps the given order.
pub fn predict_ensemble(
    members: &[ModelParams],
    xs: &[Vec<f64>],
    keep_passes: bool,
) -> Result<Vec<PredictiveDistribution>> {
    let first = members
        .first()
        .ok_or_else(|| Error::Config("ensemble has no members".into()))?;
    if members.iter().any(|m| !m.same_architecture(first)) {
        return Err(Error::Config(
            "ensemble members have different architectures".into(),
        ));
    }
    let nets: Vec<_> = members.iter().map(|m| m.realize_mean()).collect();
    crate::par::try_map(xs, |_, x| {
        let rows = members
            .iter()
            .zip(&nets)
            .map(|(m, net)| Ok(softmax(&m.forward_with(net, x)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut sorted = rows.clone();
        sorted.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        Ok(PredictiveDistribution {
            probs: mean_rows(&sorted),
            passes: keep_passes.then_some(rows),
        })
    })
}

/// Result of tuning the softmax temperature on validation data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: f64,
    pub nll_before: f64,
    pub nll_after: f64,
    /// Every `(T, NLL)` evaluated by the search, in order.
    pub trace: Vec<(f64, f64)>,
}

pub const TEMPERATURE_RANGE: (f64, f64) = (0.05, 20.0);
const TEMPERATURE_TOL: f64 = 1e-4;

/// Mean negative log-likelihood of `softmax(z / T)`.
pub fn nll_at_temperature(logits: &[Vec<f64>], labels: &[usize], temperature: f64) -> f64 {
    logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| {
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = z
                .iter()
                .map(|v| ((v - max) / temperature).exp())
                .sum::<f64>()
                .ln();
            lse - (z[y] - max) / temperature
        })
        .sum::<f64>()
        / logits.len() as f64
}

/// Golden-section search for the NLL-minimizing temperature on precomputed
/// logits. Falls back to `T = 1` unless the search strictly improves on it.
pub fn fit_temperature_logits(logits: &[Vec<f64>], labels: &[usize]) -> Result<TemperatureFit> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(Error::Invalid(
            "temperature fitting needs a nonempty validation set".into(),
        ));
    }
    let f = |t: f64| nll_at_temperature(logits, labels, t);
    let nll_before = f(1.0);
    let mut trace = vec![(1.0, nll_before)];

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = TEMPERATURE_RANGE;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    trace.push((c, fc));
    trace.push((d, fd));
    while b - a > TEMPERATURE_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
            trace.push((c, fc));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
            trace.push((d, fd));
        }
    }
    let t = 0.5 * (a + b);
    let nll_t = f(t);
    trace.push((t, nll_t));
    let (temperature, nll_after) = if nll_t < nll_before {
        (t, nll_t)
    } else {
        (1.0, nll_before)
    };
    Ok(TemperatureFit {
        temperature,
        nll_before,
        nll_after,
        trace,
    })
}

pub fn fit_temperature(theta: &ModelParams, val: &FeatureMatrix) -> Result<TemperatureFit> {
    if val.is_empty() {
        return Err(Error::Invalid(
            "temperature fitting needs a nonempty validation set".into(),
        ));
    }
    fit_temperature_logits(&logits(theta, &val.rows)?, &val.labels)
}

fn probs_line(out: &mut String, probs: &[f64]) {
    for p in probs {
        out.push(',');
        out.push_str(&p.to_string());
    }
    out.push('\n');
}

/// Writes `sample_id,true_label,p_0..p_{K-1}`, plus
/// `sample_id,pass,p_0..p_{K-1}` to `passes_path` when given and available.
pub fn write_predictions(
    path: impl AsRef<Path>,
    passes_path: Option<&Path>,
    ids: &[String],
    labels: &[usize],
    preds: &[PredictiveDistribution],
) -> Result<()> {
    let path = path.as_ref();
    let k = preds.first().map_or(0, |p| p.num_classes());
    let header: String = (0..k).map(|c| format!(",p_{c}")).collect();
    let mut out = format!("sample_id,true_label{header}\n");
    for ((id, y), p) in ids.iter().zip(labels).zip(preds) {
        out.push_str(&format!("{id},{y}"));
        probs_line(&mut out, &p.probs);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;

    if let Some(pp) = passes_path {
        let mut out = format!("sample_id,pass{header}\n");
        for (id, p) in ids.iter().zip(preds) {
            for (m, row) in p.passes.iter().flatten().enumerate() {
                out.push_str(&format!("{id},{m}"));
                probs_line(&mut out, row);
            }
        }
        fs::write(pp, out).map_err(|e| Error::io(pp, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Architecture, LayerKind};

    fn net(arch: &Architecture, seed: u64) -> ModelParams {
        ModelParams::init(arch, seed, -3.0).unwrap()
    }

    fn inputs(n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                (0..d)
                    .map(|j| (((i * 31 + j * 17) % 23) as f64) / 7.0 - 1.5)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn vanilla_on_zero_net_is_uniform() {
        let mut p = net(&Architecture::dropout_mlp(3, 4), 0);
        p.buffers_mut()
            .into_iter()
            .for_each(|b| b.iter_mut().for_each(|v| *v = 0.0));
        let out = predict_vanilla(&p, &inputs(2, 3)).unwrap();
        for d in out {
            assert!(d.probs.iter().all(|v| (v - 0.25).abs() < 1e-15));
            assert!(d.passes.is_none());
        }
    }

    #[test]
    fn scaled_examples() {
        let e = std::f64::consts::E;
        let p = scaled_softmax(&[2.0, 0.0], 2.0);
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
        let theta = net(&Architecture::dropout_mlp(3, 3), 1);
        let xs = inputs(5, 3);
        assert_eq!(
            predict_scaled(&theta, 1.0, &xs).unwrap(),
            predict_vanilla(&theta, &xs).unwrap()
        );
        for d in predict_scaled(&theta, 1e6, &xs).unwrap() {
            assert!(d.probs.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-5));
        }
        assert!(predict_scaled(&theta, 0.0, &xs).is_err());
    }

    #[test]
    fn mcdropout_properties() {
        let xs = inputs(4, 5);
        let p0 = net(
            &Architecture {
                dropout: 0.0,
                ..Architecture::dropout_mlp(5, 3)
            },
            2,
        );
        let mc = predict_mcdropout(&p0, &xs, 10, 3, true).unwrap();
        let van = predict_vanilla(&p0, &xs).unwrap();
        for (a, b) in mc.iter().zip(&van) {
            assert_eq!(a.probs, b.probs);
            assert!(a.passes.as_ref().unwrap().iter().all(|r| r == &b.probs));
        }
        let p = net(&Architecture::dropout_mlp(5, 3), 2);
        let one = predict_mcdropout(&p, &xs, 1, 3, true).unwrap();
        for d in &one {
            assert_eq!(d.probs, d.passes.as_ref().unwrap()[0]);
        }
        let a = predict_mcdropout(&p, &xs, 10, 3, true).unwrap();
        let b = predict_mcdropout(&p, &xs, 10, 3, true).unwrap();
        assert_eq!(a, b);
        for d in &a {
            d.validate().unwrap();
        }
    }

    #[test]
    fn bayesian_properties() {
        let xs = inputs(3, 5);
        let arch = Architecture::variational_mlp(5, 3);
        let collapsed = ModelParams::init(&arch, 4, -1000.0).unwrap();
        let det = predict_vanilla(&collapsed, &xs).unwrap();
        for (d, v) in predict_bayesian(&collapsed, &xs, 10, 1, true)
            .unwrap()
            .iter()
            .zip(&det)
        {
            assert!(d.passes.as_ref().unwrap().iter().all(|r| r == &v.probs));
        }
        let p = ModelParams::init(&arch, 4, 0.0).unwrap();
        let out = predict_bayesian(&p, &xs, 10, 1, true).unwrap();
        for d in &out {
            let passes = d.passes.as_ref().unwrap();
            assert_eq!((passes.len(), passes[0].len()), (10, 3));
            d.validate().unwrap();
        }
        let plain = net(&Architecture::dropout_mlp(5, 3), 0);
        assert!(predict_bayesian(&plain, &xs, 10, 1, false).is_err());
    }

    #[test]
    fn ensemble_properties() {
        let arch = Architecture::dropout_mlp(5, 3);
        let members: Vec<_> = (0..4).map(|s| net(&arch, s)).collect();
        let xs = inputs(6, 5);
        let out = predict_ensemble(&members, &xs, true).unwrap();
        let mut rev = members.clone();
        rev.reverse();
        let out_rev = predict_ensemble(&rev, &xs, false).unwrap();
        for (a, b) in out.iter().zip(&out_rev) {
            assert_eq!(a.probs, b.probs);
            a.validate().unwrap();
        }
        let single = predict_ensemble(&members[..1], &xs, false).unwrap();
        assert_eq!(single, predict_vanilla(&members[0], &xs).unwrap());
        let odd = net(
            &Architecture {
                hidden: vec![8],
                ..arch
            },
            9,
        );
        assert!(predict_ensemble(&[members[0].clone(), odd], &xs, false).is_err());
        assert!(predict_ensemble(&[], &xs, false).is_err());
    }

    #[test]
    fn ensemble_mean_of_rows() {
        let rows = vec![vec![0.2, 0.8], vec![0.4, 0.6]];
        let m = mean_rows(&rows);
        assert!((m[0] - 0.3).abs() < 1e-15 && (m[1] - 0.7).abs() < 1e-15);
    }

    /// Logit groups whose labels occur in exactly the softmax proportions, so
    /// NLL(T) is a cross-entropy minimized at the true temperature.
    fn calibrated_set(scale: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let groups: [[f64; 3]; 3] = [[0.5, 0.25, 0.25], [0.125, 0.75, 0.125], [0.25, 0.25, 0.5]];
        let mut logits = Vec::new();
        let mut labels = Vec::new();
        for g in groups {
            let z: Vec<f64> = g.iter().map(|p| scale * p.ln()).collect();
            for (k, p) in g.iter().enumerate() {
                for _ in 0..(p * 8.0) as usize {
                    logits.push(z.clone());
                    labels.push(k);
                }
            }
        }
        (logits, labels)
    }

    fn grid_argmin(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
        (50..=2000)
            .map(|i| i as f64 * 0.01)
            .min_by(|a, b| {
                nll_at_temperature(logits, labels, *a)
                    .total_cmp(&nll_at_temperature(logits, labels, *b))
            })
            .unwrap()
    }

    #[test]
    fn temperature_recovers_calibration() {
        let (z, y) = calibrated_set(1.0);
        assert!((grid_argmin(&z, &y) - 1.0).abs() < 1e-9);
        let fit = fit_temperature_logits(&z, &y).unwrap();
        assert!((fit.temperature - 1.0).abs() < 1e-4, "{}", fit.temperature);
        assert!(fit.nll_after <= fit.nll_before + 1e-12);

        let (z2, y2) = calibrated_set(2.0);
        assert!((grid_argmin(&z2, &y2) - 2.0).abs() < 1e-9);
        let fit = fit_temperature_logits(&z2, &y2).unwrap();
        assert!((fit.temperature - 2.0).abs() < 1e-4, "{}", fit.temperature);
        assert!(fit.nll_after < fit.nll_before);
    }

    #[test]
    fn fixed_temperatures_are_valid_configs() {
        for t in [1.5, 1.2, 1.15] {
            UQConfig {
                temperature: Some(t),
                ..Default::default()
            }
            .validate()
            .unwrap();
        }
        assert!(UQConfig {
            temperature: Some(0.0),
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(UQConfig {
            samples: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn empty_validation_rejected() {
        assert!(fit_temperature_logits(&[], &[]).is_err());
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(
                serde_json::to_string(&m).unwrap(),
                format!("\"{}\"", m.as_str())
            );
        }
        let _ = LayerKind::Deterministic;
    }
}
