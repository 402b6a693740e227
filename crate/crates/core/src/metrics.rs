//! Accuracy, Brier score, ECE, predictive entropy and the uncertainty
//! analyses built on them.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uq::PredictiveDistribution;

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in p.iter().enumerate().skip(1) {
        if *v > p[best] {
            best = k;
        }
    }
    best
}

fn check_pairs(preds: &[PredictiveDistribution], labels: &[usize]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::Invalid("no predictions to score".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: preds.len(),
            actual: labels.len(),
        });
    }
    let k = preds[0].num_classes();
    for (p, &y) in preds.iter().zip(labels) {
        if p.num_classes() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: p.num_classes(),
            });
        }
        if y >= k {
            return Err(Error::Invalid(format!(
                "label {y} out of range for {k} classes"
            )));
        }
    }
    Ok(())
}

pub fn accuracy(preds: &[PredictiveDistribution], labels: &[usize]) -> Result<f64> {
    check_pairs(preds, labels)?;
    let correct = preds
        .iter()
        .zip(labels)
        .filter(|(p, &y)| argmax(&p.probs) == y)
        .count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Mean of `(1 - p_y)^2`, the squared shortfall of the true-class probability.
pub fn brier(preds: &[PredictiveDistribution], labels: &[usize]) -> Result<f64> {
    check_pairs(preds, labels)?;
    Ok(preds
        .iter()
        .zip(labels)
        .map(|(p, &y)| (1.0 - p.probs[y]).powi(2))
        .sum::<f64>()
        / preds.len() as f64)
}

/// Multi-class Brier score `Σ_k (p_k - 1[k = y])^2`, averaged; ranges over [0, 2].
pub fn brier_multiclass(preds: &[PredictiveDistribution], labels: &[usize]) -> Result<f64> {
    check_pairs(preds, labels)?;
    let total: f64 = preds
        .iter()
        .zip(labels)
        .map(|(p, &y)| {
            p.probs
                .iter()
                .enumerate()
                .map(|(k, v)| (v - if k == y { 1.0 } else { 0.0 }).powi(2))
                .sum::<f64>()
        })
        .sum();
    Ok(total / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    /// Buckets of (nearly) equal size over confidence-sorted samples.
    #[default]
    Quantile,
    /// Equal-width confidence intervals over [0, 1].
    EqualWidth,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bucket {
    /// Lowest and highest confidence in the bucket (interval edges for
    /// equal-width binning).
    pub lo: f64,
    pub hi: f64,
    pub size: usize,
    pub accuracy: f64,
    pub confidence: f64,
}

impl Bucket {
    pub fn gap(&self) -> f64 {
        (self.accuracy - self.confidence).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationBuckets {
    pub binning: Binning,
    pub buckets: Vec<Bucket>,
    pub n: usize,
}

impl CalibrationBuckets {
    pub fn ece(&self) -> f64 {
        self.buckets
            .iter()
            .filter(|b| b.size > 0)
            .map(|b| b.size as f64 / self.n as f64 * b.gap())
            .sum()
    }

    /// `bucket,lo,hi,size,acc,conf,gap`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket,lo,hi,size,acc,conf,gap\n");
        for (i, b) in self.buckets.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{},{}",
                b.lo,
                b.hi,
                b.size,
                b.accuracy,
                b.confidence,
                b.gap()
            );
        }
        out
    }
}

/// Confidence (max probability) and correctness of each prediction.
pub fn confidences(preds: &[PredictiveDistribution], labels: &[usize]) -> Vec<(f64, bool)> {
    preds
        .iter()
        .zip(labels)
        .map(|(p, &y)| {
            let k = argmax(&p.probs);
            (p.probs[k], k == y)
        })
        .collect()
}

/// Expected calibration error with `s` equal-mass buckets, plus the buckets.
pub fn ece(
    preds: &[PredictiveDistribution],
    labels: &[usize],
    s: usize,
) -> Result<(f64, CalibrationBuckets)> {
    let b = calibration_buckets(preds, labels, s, Binning::Quantile)?;
    Ok((b.ece(), b))
}

/// `(lo, hi, members)`, each member a `(confidence, correct)` pair.
type Group = (f64, f64, Vec<(f64, bool)>);

/// Quantile buckets cover sorted positions `⌊j·n/S⌋ .. ⌊(j+1)·n/S⌋`; the sort
/// is stable, so equal confidences stay adjacent in input order and a run of
/// ties may straddle a boundary. Quantile binning needs `n ≥ S`.
pub fn calibration_buckets(
    preds: &[PredictiveDistribution],
    labels: &[usize],
    s: usize,
    binning: Binning,
) -> Result<CalibrationBuckets> {
    check_pairs(preds, labels)?;
    if s < 1 {
        return Err(Error::Config("ECE needs at least one bucket".into()));
    }
    if binning == Binning::Quantile && preds.len() < s {
        return Err(Error::Invalid(format!(
            "{} samples are fewer than {s} calibration buckets",
            preds.len()
        )));
    }
    let conf = confidences(preds, labels);
    let n = conf.len();
    let groups: Vec<Group> = match binning {
        Binning::Quantile => {
            let mut sorted = conf;
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            (0..s)
                .map(|j| {
                    let part = sorted[j * n / s..(j + 1) * n / s].to_vec();
                    let lo = part.first().map_or(f64::NAN, |c| c.0);
                    let hi = part.last().map_or(f64::NAN, |c| c.0);
                    (lo, hi, part)
                })
                .collect()
        }
        Binning::EqualWidth => {
            let mut groups: Vec<_> = (0..s)
                .map(|j| (j as f64 / s as f64, (j + 1) as f64 / s as f64, Vec::new()))
                .collect();
            for c in conf {
                let j = ((c.0 * s as f64) as usize).min(s - 1);
                groups[j].2.push(c);
            }
            groups
        }
    };
    let buckets = groups
        .into_iter()
        .map(|(lo, hi, part)| {
            let size = part.len();
            let (accuracy, confidence) = if size == 0 {
                (0.0, 0.0)
            } else {
                (
                    part.iter().filter(|c| c.1).count() as f64 / size as f64,
                    part.iter().map(|c| c.0).sum::<f64>() / size as f64,
                )
            };
            Bucket {
                lo,
                hi,
                size,
                accuracy,
                confidence,
            }
        })
        .collect();
    Ok(CalibrationBuckets {
        binning,
        buckets,
        n,
    })
}

/// Shannon entropy in nats, with `0·ln 0 = 0`, clamped to `[0, ln K]`
/// against rounding.
pub fn predictive_entropy(p: &[f64]) -> f64 {
    let h: f64 = -p
        .iter()
        .filter(|v| **v > 0.0)
        .map(|v| v * v.ln())
        .sum::<f64>();
    h.clamp(0.0, (p.len() as f64).ln()) + 0.0
}

pub fn entropies(preds: &[PredictiveDistribution]) -> Vec<f64> {
    preds.iter().map(|p| predictive_entropy(&p.probs)).collect()
}

pub fn mean_uncertainty(preds: &[PredictiveDistribution]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Invalid("no predictions to score".into()));
    }
    Ok(entropies(preds).iter().sum::<f64>() / preds.len() as f64)
}

/// True positive and true negative rates for a binary task, class 1 positive.
pub fn tpr_tnr(preds: &[PredictiveDistribution], labels: &[usize]) -> Result<(f64, f64)> {
    check_pairs(preds, labels)?;
    if preds[0].num_classes() != 2 {
        return Err(Error::Invalid(
            "TPR/TNR are defined for binary tasks only".into(),
        ));
    }
    let (mut tp, mut fneg, mut tn, mut fp) = (0usize, 0usize, 0usize, 0usize);
    for (p, &y) in preds.iter().zip(labels) {
        match (y, argmax(&p.probs)) {
            (1, 1) => tp += 1,
            (1, _) => fneg += 1,
            (_, 0) => tn += 1,
            _ => fp += 1,
        }
    }
    if tp + fneg == 0 || tn + fp == 0 {
        return Err(Error::Invalid("TPR/TNR need both classes present".into()));
    }
    Ok((tp as f64 / (tp + fneg) as f64, tn as f64 / (tn + fp) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectivePoint {
    pub threshold: f64,
    pub retained: usize,
    pub retained_fraction: f64,
    /// `None` when nothing is retained.
    pub accuracy: Option<f64>,
}

/// Accuracy over samples with entropy at or below each threshold.
pub fn selective_prediction_curve(
    preds: &[PredictiveDistribution],
    labels: &[usize],
    thresholds: &[f64],
) -> Result<Vec<SelectivePoint>> {
    check_pairs(preds, labels)?;
    let h = entropies(preds);
    let correct: Vec<bool> = preds
        .iter()
        .zip(labels)
        .map(|(p, &y)| argmax(&p.probs) == y)
        .collect();
    Ok(thresholds
        .iter()
        .map(|&tau| {
            let kept: Vec<bool> = h
                .iter()
                .zip(&correct)
                .filter(|(e, _)| **e <= tau)
                .map(|(_, c)| *c)
                .collect();
            let retained = kept.len();
            SelectivePoint {
                threshold: tau,
                retained,
                retained_fraction: retained as f64 / preds.len() as f64,
                accuracy: (retained > 0)
                    .then(|| kept.iter().filter(|c| **c).count() as f64 / retained as f64),
            }
        })
        .collect())
}

/// Accuracy of flagging a sample as shifted when its entropy exceeds `tau`,
/// over the union of original and shifted samples.
pub fn shift_detection_accuracy(original: &[f64], shifted: &[f64], tau: f64) -> Result<f64> {
    if original.is_empty() || shifted.is_empty() {
        return Err(Error::Invalid(
            "shift detection needs original and shifted samples".into(),
        ));
    }
    let correct = original.iter().filter(|h| **h <= tau).count()
        + shifted.iter().filter(|h| **h > tau).count();
    Ok(correct as f64 / (original.len() + shifted.len()) as f64)
}

/// `(tau, accuracy)` for each threshold.
pub fn shift_detection_sweep(
    original: &[f64],
    shifted: &[f64],
    thresholds: &[f64],
) -> Result<Vec<(f64, f64)>> {
    thresholds
        .iter()
        .map(|&t| Ok((t, shift_detection_accuracy(original, shifted, t)?)))
        .collect()
}

/// `n` evenly spaced thresholds covering `[0, ln K]`.
pub fn entropy_thresholds(num_classes: usize, n: usize) -> Vec<f64> {
    let max = (num_classes as f64).ln();
    if n < 2 {
        return vec![max];
    }
    (0..n).map(|i| max * i as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` edges spanning `[0, ln K]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn entropy_histogram(entropies: &[f64], num_classes: usize, bins: usize) -> Result<Histogram> {
    if bins < 1 || num_classes < 2 {
        return Err(Error::Config(
            "histogram needs >= 1 bin and >= 2 classes".into(),
        ));
    }
    let max = (num_classes as f64).ln();
    let edges = (0..=bins).map(|i| max * i as f64 / bins as f64).collect();
    let mut counts = vec![0; bins];
    for h in entropies {
        let j = ((h / max * bins as f64) as usize).min(bins - 1);
        counts[j] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// One row of the metrics matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub shift_kind: String,
    pub degree: u8,
    pub accuracy: f64,
    pub brier: f64,
    pub ece: f64,
    pub mean_uncertainty: f64,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub n_samples: usize,
}

impl MetricsReport {
    pub fn compute(
        method: &str,
        shift_kind: &str,
        degree: u8,
        preds: &[PredictiveDistribution],
        labels: &[usize],
        ece_buckets: usize,
    ) -> Result<Self> {
        let (tpr, tnr) = match tpr_tnr(preds, labels) {
            Ok((a, b)) => (Some(a), Some(b)),
            Err(_) => (None, None),
        };
        Ok(Self {
            method: method.to_string(),
            shift_kind: shift_kind.to_string(),
            degree,
            accuracy: accuracy(preds, labels)?,
            brier: brier(preds, labels)?,
            ece: ece(preds, labels, ece_buckets)?.0,
            mean_uncertainty: mean_uncertainty(preds)?,
            tpr,
            tnr,
            n_samples: preds.len(),
        })
    }
}
