//! Frame-wise log-magnitude spectra aggregated into fixed-length vectors.

use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Signal, SignalDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub frame_length: usize,
    pub hop_length: usize,
    pub n_bins: usize,
    pub aggregation: Aggregation,
    pub log_offset: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            frame_length: 128,
            hop_length: 64,
            n_bins: 32,
            aggregation: Aggregation::MeanStd,
            log_offset: 1e-6,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_length < 32 || !self.frame_length.is_power_of_two() {
            return Err(Error::Config(format!(
                "frame_length must be a power of two >= 32, got {}",
                self.frame_length
            )));
        }
        if self.hop_length == 0 {
            return Err(Error::Config("hop_length must be >= 1".into()));
        }
        if self.n_bins == 0 || self.n_bins > self.frame_length / 2 {
            return Err(Error::Config(format!(
                "n_bins must be in 1..={}, got {}",
                self.frame_length / 2,
                self.n_bins
            )));
        }
        if !(self.log_offset.is_finite() && self.log_offset > 0.0) {
            return Err(Error::Config("log_offset must be positive".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self.aggregation {
            Aggregation::Mean => self.n_bins,
            Aggregation::MeanStd => 2 * self.n_bins,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub id: String,
    pub values: Vec<f64>,
}

/// Featurizer holding a planned FFT of `frame_length` points.
#[derive(Clone)]
pub struct Featurizer {
    cfg: FeatureConfig,
    fft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Featurizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Featurizer")
            .field("cfg", &self.cfg)
            .finish_non_exhaustive()
    }
}

impl Featurizer {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.frame_length);
        Ok(Self { cfg, fft })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    /// `|X_k|` for `k < bins`, where `X_k = Σ x_n·e^{-2πikn/N}`.
    fn magnitudes(
        &self,
        frame: &[f64],
        bins: usize,
        buf: &mut Vec<Complex<f64>>,
        out: &mut Vec<f64>,
    ) {
        buf.clear();
        buf.extend(frame.iter().map(|x| Complex::new(*x, 0.0)));
        self.fft.process(buf);
        out.clear();
        out.extend(buf[..bins].iter().map(|c| c.norm()));
    }

    /// Magnitudes over all `frame_length` bins (no log, no truncation).
    pub fn full_spectrum(&self, frame: &[f64]) -> Result<Vec<f64>> {
        if frame.len() != self.cfg.frame_length {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.frame_length,
                actual: frame.len(),
            });
        }
        let mut out = Vec::with_capacity(frame.len());
        self.magnitudes(
            frame,
            frame.len(),
            &mut Vec::with_capacity(frame.len()),
            &mut out,
        );
        Ok(out)
    }

    pub fn featurize(&self, s: &Signal) -> Result<Vec<f64>> {
        let cfg = &self.cfg;
        let x = s.samples();
        if x.len() < cfg.frame_length {
            return Err(Error::Invalid(format!(
                "signal of length {} is shorter than one frame ({})",
                x.len(),
                cfg.frame_length
            )));
        }
        let n_frames = 1 + (x.len() - cfg.frame_length) / cfg.hop_length;
        let mut logmag = Vec::with_capacity(n_frames * cfg.n_bins);
        let mut mags = Vec::with_capacity(cfg.n_bins);
        let mut buf = Vec::with_capacity(cfg.frame_length);
        for f in 0..n_frames {
            let start = f * cfg.hop_length;
            self.magnitudes(
                &x[start..start + cfg.frame_length],
                cfg.n_bins,
                &mut buf,
                &mut mags,
            );
            logmag.extend(mags.iter().map(|m| (m + cfg.log_offset).ln()));
        }
        let nf = n_frames as f64;
        let column = |k: usize| logmag.iter().skip(k).step_by(cfg.n_bins);
        let mean: Vec<f64> = (0..cfg.n_bins)
            .map(|k| column(k).sum::<f64>() / nf)
            .collect();
        Ok(match cfg.aggregation {
            Aggregation::Mean => mean,
            Aggregation::MeanStd => {
                let std = (0..cfg.n_bins)
                    .map(|k| (column(k).map(|v| (v - mean[k]).powi(2)).sum::<f64>() / nf).sqrt());
                mean.iter().copied().chain(std).collect()
            }
        })
    }

    pub fn featurize_dataset(&self, d: &SignalDataset) -> Result<FeatureMatrix> {
        let rows = crate::par::try_map(d.items(), |_, item| {
            self.featurize(&item.signal)
                .map_err(|e| Error::for_item(&item.id, e))
        })?;
        Ok(FeatureMatrix {
            ids: d.items().iter().map(|i| i.id.clone()).collect(),
            labels: d.labels(),
            rows,
            dim: self.cfg.dim(),
            num_classes: d.num_classes(),
        })
    }
}

pub fn featurize(s: &Signal, cfg: &FeatureConfig) -> Result<FeatureVector> {
    Ok(FeatureVector {
        id: String::new(),
        values: Featurizer::new(cfg.clone())?.featurize(s)?,
    })
}

pub fn featurize_dataset(d: &SignalDataset, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    Featurizer::new(cfg.clone())?.featurize_dataset(d)
}

/// Row-per-item feature table with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
    pub dim: usize,
    pub num_classes: usize,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> FeatureVector {
        FeatureVector {
            id: self.ids[i].clone(),
            values: self.rows[i].clone(),
        }
    }

    /// `id,label,f0..f{d-1}`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("id,label");
        for j in 0..self.dim {
            out.push_str(&format!(",f{j}"));
        }
        out.push('\n');
        for ((id, label), row) in self.ids.iter().zip(&self.labels).zip(&self.rows) {
            out.push_str(&format!("{id},{label}"));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Per-dimension z-scoring fitted on training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(m: &FeatureMatrix) -> Result<Self> {
        if m.is_empty() {
            return Err(Error::Invalid(
                "cannot fit a standardizer on zero rows".into(),
            ));
        }
        let n = m.len() as f64;
        let mut mean = vec![0.0; m.dim];
        for row in &m.rows {
            mean.iter_mut().zip(row).for_each(|(a, v)| *a += v / n);
        }
        let mut var = vec![0.0; m.dim];
        for row in &m.rows {
            var.iter_mut()
                .zip(row.iter().zip(&mean))
                .for_each(|(a, (v, mu))| *a += (v - mu).powi(2) / n);
        }
        let scale = var
            .iter()
            .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        if m.dim != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                actual: m.dim,
            });
        }
        let rows = m
            .rows
            .iter()
            .map(|row| {
                row.iter()
                    .zip(self.mean.iter().zip(&self.scale))
                    .map(|(v, (mu, s))| (v - mu) / s)
                    .collect()
            })
            .collect();
        Ok(FeatureMatrix { rows, ..m.clone() })
    }
}
