//! Trained models for every method family, with save/load for the CLI.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::BenchmarkConfig;
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureMatrix, Featurizer, Standardizer};
use crate::neural::{self, check_params, Architecture, LayerKind, ModelParams};
use crate::signal::SignalDataset;
use crate::uq::{self, Method, PredictiveDistribution, TemperatureFit, UQConfig};

pub const SUITE_FORMAT: &str = "shiftbench-suite";
pub const SUITE_VERSION: u32 = 1;

const BACKBONE: &str = "backbone";
const VARIATIONAL: &str = "variational";
const ENSEMBLE: &str = "ensemble";

/// The deterministic backbone (vanilla, scaling, MC dropout), the variational
/// network and the ensemble members. Families not needed by the configured
/// methods, or whose training failed, are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedFamilies {
    pub backbone: Option<ModelParams>,
    pub temperature_fit: Option<TemperatureFit>,
    pub variational: Option<ModelParams>,
    pub ensemble: Vec<ModelParams>,
    pub failures: BTreeMap<String, String>,
}

enum Trained {
    One(Result<ModelParams>),
    Many(Result<Vec<ModelParams>>),
    Skipped,
}

impl TrainedFamilies {
    fn empty() -> Self {
        Self {
            backbone: None,
            temperature_fit: None,
            variational: None,
            ensemble: Vec::new(),
            failures: BTreeMap::new(),
        }
    }

    /// Trains the families the configured methods need, concurrently.
    pub fn train(
        train: &FeatureMatrix,
        val: &FeatureMatrix,
        cfg: &BenchmarkConfig,
    ) -> Result<Self> {
        let uses = |ms: &[Method]| cfg.methods.iter().any(|m| ms.contains(m));
        let need = [
            uses(&[Method::Vanilla, Method::Scaling, Method::McDropout]),
            uses(&[Method::Bayesian]),
            uses(&[Method::Ensemble]),
        ];
        let arch = Architecture {
            input_dim: train.dim,
            hidden: cfg.hidden.clone(),
            num_classes: train.num_classes,
            dropout: cfg.uq.dropout,
            hidden_kind: LayerKind::Deterministic,
        };
        let var_arch = Architecture {
            dropout: 0.0,
            hidden_kind: LayerKind::Variational,
            ..arch.clone()
        };
        let train_cfg = |family: &str| neural::TrainConfig {
            seed: cfg.seed_for(&format!("train/{family}")),
            ..cfg.train.clone()
        };
        let mut out = crate::par::map_range(3, |f| match (f, need[f]) {
            (_, false) => Trained::Skipped,
            (0, _) => Trained::One(
                neural::train_deterministic(train, val, &arch, &train_cfg(BACKBONE))
                    .map(|t| t.params),
            ),
            (1, _) => Trained::One(
                neural::train_variational(train, val, &var_arch, &train_cfg(VARIATIONAL))
                    .map(|t| t.params),
            ),
            _ => Trained::Many(
                neural::train_ensemble(train, val, &arch, &train_cfg(ENSEMBLE), cfg.uq.samples)
                    .map(|ms| ms.into_iter().map(|t| t.params).collect()),
            ),
        });

        let mut failures = BTreeMap::new();
        let mut take_one = |t: Trained, name: &str| match t {
            Trained::One(Ok(p)) => Some(p),
            Trained::One(Err(e)) | Trained::Many(Err(e)) => {
                log::error!("training {name} failed: {e}");
                failures.insert(name.to_string(), e.to_string());
                None
            }
            _ => None,
        };
        let ensemble_t = out.pop().expect("three families");
        let variational = take_one(out.pop().expect("three families"), VARIATIONAL);
        let backbone = take_one(out.pop().expect("three families"), BACKBONE);
        let ensemble = match ensemble_t {
            Trained::Many(Ok(ms)) => ms,
            other => {
                take_one(other, ENSEMBLE);
                Vec::new()
            }
        };

        let temperature_fit = match (
            &backbone,
            cfg.methods.contains(&Method::Scaling),
            cfg.uq.temperature,
        ) {
            (Some(b), true, None) => {
                let fit = uq::fit_temperature(b, val)?;
                log::info!("fitted temperature T = {:.4}", fit.temperature);
                Some(fit)
            }
            _ => None,
        };
        Ok(Self {
            backbone,
            temperature_fit,
            variational,
            ensemble,
            failures,
        })
    }

    /// Configured temperature, else the fitted one.
    pub fn temperature(&self, uq: &UQConfig) -> Option<f64> {
        uq.temperature
            .or(self.temperature_fit.as_ref().map(|f| f.temperature))
    }

    fn missing(&self, family: &str) -> Error {
        match self.failures.get(family) {
            Some(msg) => Error::Config(format!("{family} model unavailable: {msg}")),
            None => Error::Config(format!("no trained {family} model")),
        }
    }

    pub fn predict(
        &self,
        method: Method,
        xs: &[Vec<f64>],
        cfg: &UQConfig,
        seed: u64,
    ) -> Result<Vec<PredictiveDistribution>> {
        let backbone = || self.backbone.as_ref().ok_or_else(|| self.missing(BACKBONE));
        match method {
            Method::Vanilla => uq::predict_vanilla(backbone()?, xs),
            Method::Scaling => {
                let t = self.temperature(cfg).ok_or_else(|| {
                    Error::Config("scaling needs a fitted or configured temperature".into())
                })?;
                uq::predict_scaled(backbone()?, t, xs)
            }
            Method::McDropout => {
                uq::predict_mcdropout(backbone()?, xs, cfg.samples, seed, cfg.keep_passes)
            }
            Method::Bayesian => {
                let v = self
                    .variational
                    .as_ref()
                    .ok_or_else(|| self.missing(VARIATIONAL))?;
                uq::predict_bayesian(v, xs, cfg.samples, seed, cfg.keep_passes)
            }
            Method::Ensemble => {
                if self.ensemble.is_empty() {
                    return Err(self.missing(ENSEMBLE));
                }
                uq::predict_ensemble(&self.ensemble, xs, cfg.keep_passes)
            }
        }
    }
}

/// Everything needed to score raw signals: feature settings, the training
/// standardizer and the trained families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSuite {
    pub features: FeatureConfig,
    pub standardizer: Option<Standardizer>,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub families: TrainedFamilies,
}

#[derive(Serialize, Deserialize)]
struct SuiteFile {
    format: String,
    version: u32,
    suite: ModelSuite,
}

impl ModelSuite {
    /// Featurizes both splits, fits the standardizer on `train` and trains
    /// the families the configured methods need.
    pub fn fit(train: &SignalDataset, val: &SignalDataset, cfg: &BenchmarkConfig) -> Result<Self> {
        let featurizer = Featurizer::new(cfg.features.clone())?;
        let raw_train = featurizer.featurize_dataset(train)?;
        let standardizer = if cfg.standardize {
            Some(Standardizer::fit(&raw_train)?)
        } else {
            None
        };
        let mut suite = Self {
            features: cfg.features.clone(),
            standardizer,
            num_classes: train.num_classes(),
            class_names: train.class_names().to_vec(),
            families: TrainedFamilies::empty(),
        };
        let train_x = match &suite.standardizer {
            Some(s) => s.apply(&raw_train)?,
            None => raw_train,
        };
        let val_x = suite.prepare(val)?;
        suite.families = TrainedFamilies::train(&train_x, &val_x, cfg)?;
        Ok(suite)
    }

    /// Featurizes and standardizes a dataset the way training data was.
    pub fn prepare(&self, d: &SignalDataset) -> Result<FeatureMatrix> {
        if d.num_classes() > self.num_classes {
            return Err(Error::Invalid(format!(
                "dataset has {} classes, model was trained on {}",
                d.num_classes(),
                self.num_classes
            )));
        }
        let m = Featurizer::new(self.features.clone())?.featurize_dataset(d)?;
        match &self.standardizer {
            Some(s) => s.apply(&m),
            None => Ok(m),
        }
    }

    pub fn predict(
        &self,
        method: Method,
        xs: &[Vec<f64>],
        cfg: &UQConfig,
        seed: u64,
    ) -> Result<Vec<PredictiveDistribution>> {
        self.families.predict(method, xs, cfg, seed)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = SuiteFile {
            format: SUITE_FORMAT.into(),
            version: SUITE_VERSION,
            suite: self.clone(),
        };
        fs::write(path, serde_json::to_string(&file)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: String| Error::Config(format!("{}: {msg}", path.display()));
        let file: SuiteFile = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if file.format != SUITE_FORMAT || file.version != SUITE_VERSION {
            return Err(bad(format!(
                "unsupported model file {} v{}",
                file.format, file.version
            )));
        }
        let f = &file.suite.families;
        for m in f.backbone.iter().chain(&f.variational).chain(&f.ensemble) {
            check_params(m).map_err(|e| bad(e.to_string()))?;
        }
        Ok(file.suite)
    }
}
