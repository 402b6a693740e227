//! The experiment matrix: methods × shift kinds × degrees, with result
//! export and figure rendering.

mod export;
mod plot;
mod suite;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureMatrix};
use crate::metrics::{self, CalibrationBuckets, Histogram, MetricsReport, SelectivePoint};
use crate::neural::TrainConfig;
use crate::rng;
use crate::shift::{
    self, BackgroundBank, Degree, GaussianNoiseMode, ShiftContext, ShiftKind, ShiftSpec,
};
use crate::signal::{self, SignalDataset, SynthTaskSpec};
use crate::uq::{Method, PredictiveDistribution, UQConfig};

pub use export::{export_csv, read_metrics_csv, METRICS_HEADER};
pub use plot::{plot_trends, render_report, LineChart, Series, TREND_METRICS};
pub use suite::{ModelSuite, TrainedFamilies};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    #[default]
    Synthetic,
    Manifest,
}

/// How test sets are perturbed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftOptions {
    pub mask_blocks: usize,
    pub renormalize: bool,
    pub gaussian_mode: GaussianNoiseMode,
    /// Manifest of background clips; synthetic babble when absent.
    pub background_manifest: Option<PathBuf>,
    pub background_clips: usize,
    pub background_length: usize,
}

impl Default for ShiftOptions {
    fn default() -> Self {
        Self {
            mask_blocks: 5,
            renormalize: false,
            gaussian_mode: GaussianNoiseMode::default(),
            background_manifest: None,
            background_clips: 8,
            background_length: 2048,
        }
    }
}

/// Full benchmark configuration. Every field has a default, so
/// `{"task":"synthetic"}` is a complete config.
///
/// The master `seed` drives every random choice (dataset generation, split,
/// training, shifts, sampling); `synthetic.seed` and `train.seed` are
/// replaced by substreams of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub task: TaskKind,
    pub synthetic: SynthTaskSpec,
    /// Items generated per class for the synthetic task.
    pub n_per_class: usize,
    /// Labeled manifest for `task = "manifest"`.
    pub manifest: Option<PathBuf>,
    /// Train / validation / test fractions.
    pub split: (f64, f64, f64),
    pub features: FeatureConfig,
    /// Z-score features with statistics of the training split.
    pub standardize: bool,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub uq: UQConfig,
    pub methods: Vec<Method>,
    pub shift_kinds: Vec<ShiftKind>,
    pub degrees: Vec<u8>,
    pub shift: ShiftOptions,
    pub seed: u64,
    /// Not part of the config echo or hash; the CLI `--out` flag overrides it.
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
    pub ece_buckets: usize,
    /// Entropy thresholds for selective prediction; `None` spans `[0, ln K]`.
    pub selective_thresholds: Option<Vec<f64>>,
    /// Entropy thresholds for shift detection; `None` spans `[0, ln K]`.
    pub detection_thresholds: Option<Vec<f64>>,
    pub threshold_points: usize,
    pub histogram_bins: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Synthetic,
            synthetic: SynthTaskSpec::default(),
            n_per_class: 200,
            manifest: None,
            split: (0.7, 0.1, 0.2),
            features: FeatureConfig::default(),
            standardize: true,
            hidden: vec![64, 32],
            train: TrainConfig::default(),
            uq: UQConfig::default(),
            methods: Method::ALL.to_vec(),
            shift_kinds: ShiftKind::ALL.to_vec(),
            degrees: (0..=5).collect(),
            shift: ShiftOptions::default(),
            seed: 0,
            output_dir: None,
            ece_buckets: 10,
            selective_thresholds: None,
            detection_thresholds: None,
            threshold_points: 21,
            histogram_bins: 20,
        }
    }
}

impl BenchmarkConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let (TaskKind::Manifest, Some(m)) = (cfg.task, &cfg.manifest) {
            if m.is_relative() {
                cfg.manifest = Some(path.parent().unwrap_or(Path::new("")).join(m));
            }
        }
        cfg.validate()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.task == TaskKind::Manifest && self.manifest.is_none() {
            return Err(Error::Config(
                "task \"manifest\" needs a `manifest` path".into(),
            ));
        }
        if self.task == TaskKind::Synthetic {
            self.synthetic.validate()?;
            if self.n_per_class < 1 {
                return Err(Error::Config("n_per_class must be >= 1".into()));
            }
        }
        if let Some(d) = self.degrees.iter().find(|d| **d > 5) {
            return Err(Error::Config(format!("shift degree {d} outside 0..=5")));
        }
        for (name, empty) in [
            ("degrees", self.degrees.is_empty()),
            ("methods", self.methods.is_empty()),
            ("shift_kinds", self.shift_kinds.is_empty()),
        ] {
            if empty {
                return Err(Error::Config(format!("`{name}` must not be empty")));
            }
        }
        if self.ece_buckets < 1 || self.histogram_bins < 1 || self.threshold_points < 1 {
            return Err(Error::Config(
                "bucket, bin and threshold counts must be >= 1".into(),
            ));
        }
        for t in [&self.selective_thresholds, &self.detection_thresholds]
            .into_iter()
            .flatten()
        {
            if t.is_empty() {
                return Err(Error::Config("threshold lists must not be empty".into()));
            }
        }
        self.features.validate()?;
        self.train.validate()?;
        self.uq.validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON echo.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn seed_for(&self, purpose: &str) -> u64 {
        rng::derive_str(self.seed, "bench", purpose)
    }

    /// Seed of the perturbation applied for `(kind, degree)`.
    pub fn shift_seed(&self, kind: ShiftKind, degree: u8) -> u64 {
        self.seed_for(&format!("shift/{kind}/{degree}"))
    }

    /// Seed of the sampled predictions of `method`, shared by every cell so
    /// that degrees are compared under the same dropout masks and weight draws.
    pub fn prediction_seed(&self, method: Method) -> u64 {
        self.seed_for(&format!("predict/{method}"))
    }

    pub fn split_seed(&self) -> u64 {
        self.seed_for("split")
    }

    pub fn shift_context(&self) -> Result<ShiftContext> {
        let bank_seed = self.seed_for("background");
        let background = match &self.shift.background_manifest {
            Some(path) => {
                let d = signal::read_manifest(path)?;
                BackgroundBank::new(
                    d.items().iter().map(|i| i.signal.clone()).collect(),
                    bank_seed,
                )
            }
            None => {
                let rate = match self.task {
                    TaskKind::Synthetic => self.synthetic.sample_rate,
                    TaskKind::Manifest => 250.0,
                };
                BackgroundBank::synthetic_babble(
                    self.shift.background_clips,
                    self.shift.background_length,
                    rate,
                    bank_seed,
                )
            }
        };
        Ok(ShiftContext {
            background,
            mask_blocks: self.shift.mask_blocks,
            renormalize: self.shift.renormalize,
            gaussian_mode: self.shift.gaussian_mode,
        })
    }

    pub fn load_dataset(&self) -> Result<SignalDataset> {
        match self.task {
            TaskKind::Synthetic => {
                let spec = SynthTaskSpec {
                    seed: self.seed_for("dataset"),
                    ..self.synthetic.clone()
                };
                signal::generate_synthetic_dataset(&spec, self.n_per_class)
            }
            TaskKind::Manifest => signal::read_manifest(self.manifest.as_ref().expect("validated")),
        }
    }
}

/// One `(method, kind, degree)` cell with its analysis tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub report: MetricsReport,
    pub reliability: CalibrationBuckets,
    pub selective: Vec<SelectivePoint>,
    pub histogram: Histogram,
    /// `(tau, accuracy)` against the degree-0 set; empty for degree 0.
    pub detection: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellFailure {
    pub method: Method,
    pub shift_kind: ShiftKind,
    pub degree: u8,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub split_sizes: SplitSizes,
    pub temperature: Option<f64>,
    /// Family name to failure message, for families that did not train.
    pub training_failures: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMatrixResult {
    /// Cells ordered by method, then shift kind, then degree, as configured.
    pub cells: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
    pub provenance: Provenance,
}

impl RunMatrixResult {
    pub fn reports(&self) -> impl Iterator<Item = &MetricsReport> {
        self.cells.iter().map(|c| &c.report)
    }

    pub fn num_classes(&self) -> usize {
        self.provenance.num_classes
    }
}

/// Loads the task, trains each method family once on clean data, perturbs the
/// test split for every `(kind, degree)`, and scores every cell.
///
/// Cells run in parallel; every random choice comes from a substream of the
/// master seed, so the result does not depend on the thread count.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<RunMatrixResult> {
    cfg.validate()?;
    let data = cfg.load_dataset()?;
    let (train, val, test) = signal::split_dataset(&data, cfg.split, cfg.split_seed())?;
    log::info!(
        "dataset: {} classes, {} train / {} validation / {} test",
        data.num_classes(),
        train.len(),
        val.len(),
        test.len()
    );

    let suite = ModelSuite::fit(&train, &val, cfg)?;

    // Degree 0 is the untouched test split, shared by every kind.
    let ctx = cfg.shift_context()?;
    let mut degrees = cfg.degrees.clone();
    degrees.sort_unstable();
    degrees.dedup();
    let shifted: Vec<(ShiftKind, u8)> = cfg
        .shift_kinds
        .iter()
        .flat_map(|&k| degrees.iter().filter(|d| **d > 0).map(move |&d| (k, d)))
        .collect();
    let clean_x = suite.prepare(&test)?;
    let shifted_x: Vec<Result<FeatureMatrix>> = crate::par::map(&shifted, |_, &(kind, degree)| {
        let spec = ShiftSpec {
            kind,
            degree: Degree::new(degree)?,
            seed: cfg.shift_seed(kind, degree),
        };
        suite.prepare(&shift::apply_shift(&test, &spec, &ctx)?)
    });
    let features_for =
        |kind: ShiftKind, degree: u8| -> std::result::Result<&FeatureMatrix, String> {
            if degree == 0 {
                return Ok(&clean_x);
            }
            let i = shifted
                .iter()
                .position(|c| *c == (kind, degree))
                .expect("cell enumerated");
            shifted_x[i].as_ref().map_err(|e| e.to_string())
        };

    // Predictions per (method, test set); degree 0 is computed once per method.
    let mut sets: Vec<(ShiftKind, u8)> = vec![(cfg.shift_kinds[0], 0)];
    sets.extend(shifted.iter().copied());
    let jobs: Vec<(Method, usize)> = cfg
        .methods
        .iter()
        .flat_map(|&m| (0..sets.len()).map(move |s| (m, s)))
        .collect();
    let preds: Vec<std::result::Result<Vec<PredictiveDistribution>, String>> =
        crate::par::map(&jobs, |_, &(method, s)| {
            let (kind, degree) = sets[s];
            let x = features_for(kind, degree)?;
            suite
                .predict(method, &x.rows, &cfg.uq, cfg.prediction_seed(method))
                .map_err(|e| e.to_string())
        });
    let preds_for = |method: Method, kind: ShiftKind, degree: u8| {
        let s = if degree == 0 {
            0
        } else {
            sets.iter()
                .position(|c| *c == (kind, degree))
                .expect("cell enumerated")
        };
        let j = jobs
            .iter()
            .position(|c| *c == (method, s))
            .expect("job enumerated");
        &preds[j]
    };

    let k = data.num_classes();
    let labels = clean_x.labels.clone();
    let selective_t = cfg
        .selective_thresholds
        .clone()
        .unwrap_or_else(|| metrics::entropy_thresholds(k, cfg.threshold_points));
    let detection_t = cfg
        .detection_thresholds
        .clone()
        .unwrap_or_else(|| metrics::entropy_thresholds(k, cfg.threshold_points));

    let cells: Vec<(Method, ShiftKind, u8)> = cfg
        .methods
        .iter()
        .flat_map(|&m| {
            let degrees = &cfg.degrees;
            cfg.shift_kinds
                .iter()
                .flat_map(move |&kd| degrees.iter().map(move |&d| (m, kd, d)))
        })
        .collect();
    let scored: Vec<std::result::Result<CellResult, String>> =
        crate::par::map(&cells, |_, &(method, kind, degree)| {
            let p = preds_for(method, kind, degree)
                .as_ref()
                .map_err(Clone::clone)?;
            let score = || -> Result<CellResult> {
                let report = MetricsReport::compute(
                    method.as_str(),
                    kind.as_str(),
                    degree,
                    p,
                    &labels,
                    cfg.ece_buckets,
                )?;
                let reliability = metrics::calibration_buckets(
                    p,
                    &labels,
                    cfg.ece_buckets,
                    metrics::Binning::Quantile,
                )?;
                let selective = metrics::selective_prediction_curve(p, &labels, &selective_t)?;
                let h = metrics::entropies(p);
                let histogram = metrics::entropy_histogram(&h, k, cfg.histogram_bins)?;
                let detection = if degree == 0 {
                    Vec::new()
                } else {
                    match preds_for(method, kind, 0) {
                        Ok(clean) => metrics::shift_detection_sweep(
                            &metrics::entropies(clean),
                            &h,
                            &detection_t,
                        )?,
                        Err(_) => Vec::new(),
                    }
                };
                Ok(CellResult {
                    report,
                    reliability,
                    selective,
                    histogram,
                    detection,
                })
            };
            score().map_err(|e| e.to_string())
        });

    let mut out_cells = Vec::new();
    let mut failures = Vec::new();
    for ((method, kind, degree), r) in cells.into_iter().zip(scored) {
        match r {
            Ok(c) => out_cells.push(c),
            Err(message) => {
                log::error!("cell {method}/{kind}/{degree} failed: {message}");
                failures.push(CellFailure {
                    method,
                    shift_kind: kind,
                    degree,
                    message,
                })
            }
        }
    }

    let provenance = Provenance {
        tool: "shiftbench".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        config: serde_json::to_value(cfg)?,
        num_classes: k,
        class_names: data.class_names().to_vec(),
        split_sizes: SplitSizes {
            train: train.len(),
            validation: val.len(),
            test: test.len(),
        },
        temperature: suite.families.temperature(&cfg.uq),
        training_failures: suite.families.failures.clone(),
    };
    Ok(RunMatrixResult {
        cells: out_cells,
        failures,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses() {
        let cfg = BenchmarkConfig::from_json_str(r#"{"task":"synthetic"}"#).unwrap();
        assert_eq!(cfg, BenchmarkConfig::default());
        assert_eq!(cfg.degrees, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(cfg.uq.samples, 10);
    }

    #[test]
    fn invalid_configs_rejected() {
        for text in [
            r#"{"degrees":[0,6]}"#,
            r#"{"methods":[]}"#,
            r#"{"task":"manifest"}"#,
            r#"{"unknown_field":1}"#,
            r#"{"uq":{"samples":0}}"#,
            r#"{"ece_buckets":0}"#,
        ] {
            assert!(BenchmarkConfig::from_json_str(text).is_err(), "{text}");
        }
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = BenchmarkConfig::default();
        let b = BenchmarkConfig {
            output_dir: Some("/tmp/x".into()),
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        let c = BenchmarkConfig {
            seed: 1,
            ..a.clone()
        };
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
