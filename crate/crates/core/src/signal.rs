//! Waveforms, labeled datasets, synthetic task generation and file ingestion.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// A sampled 1-D waveform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Invalid(
                "signal must contain at least one sample".into(),
            ));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::Invalid(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSignal {
    pub id: String,
    pub label: usize,
    pub signal: Signal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Validation,
    Test,
}

/// An immutable collection of labeled signals over `num_classes` classes.
///
/// `class_names[k]` is the label text that was remapped to index `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalDataset {
    items: Vec<LabeledSignal>,
    num_classes: usize,
    split_tag: SplitTag,
    class_names: Vec<String>,
}

impl SignalDataset {
    pub fn new(
        items: Vec<LabeledSignal>,
        num_classes: usize,
        split_tag: SplitTag,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Invalid("num_classes must be positive".into()));
        }
        if class_names.len() != num_classes {
            return Err(Error::Invalid(format!(
                "{} class names for {num_classes} classes",
                class_names.len()
            )));
        }
        let mut seen = HashSet::with_capacity(items.len());
        for item in &items {
            if item.label >= num_classes {
                return Err(Error::Invalid(format!(
                    "item {} has label {} but K = {num_classes}",
                    item.id, item.label
                )));
            }
            if !seen.insert(item.id.as_str()) {
                return Err(Error::Invalid(format!("duplicate id {}", item.id)));
            }
        }
        Ok(Self {
            items,
            num_classes,
            split_tag,
            class_names,
        })
    }

    pub fn items(&self) -> &[LabeledSignal] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split_tag(&self) -> SplitTag {
        self.split_tag
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|i| i.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for item in &self.items {
            counts[item.label] += 1;
        }
        counts
    }

    /// Same metadata, new items (labels and ids are revalidated).
    pub fn with_items(&self, items: Vec<LabeledSignal>) -> Result<Self> {
        Self::new(
            items,
            self.num_classes,
            self.split_tag,
            self.class_names.clone(),
        )
    }
}

/// Synthetic biosignal-like task.
///
/// Every item carries a nuisance background drawn independently of its
/// class: a regular spike train, an irregular spike train or a sequence of
/// band-limited bursts, at a random carrier frequency. The class is encoded
/// only by a weak sustained tone at `marker_freqs[class]`, `marker_level_db`
/// below the background power. Clean items are separable; additive noise
/// masks the tone as the SNR drops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthTaskSpec {
    pub num_classes: usize,
    pub signal_length: usize,
    /// Hz.
    pub sample_rate: f64,
    /// Hz, range of the background carrier frequency.
    pub carrier_range: (f64, f64),
    /// Mean spike interval in seconds.
    pub spike_interval: f64,
    /// Relative spread of the irregular background's spike intervals.
    pub interval_jitter: f64,
    /// Spike decay time constant in seconds.
    pub spike_decay: f64,
    pub harmonic_weights: Vec<f64>,
    /// Seconds.
    pub burst_length: f64,
    /// Hz.
    pub burst_bandwidth: f64,
    /// Hz, one per class.
    pub marker_freqs: Vec<f64>,
    /// Marker power relative to the background power, in dB.
    pub marker_level_db: f64,
    /// Relative per-item spread of the marker frequency.
    pub marker_jitter: f64,
    /// Std of additive white noise before peak normalization.
    pub noise_floor: f64,
    pub seed: u64,
}

impl Default for SynthTaskSpec {
    fn default() -> Self {
        Self {
            num_classes: 3,
            signal_length: 512,
            sample_rate: 250.0,
            carrier_range: (5.0, 12.0),
            spike_interval: 0.3,
            interval_jitter: 0.4,
            spike_decay: 0.05,
            harmonic_weights: vec![1.0, 0.5, 0.25],
            burst_length: 0.3,
            burst_bandwidth: 12.0,
            marker_freqs: vec![40.0, 48.0, 56.0],
            marker_level_db: -23.0,
            marker_jitter: 0.01,
            noise_floor: 0.02,
            seed: 0,
        }
    }
}

impl SynthTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(2..=3).contains(&self.num_classes) {
            return bad(format!(
                "num_classes must be 2 or 3, got {}",
                self.num_classes
            ));
        }
        if self.signal_length < 64 {
            return bad(format!(
                "signal_length must be >= 64, got {}",
                self.signal_length
            ));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return bad("sample_rate must be positive".into());
        }
        if !(self.noise_floor.is_finite() && self.noise_floor >= 0.0) {
            return bad("noise_floor must be >= 0".into());
        }
        if self.marker_freqs.len() < self.num_classes {
            return bad(format!(
                "need {} marker frequencies, got {}",
                self.num_classes,
                self.marker_freqs.len()
            ));
        }
        let nyquist = self.sample_rate / 2.0;
        let (lo, hi) = self.carrier_range;
        if self
            .marker_freqs
            .iter()
            .chain([&lo, &hi])
            .any(|f| !(*f > 0.0 && *f < nyquist))
        {
            return bad(format!(
                "marker and carrier frequencies must lie in (0, {nyquist}) Hz"
            ));
        }
        if lo > hi {
            return bad("carrier_range must be ordered".into());
        }
        if !self.marker_level_db.is_finite() {
            return bad("marker_level_db must be finite".into());
        }
        if self.harmonic_weights.is_empty() {
            return bad("harmonic_weights must be nonempty".into());
        }
        for (name, v) in [
            ("marker_jitter", self.marker_jitter),
            ("interval_jitter", self.interval_jitter),
        ] {
            if !(v.is_finite() && (0.0..1.0).contains(&v)) {
                return bad(format!("{name} must lie in [0, 1)"));
            }
        }
        for (name, v) in [
            ("spike_interval", self.spike_interval),
            ("spike_decay", self.spike_decay),
            ("burst_length", self.burst_length),
            ("burst_bandwidth", self.burst_bandwidth),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    fn class_names(&self) -> Vec<String> {
        (0..self.num_classes)
            .map(|k| format!("marker-{}hz", self.marker_freqs[k]))
            .collect()
    }
}

/// Generate `num_classes * n_per_class` signals; a pure function of its inputs.
pub fn generate_synthetic_dataset(
    spec: &SynthTaskSpec,
    n_per_class: usize,
) -> Result<SignalDataset> {
    if n_per_class < 1 {
        return Err(Error::Config("n_per_class must be ≥ 1".into()));
    }
    spec.validate()?;
    let k = spec.num_classes;
    let items = crate::par::map_range(n_per_class * k, |flat| {
        let (index, class) = (flat / k, flat % k);
        let seed = rng::derive(
            spec.seed,
            "synth",
            &[(class as u64).to_le_bytes(), (index as u64).to_le_bytes()].concat(),
        );
        let samples = synth_waveform(spec, class, seed);
        LabeledSignal {
            id: format!("synth-{class}-{index:05}"),
            label: class,
            // Finite by construction and non-empty (length >= 64).
            signal: Signal {
                samples,
                sample_rate: spec.sample_rate,
            },
        }
    });
    SignalDataset::new(items, k, SplitTag::Train, spec.class_names())
}

fn synth_waveform(spec: &SynthTaskSpec, class: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed);
    let l = spec.signal_length;
    let fs = spec.sample_rate;
    let mut x = vec![0.0; l];
    let freq = rng.random_range(spec.carrier_range.0..=spec.carrier_range.1);
    let duration = l as f64 / fs;

    let morphology = rng.random_range(0..3);
    if morphology < 2 {
        let jitter = if morphology == 0 {
            0.02
        } else {
            spec.interval_jitter
        };
        let mut t = rng.random_range(0.0..spec.spike_interval);
        while t < duration {
            let amp = rng.random_range(0.7..=1.0);
            add_spike(&mut x, fs, t, freq, amp, spec);
            t += spec.spike_interval * (1.0 + jitter * rng.random_range(-1.0..=1.0));
        }
    } else {
        let n_partials = 8;
        let mut t = rng.random_range(0.0..spec.burst_length);
        while t < duration {
            let partials: Vec<(f64, f64)> = (0..n_partials)
                .map(|_| {
                    let f = freq + spec.burst_bandwidth * rng.random_range(-0.5..=0.5);
                    let phase = rng.random_range(0.0..std::f64::consts::TAU);
                    (f.max(0.0), phase)
                })
                .collect();
            let amp = rng.random_range(0.7..=1.0);
            let start = (t * fs) as usize;
            let len = ((spec.burst_length * fs) as usize).max(2);
            for j in 0..len {
                let n = start + j;
                if n >= l {
                    break;
                }
                let env = 0.5 - 0.5 * (std::f64::consts::TAU * j as f64 / (len - 1) as f64).cos();
                let tt = n as f64 / fs;
                let carrier: f64 = partials
                    .iter()
                    .map(|(f, ph)| (std::f64::consts::TAU * f * tt + ph).sin())
                    .sum();
                x[n] += amp * env * carrier / n_partials as f64;
            }
            t += spec.burst_length * rng.random_range(1.5..=2.5);
        }
    }

    // Sinusoid power is A²/2.
    let background_power = x.iter().map(|v| v * v).sum::<f64>() / l as f64;
    let amp = (2.0 * background_power * 10f64.powf(spec.marker_level_db / 10.0)).sqrt();
    let marker =
        spec.marker_freqs[class] * (1.0 + spec.marker_jitter * rng.random_range(-1.0..=1.0));
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    for (n, v) in x.iter_mut().enumerate() {
        *v += amp * (std::f64::consts::TAU * marker * n as f64 / fs + phase).sin();
    }

    if spec.noise_floor > 0.0 {
        for v in &mut x {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += spec.noise_floor * z;
        }
    }
    let peak = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v /= peak);
    }
    x
}

fn add_spike(x: &mut [f64], fs: f64, onset: f64, freq: f64, amp: f64, spec: &SynthTaskSpec) {
    let first = (onset * fs).ceil() as usize;
    let last = ((onset + 6.0 * spec.spike_decay) * fs) as usize;
    for n in first..=last.min(x.len().saturating_sub(1)) {
        let dt = n as f64 / fs - onset;
        let shape: f64 = spec
            .harmonic_weights
            .iter()
            .enumerate()
            .map(|(h, w)| w * (std::f64::consts::TAU * (h + 1) as f64 * freq * dt).sin())
            .sum();
        x[n] += amp * shape * (-dt / spec.spike_decay).exp();
    }
}

/// Stratified split into (train, validation, test).
///
/// Each class is shuffled with its own seeded stream and cut by largest
/// remainder, so every per-class count is within one of its exact share.
/// Items keep their original relative order inside each split.
pub fn split_dataset(
    d: &SignalDataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(SignalDataset, SignalDataset, SignalDataset)> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Config(format!(
            "split ratios must be positive, got {r:?}"
        )));
    }
    if ((r[0] + r[1] + r[2]) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must sum to 1, got {r:?}"
        )));
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); d.num_classes()];
    for (i, item) in d.items().iter().enumerate() {
        by_class[item.label].push(i);
    }

    let mut assignment = vec![0usize; d.len()];
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        let counts = largest_remainder(members.len(), &r);
        if counts.contains(&0) {
            return Err(Error::Invalid(format!(
                "class {class} has {} items, too few for one item per split",
                members.len()
            )));
        }
        let mut rng = rng::stream(rng::derive_index(seed, "split", class as u64));
        shuffle(members, &mut rng);
        let mut cursor = 0;
        for (split, &count) in counts.iter().enumerate() {
            for &idx in &members[cursor..cursor + count] {
                assignment[idx] = split;
            }
            cursor += count;
        }
    }

    let mut parts: [Vec<LabeledSignal>; 3] = Default::default();
    for (item, &split) in d.items().iter().zip(&assignment) {
        parts[split].push(item.clone());
    }
    let [train, val, test] = parts;
    let make =
        |items, tag| SignalDataset::new(items, d.num_classes(), tag, d.class_names().to_vec());
    Ok((
        make(train, SplitTag::Train)?,
        make(val, SplitTag::Validation)?,
        make(test, SplitTag::Test)?,
    ))
}

fn largest_remainder(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    // Stable: ties go to the earlier split.
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa)
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

fn shuffle<T>(v: &mut [T], rng: &mut rng::Rng) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    id: String,
    label: String,
    path: String,
}

/// Read a `id,label,path` manifest; paths are relative to the manifest's directory.
///
/// Files ending in `.wav` are read as 16-bit mono PCM; anything else as the
/// text signal format (`rate=<hz>` then one amplitude per line).
pub fn read_manifest(path: impl AsRef<Path>) -> Result<SignalDataset> {
    let path = path.as_ref();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Ingest {
            location: path.display().to_string(),
            message: e.to_string(),
        })?;

    let headers = reader.headers().map_err(|e| Error::Ingest {
        location: path.display().to_string(),
        message: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != ["id", "label", "path"] {
        return Err(Error::Ingest {
            location: path.display().to_string(),
            message: format!(
                "expected header `id,label,path`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut label_index: HashMap<String, usize> = HashMap::new();
    let mut class_names = Vec::new();
    let mut items = Vec::new();
    for (row_no, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let location = format!("{} row {}", path.display(), row_no + 1);
        let row = row.map_err(|e| Error::Ingest {
            location: location.clone(),
            message: e.to_string(),
        })?;
        let signal_path = base.join(&row.path);
        let signal = if signal_path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
        {
            read_wav_mono16(&signal_path)?
        } else {
            read_signal_text(&signal_path)?
        };
        let next = label_index.len();
        let label = *label_index.entry(row.label.clone()).or_insert_with(|| {
            class_names.push(row.label.clone());
            next
        });
        items.push(LabeledSignal {
            id: row.id,
            label,
            signal,
        });
    }
    if items.is_empty() {
        return Err(Error::Ingest {
            location: path.display().to_string(),
            message: "manifest has no rows".into(),
        });
    }
    let k = class_names.len();
    SignalDataset::new(items, k, SplitTag::Test, class_names).map_err(|e| Error::Ingest {
        location: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Parse the text signal format.
pub fn read_signal_text(path: impl AsRef<Path>) -> Result<Signal> {
    let path = path.as_ref();
    let ingest = |line: usize, message: String| Error::Ingest {
        location: format!("{} line {line}", path.display()),
        message,
    };
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| ingest(1, "empty signal file".into()))?
        .map_err(|e| Error::io(path, e))?;
    let rate = parse_rate(header.trim())
        .ok_or_else(|| ingest(1, format!("expected `rate=<hz>`, got `{header}`")))?;
    if !(rate.is_finite() && rate > 0.0) {
        return Err(ingest(
            1,
            format!("sample rate must be positive, got {rate}"),
        ));
    }
    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if text.starts_with("rate=") {
            return Err(ingest(
                line_no,
                "inconsistent sample rate: second `rate=` line".into(),
            ));
        }
        let v: f64 = text
            .parse()
            .map_err(|_| ingest(line_no, format!("malformed amplitude `{text}`")))?;
        if !v.is_finite() {
            return Err(ingest(line_no, format!("non-finite sample `{text}`")));
        }
        samples.push(v);
    }
    if samples.is_empty() {
        return Err(ingest(1, "signal has no samples".into()));
    }
    Ok(Signal {
        samples,
        sample_rate: rate,
    })
}

fn parse_rate(header: &str) -> Option<f64> {
    header.strip_prefix("rate=")?.trim().parse().ok()
}

/// Shortest decimal that round-trips the value rounded to 9 significant digits.
pub fn format_amplitude(v: f64) -> String {
    let rounded: f64 = format!("{v:.8e}").parse().unwrap_or(v);
    format!("{rounded}")
}

pub fn write_signal_text(path: impl AsRef<Path>, signal: &Signal) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(signal.len() * 12 + 16);
    out.push_str(&format!("rate={}\n", signal.sample_rate()));
    for v in signal.samples() {
        out.push_str(&format_amplitude(*v));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Write `dir/manifest.csv` plus one text file per signal under `dir/signals/`.
pub fn write_manifest(d: &SignalDataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let signals = dir.join("signals");
    fs::create_dir_all(&signals).map_err(|e| Error::io(&signals, e))?;
    let manifest = dir.join("manifest.csv");
    let mut writer = csv::Writer::from_path(&manifest).map_err(|e| Error::Ingest {
        location: manifest.display().to_string(),
        message: e.to_string(),
    })?;
    let csv_err = |e: csv::Error| Error::Ingest {
        location: manifest.display().to_string(),
        message: e.to_string(),
    };
    writer
        .write_record(["id", "label", "path"])
        .map_err(csv_err)?;
    for (i, item) in d.items().iter().enumerate() {
        let file_name = format!("{i:05}_{}.txt", sanitize(&item.id));
        write_signal_text(signals.join(&file_name), &item.signal)?;
        let rel = format!("signals/{file_name}");
        writer
            .write_record([
                item.id.as_str(),
                d.class_names()[item.label].as_str(),
                rel.as_str(),
            ])
            .map_err(csv_err)?;
    }
    writer.flush().map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Read a RIFF/WAVE file holding 16-bit mono PCM; amplitudes are `raw / 32768`.
pub fn read_wav_mono16(path: impl AsRef<Path>) -> Result<Signal> {
    let path = path.as_ref();
    let unsupported = |message: String| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        message,
    };
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => unsupported(other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(unsupported(format!(
            "{} channels, only mono is supported",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(unsupported(format!(
            "{}-bit {:?} samples, only 16-bit PCM is supported",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| unsupported(e.to_string()))?;
    Signal::new(samples, spec.sample_rate as f64).map_err(|e| unsupported(e.to_string()))
}

/// Write 16-bit mono PCM, saturating amplitudes to `[-1, 32767/32768]`.
pub fn write_wav_mono16(path: impl AsRef<Path>, signal: &Signal) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate().round() as u32,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::UnsupportedFormat {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for v in signal.samples() {
        let q = (v * 32768.0)
            .round()
            .clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        w.write_sample(q).map_err(to_err)?;
    }
    w.finalize().map_err(to_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n_per_class: usize, k: usize) -> SignalDataset {
        let items = (0..n_per_class * k)
            .map(|i| LabeledSignal {
                id: format!("s{i}"),
                label: i % k,
                signal: Signal::new(vec![i as f64; 4], 100.0).unwrap(),
            })
            .collect();
        let names = (0..k).map(|c| c.to_string()).collect();
        SignalDataset::new(items, k, SplitTag::Train, names).unwrap()
    }

    #[test]
    fn signal_invariants() {
        assert!(Signal::new(vec![], 1.0).is_err());
        assert!(Signal::new(vec![1.0], 0.0).is_err());
        assert!(Signal::new(vec![f64::NAN], 1.0).is_err());
        assert!(Signal::new(vec![0.5], 1.0).is_ok());
    }

    #[test]
    fn dataset_rejects_bad_labels_and_duplicate_ids() {
        let s = Signal::new(vec![0.0], 1.0).unwrap();
        let a = LabeledSignal {
            id: "a".into(),
            label: 2,
            signal: s.clone(),
        };
        assert!(
            SignalDataset::new(vec![a], 2, SplitTag::Train, vec!["x".into(), "y".into()]).is_err()
        );
        let b = LabeledSignal {
            id: "a".into(),
            label: 0,
            signal: s.clone(),
        };
        let c = LabeledSignal {
            id: "a".into(),
            label: 1,
            signal: s,
        };
        assert!(
            SignalDataset::new(vec![b, c], 2, SplitTag::Train, vec!["x".into(), "y".into()])
                .is_err()
        );
    }

    #[test]
    fn generate_requires_items() {
        let spec = SynthTaskSpec {
            num_classes: 2,
            ..Default::default()
        };
        let err = generate_synthetic_dataset(&spec, 0).unwrap_err();
        assert!(err.to_string().contains("n_per_class must be ≥ 1"));
    }

    #[test]
    fn generate_is_deterministic_and_normalized() {
        let spec = SynthTaskSpec {
            seed: 3,
            ..Default::default()
        };
        let a = generate_synthetic_dataset(&spec, 10).unwrap();
        let b = generate_synthetic_dataset(&spec, 10).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);
        assert_eq!(a.class_counts(), vec![10, 10, 10]);
        for item in a.items() {
            assert_eq!(item.signal.len(), 512);
            assert!((item.signal.peak() - 1.0).abs() < 1e-12);
        }
        let other = generate_synthetic_dataset(&SynthTaskSpec { seed: 4, ..spec }, 10).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn invalid_spec_rejected() {
        for spec in [
            SynthTaskSpec {
                num_classes: 4,
                ..Default::default()
            },
            SynthTaskSpec {
                signal_length: 32,
                ..Default::default()
            },
            SynthTaskSpec {
                noise_floor: -1.0,
                ..Default::default()
            },
            SynthTaskSpec {
                marker_freqs: vec![10.0, 200.0, 30.0],
                ..Default::default()
            },
        ] {
            assert!(matches!(
                generate_synthetic_dataset(&spec, 1),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn split_100_items() {
        let d = toy(100, 1);
        let (tr, va, te) = split_dataset(&d, (0.7, 0.1, 0.2), 1).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (70, 10, 20));
    }

    #[test]
    fn split_is_stratified() {
        let d = toy(50, 2);
        let (tr, va, te) = split_dataset(&d, (0.7, 0.1, 0.2), 1).unwrap();
        assert_eq!(tr.class_counts(), vec![35, 35]);
        assert_eq!(va.class_counts(), vec![5, 5]);
        assert_eq!(te.class_counts(), vec![10, 10]);
        assert_eq!(tr.split_tag(), SplitTag::Train);
        assert_eq!(te.split_tag(), SplitTag::Test);
    }

    #[test]
    fn split_rejects_zero_ratio_and_tiny_classes() {
        let d = toy(10, 1);
        assert!(split_dataset(&d, (1.0, 0.0, 0.0), 0).is_err());
        assert!(split_dataset(&d, (0.5, 0.2, 0.2), 0).is_err());
        let tiny = toy(2, 2);
        assert!(split_dataset(&tiny, (0.7, 0.1, 0.2), 0).is_err());
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_seeded() {
        let d = toy(37, 3);
        let (a, b, c) = split_dataset(&d, (0.7, 0.1, 0.2), 9).unwrap();
        let mut ids: Vec<&str> = a
            .items()
            .iter()
            .chain(b.items())
            .chain(c.items())
            .map(|i| i.id.as_str())
            .collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), d.len());
        let again = split_dataset(&d, (0.7, 0.1, 0.2), 9).unwrap();
        assert_eq!(again.0, a);
        let other = split_dataset(&d, (0.7, 0.1, 0.2), 10).unwrap();
        assert_ne!(other.0, a);
    }

    #[test]
    fn amplitude_format_keeps_nine_digits() {
        assert_eq!(format_amplitude(0.5), "0.5");
        assert_eq!(format_amplitude(0.123456789123), "0.123456789");
        assert_eq!(format_amplitude(-1.0), "-1");
        let v: f64 = format_amplitude(1.0 / 3.0).parse().unwrap();
        assert_eq!(format_amplitude(v), format_amplitude(1.0 / 3.0));
    }
}
