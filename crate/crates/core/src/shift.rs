//! Controlled perturbations of test signals at severity degrees 0–5.
//!
//! Power is the mean of squared amplitudes and SNR is
//! `10·log10(P_signal / P_noise)`, so every target is length-invariant.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::signal::{LabeledSignal, Signal, SignalDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    GaussianNoise,
    BackgroundNoise,
    AmplitudeDistortion,
    SegmentMissing,
    SamplingRateMismatch,
}

impl ShiftKind {
    pub const ALL: [ShiftKind; 5] = [
        ShiftKind::GaussianNoise,
        ShiftKind::BackgroundNoise,
        ShiftKind::AmplitudeDistortion,
        ShiftKind::SegmentMissing,
        ShiftKind::SamplingRateMismatch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ShiftKind::GaussianNoise => "gaussian_noise",
            ShiftKind::BackgroundNoise => "background_noise",
            ShiftKind::AmplitudeDistortion => "amplitude_distortion",
            ShiftKind::SegmentMissing => "segment_missing",
            ShiftKind::SamplingRateMismatch => "sampling_rate_mismatch",
        }
    }
}

impl fmt::Display for ShiftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShiftKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShiftKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown shift kind `{s}` (expected one of {})",
                    ShiftKind::ALL.map(|k| k.as_str()).join(", ")
                ))
            })
    }
}

/// Shift severity, 0 (unmodified) through 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Degree(u8);

impl Degree {
    pub const MAX: u8 = 5;

    pub fn new(d: u8) -> Result<Self> {
        if d > Self::MAX {
            return Err(Error::Config(format!("degree must be in 0..=5, got {d}")));
        }
        Ok(Degree(d))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = Degree> {
        (0..=Self::MAX).map(Degree)
    }
}

impl TryFrom<u8> for Degree {
    type Error = Error;
    fn try_from(d: u8) -> Result<Self> {
        Degree::new(d)
    }
}

impl From<Degree> for u8 {
    fn from(d: Degree) -> u8 {
        d.0
    }
}

impl fmt::Display for Degree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub kind: ShiftKind,
    pub degree: Degree,
    pub seed: u64,
}

/// Physical parameters for one degree. Fields not used by a kind are still
/// filled from the same degree row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedShiftParams {
    /// Target SNR in dB; `+inf` at degree 0.
    pub snr_db: f64,
    /// Clip threshold as a fraction of the peak amplitude.
    pub clip_fraction: f64,
    /// Fraction of samples zeroed.
    pub mask_fraction: f64,
    /// One sample in every `drop_stride` is removed; `None` keeps all.
    pub drop_stride: Option<usize>,
}

const SNR_DB: [f64; 6] = [f64::INFINITY, 50.0, 40.0, 30.0, 20.0, 10.0];
const CLIP_FRACTION: [f64; 6] = [1.0, 0.8, 0.6, 0.5, 0.2, 0.1];
const MASK_FRACTION: [f64; 6] = [0.0, 0.20, 0.35, 0.50, 0.65, 0.80];
const DROP_STRIDE: [Option<usize>; 6] = [None, Some(80), Some(50), Some(30), Some(20), Some(10)];

pub fn resolve(spec: &ShiftSpec) -> ResolvedShiftParams {
    let d = spec.degree.get() as usize;
    ResolvedShiftParams {
        snr_db: SNR_DB[d],
        clip_fraction: CLIP_FRACTION[d],
        mask_fraction: MASK_FRACTION[d],
        drop_stride: DROP_STRIDE[d],
    }
}

/// Noise std, background scale and the SNR actually realized by a mix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixCoefficients {
    pub sigma: f64,
    pub lambda: f64,
    pub achieved_snr_db: f64,
}

impl MixCoefficients {
    fn identity() -> Self {
        Self {
            sigma: 0.0,
            lambda: 0.0,
            achieved_snr_db: f64::INFINITY,
        }
    }
}

/// How Gaussian noise vectors are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaussianNoiseMode {
    /// i.i.d. normal draws rescaled so their mean power is exactly `sigma²`;
    /// the realized SNR equals the target.
    #[default]
    ExactPower,
    /// Plain i.i.d. `N(0, sigma²)` draws; realized SNR fluctuates by about
    /// `4.34·sqrt(2/l)` dB around the target.
    Iid,
}

/// Interference clips mixed in by [`mix_background`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundBank {
    pub clips: Vec<Signal>,
    pub seed: u64,
}

impl BackgroundBank {
    pub fn new(clips: Vec<Signal>, seed: u64) -> Self {
        Self { clips, seed }
    }

    /// Babble-like interference: a handful of slowly modulated random
    /// sinusoids plus low-passed white noise, peak-normalized.
    pub fn synthetic_babble(n_clips: usize, length: usize, sample_rate: f64, seed: u64) -> Self {
        let nyquist = sample_rate / 2.0;
        let clips = (0..n_clips)
            .map(|c| {
                let mut rng = rng::stream(rng::derive_index(seed, "babble", c as u64));
                let n_voices = 12;
                let voices: Vec<(f64, f64, f64, f64)> = (0..n_voices)
                    .map(|_| {
                        let f = rng.random_range(0.02 * nyquist..0.9 * nyquist);
                        let phase = rng.random_range(0.0..std::f64::consts::TAU);
                        let mod_f = rng.random_range(0.5..4.0);
                        let amp = rng.random_range(0.3..1.0);
                        (f, phase, mod_f, amp)
                    })
                    .collect();
                let mut lp = 0.0;
                let mut x: Vec<f64> = (0..length.max(1))
                    .map(|n| {
                        let t = n as f64 / sample_rate;
                        let tonal: f64 = voices
                            .iter()
                            .map(|(f, ph, mf, a)| {
                                let env = 0.5 + 0.5 * (std::f64::consts::TAU * mf * t).sin();
                                a * env * (std::f64::consts::TAU * f * t + ph).sin()
                            })
                            .sum();
                        let z: f64 = StandardNormal.sample(&mut rng);
                        lp = 0.8 * lp + 0.2 * z;
                        tonal / n_voices as f64 + 0.5 * lp
                    })
                    .collect();
                let peak = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                if peak > 0.0 {
                    x.iter_mut().for_each(|v| *v /= peak);
                }
                Signal::new(x, sample_rate).expect("babble samples are finite and nonempty")
            })
            .collect();
        Self { clips, seed }
    }
}

/// Mean power `(1/l)·Σ s_i²`.
pub fn signal_power(s: &Signal) -> f64 {
    power(s.samples())
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

fn snr_db(p_signal: f64, p_noise: f64) -> f64 {
    10.0 * (p_signal / p_noise).log10()
}

fn check_snr(snr: f64) -> Result<()> {
    if snr.is_nan() || snr == f64::NEG_INFINITY {
        return Err(Error::Invalid(format!(
            "target SNR must be finite or +inf, got {snr}"
        )));
    }
    Ok(())
}

/// Add Gaussian noise at `snr_db`; `+inf` returns the input unchanged.
pub fn mix_gaussian(
    s: &Signal,
    snr_db_target: f64,
    seed: u64,
) -> Result<(Signal, MixCoefficients)> {
    mix_gaussian_with(s, snr_db_target, seed, GaussianNoiseMode::default())
}

pub fn mix_gaussian_with(
    s: &Signal,
    snr_db_target: f64,
    seed: u64,
    mode: GaussianNoiseMode,
) -> Result<(Signal, MixCoefficients)> {
    check_snr(snr_db_target)?;
    if snr_db_target == f64::INFINITY {
        return Ok((s.clone(), MixCoefficients::identity()));
    }
    let p_signal = signal_power(s);
    if p_signal <= 0.0 {
        return Err(Error::ZeroPower);
    }
    let sigma = (p_signal / 10f64.powf(snr_db_target / 10.0)).sqrt();
    let mut rng = rng::stream(seed);
    let mut noise: Vec<f64> = (0..s.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let scale = match mode {
        GaussianNoiseMode::Iid => sigma,
        GaussianNoiseMode::ExactPower => {
            let p = power(&noise);
            // A zero draw vector cannot occur for l >= 1 in practice.
            if p > 0.0 {
                sigma / p.sqrt()
            } else {
                sigma
            }
        }
    };
    noise.iter_mut().for_each(|v| *v *= scale);
    let achieved_snr_db = snr_db(p_signal, power(&noise));
    let out: Vec<f64> = s.samples().iter().zip(&noise).map(|(a, n)| a + n).collect();
    Ok((
        Signal::new(out, s.sample_rate())?,
        MixCoefficients {
            sigma,
            lambda: 0.0,
            achieved_snr_db,
        },
    ))
}

/// The interference segment `mix_background` would add before scaling: the
/// seeded clip, cyclically tiled from a seeded offset to length `l`.
pub fn background_segment(bank: &BackgroundBank, len: usize, seed: u64) -> Result<Vec<f64>> {
    if bank.clips.is_empty() {
        return Err(Error::Invalid("background bank is empty".into()));
    }
    let mut rng = rng::stream(seed);
    let clip = &bank.clips[rng.random_range(0..bank.clips.len())];
    let c = clip.samples();
    let offset = rng.random_range(0..c.len());
    Ok((0..len).map(|i| c[(offset + i) % c.len()]).collect())
}

/// Add a scaled background clip so the mix hits `snr_db` exactly.
pub fn mix_background(
    s: &Signal,
    snr_db_target: f64,
    bank: &BackgroundBank,
    seed: u64,
) -> Result<(Signal, MixCoefficients)> {
    check_snr(snr_db_target)?;
    if snr_db_target == f64::INFINITY {
        return Ok((s.clone(), MixCoefficients::identity()));
    }
    let p_signal = signal_power(s);
    if p_signal <= 0.0 {
        return Err(Error::ZeroPower);
    }
    let segment = background_segment(bank, s.len(), seed)?;
    let p_clip = power(&segment);
    if p_clip <= 0.0 {
        return Err(Error::Invalid(
            "selected background clip has zero power".into(),
        ));
    }
    let lambda = (p_signal / (10f64.powf(snr_db_target / 10.0) * p_clip)).sqrt();
    let added: Vec<f64> = segment.iter().map(|v| lambda * v).collect();
    let achieved_snr_db = snr_db(p_signal, power(&added));
    let out: Vec<f64> = s.samples().iter().zip(&added).map(|(a, n)| a + n).collect();
    Ok((
        Signal::new(out, s.sample_rate())?,
        MixCoefficients {
            sigma: 0.0,
            lambda,
            achieved_snr_db,
        },
    ))
}

/// Clamp every sample to `±clip_fraction·max|s|`.
pub fn clip_amplitude(s: &Signal, clip_fraction: f64) -> Result<Signal> {
    if !(clip_fraction > 0.0 && clip_fraction <= 1.0) {
        return Err(Error::Invalid(format!(
            "clip fraction must be in (0, 1], got {clip_fraction}"
        )));
    }
    let thr = clip_fraction * s.peak();
    let out = s.samples().iter().map(|v| v.clamp(-thr, thr)).collect();
    Signal::new(out, s.sample_rate())
}

/// Zero exactly `round(mask_fraction·l)` samples in up to `n_blocks`
/// non-overlapping contiguous blocks of near-equal length at seeded positions.
pub fn mask_segments(s: &Signal, mask_fraction: f64, n_blocks: usize, seed: u64) -> Result<Signal> {
    if !(0.0..1.0).contains(&mask_fraction) {
        return Err(Error::Invalid(format!(
            "mask fraction must be in [0, 1), got {mask_fraction}"
        )));
    }
    if n_blocks == 0 {
        return Err(Error::Invalid("n_blocks must be >= 1".into()));
    }
    let l = s.len();
    let zeros = (mask_fraction * l as f64).round() as usize;
    if zeros > l {
        return Err(Error::Invalid(format!(
            "cannot mask {zeros} of {l} samples"
        )));
    }
    let mut out = s.samples().to_vec();
    if zeros == 0 {
        return Signal::new(out, s.sample_rate());
    }

    let blocks = n_blocks.min(zeros);
    let lengths: Vec<usize> = (0..blocks)
        .map(|b| zeros / blocks + usize::from(b < zeros % blocks))
        .collect();
    // Distribute the unmasked samples over the blocks+1 gaps (stars and bars).
    let free = l - zeros;
    let mut rng = rng::stream(seed);
    let mut cuts: Vec<usize> = (0..blocks).map(|_| rng.random_range(0..=free)).collect();
    cuts.sort_unstable();

    let mut covered = 0;
    for (len, cut) in lengths.iter().zip(&cuts) {
        let start = cut + covered;
        out[start..start + len].iter_mut().for_each(|v| *v = 0.0);
        covered += len;
    }
    Signal::new(out, s.sample_rate())
}

/// Remove the samples at indices `i` with `(i+1) % stride == 0`.
///
/// The sample-rate metadata is scaled by `(stride-1)/stride`.
pub fn drop_samples(s: &Signal, drop_stride: Option<usize>) -> Result<Signal> {
    let Some(stride) = drop_stride else {
        return Ok(s.clone());
    };
    if stride < 2 {
        return Err(Error::Invalid(format!(
            "drop stride must be >= 2, got {stride}"
        )));
    }
    let out: Vec<f64> = s
        .samples()
        .iter()
        .enumerate()
        .filter(|(i, _)| (i + 1) % stride != 0)
        .map(|(_, v)| *v)
        .collect();
    let rate = s.sample_rate() * (stride - 1) as f64 / stride as f64;
    Signal::new(out, rate)
}

/// Everything besides the [`ShiftSpec`] that a dataset shift needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftContext {
    pub background: BackgroundBank,
    pub mask_blocks: usize,
    /// Peak-normalize each perturbed signal back to 1.
    pub renormalize: bool,
    pub gaussian_mode: GaussianNoiseMode,
}

impl Default for ShiftContext {
    fn default() -> Self {
        Self {
            background: BackgroundBank::synthetic_babble(8, 2048, 250.0, 0xbab1e),
            mask_blocks: 5,
            renormalize: false,
            gaussian_mode: GaussianNoiseMode::default(),
        }
    }
}

/// Perturb one signal; `seed` is the item's own substream.
pub fn shift_signal(s: &Signal, spec: &ShiftSpec, ctx: &ShiftContext, seed: u64) -> Result<Signal> {
    if spec.degree.get() == 0 {
        return Ok(s.clone());
    }
    let p = resolve(spec);
    let out = match spec.kind {
        ShiftKind::GaussianNoise => mix_gaussian_with(s, p.snr_db, seed, ctx.gaussian_mode)?.0,
        ShiftKind::BackgroundNoise => mix_background(s, p.snr_db, &ctx.background, seed)?.0,
        ShiftKind::AmplitudeDistortion => clip_amplitude(s, p.clip_fraction)?,
        ShiftKind::SegmentMissing => mask_segments(s, p.mask_fraction, ctx.mask_blocks, seed)?,
        ShiftKind::SamplingRateMismatch => drop_samples(s, p.drop_stride)?,
    };
    if ctx.renormalize {
        let peak = out.peak();
        if peak > 0.0 {
            let rate = out.sample_rate();
            return Signal::new(
                out.into_samples().into_iter().map(|v| v / peak).collect(),
                rate,
            );
        }
    }
    Ok(out)
}

/// Perturb every item of `d`, each from its own `(spec.seed, id)` substream.
pub fn apply_shift(
    d: &SignalDataset,
    spec: &ShiftSpec,
    ctx: &ShiftContext,
) -> Result<SignalDataset> {
    if spec.degree.get() == 0 {
        return Ok(d.clone());
    }
    let items = crate::par::try_map(d.items(), |_, item| {
        let seed = rng::derive_str(spec.seed, "shift", &item.id);
        let signal = shift_signal(&item.signal, spec, ctx, seed)
            .map_err(|e| Error::for_item(&item.id, e))?;
        Ok(LabeledSignal {
            id: item.id.clone(),
            label: item.label,
            signal,
        })
    })?;
    d.with_items(items)
}
