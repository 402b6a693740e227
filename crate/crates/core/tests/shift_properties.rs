//! Invariants of the five perturbations over random signals.

use proptest::prelude::*;
use shiftbench::shift::{
    apply_shift, clip_amplitude, drop_samples, mask_segments, mix_background, mix_gaussian,
    shift_signal, signal_power, BackgroundBank, Degree, ShiftContext, ShiftKind, ShiftSpec,
};
use shiftbench::signal::{generate_synthetic_dataset, Signal, SynthTaskSpec};

/// Signals with no exact zeros so masked samples can be counted.
fn signal(max_len: usize) -> impl Strategy<Value = Signal> {
    prop::collection::vec(prop_oneof![0.01f64..2.0, -2.0f64..-0.01], 1..=max_len)
        .prop_map(|v| Signal::new(v, 250.0).unwrap())
}

fn snr_db(clean: &Signal, noisy: &Signal) -> f64 {
    let noise: Vec<f64> = noisy
        .samples()
        .iter()
        .zip(clean.samples())
        .map(|(a, b)| a - b)
        .collect();
    let pn = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
    10.0 * (signal_power(clean) / pn).log10()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn clip_is_idempotent_and_non_expansive(s in signal(300), frac in 0.05f64..=1.0) {
        let once = clip_amplitude(&s, frac).unwrap();
        let thr = frac * s.peak();
        for (a, b) in once.samples().iter().zip(s.samples()) {
            prop_assert!(a.abs() <= b.abs());
            prop_assert!(a.abs() <= thr);
        }
        let twice = clip_amplitude(&once, 1.0).unwrap();
        prop_assert_eq!(twice.samples(), once.samples());
        let again = once.samples().iter().map(|v| v.clamp(-thr, thr)).collect::<Vec<_>>();
        prop_assert_eq!(again.as_slice(), once.samples());
    }

    #[test]
    fn mask_zeroes_exact_count(s in signal(400), frac in 0.0f64..0.95, blocks in 1usize..8, seed in any::<u64>()) {
        let out = mask_segments(&s, frac, blocks, seed).unwrap();
        let expected = (frac * s.len() as f64).round() as usize;
        let zeros = out.samples().iter().filter(|v| **v == 0.0).count();
        prop_assert_eq!(zeros, expected);
        for (a, b) in out.samples().iter().zip(s.samples()) {
            prop_assert!(*a == 0.0 || a == b);
        }
        // Zero runs never exceed the requested number of blocks.
        let runs = out.samples().windows(2).filter(|w| w[0] != 0.0 && w[1] == 0.0).count()
            + usize::from(out.samples()[0] == 0.0);
        prop_assert!(runs <= blocks);
    }

    #[test]
    fn drop_length_and_kept_samples(s in signal(500), stride in 2usize..100) {
        let out = drop_samples(&s, Some(stride)).unwrap();
        let l = s.len();
        prop_assert_eq!(out.len(), l - l / stride);
        let kept: Vec<f64> = (0..l).filter(|i| (i + 1) % stride != 0).map(|i| s.samples()[i]).collect();
        prop_assert_eq!(out.samples(), kept.as_slice());
    }

    #[test]
    fn gaussian_hits_target_snr(s in signal(400), snr in 5.0f64..60.0, seed in any::<u64>()) {
        let (out, coeffs) = mix_gaussian(&s, snr, seed).unwrap();
        prop_assert!((snr_db(&s, &out) - snr).abs() < 1e-6);
        prop_assert!((coeffs.achieved_snr_db - snr).abs() < 1e-6);
    }

    #[test]
    fn background_hits_target_snr(s in signal(400), snr in 5.0f64..60.0, seed in any::<u64>()) {
        let bank = BackgroundBank::synthetic_babble(4, 256, 250.0, 3);
        let (out, coeffs) = mix_background(&s, snr, &bank, seed).unwrap();
        prop_assert!((snr_db(&s, &out) - snr).abs() < 1e-6);
        prop_assert!(coeffs.lambda > 0.0);
    }

    #[test]
    fn degree_zero_is_identity(s in signal(200), seed in any::<u64>()) {
        let ctx = ShiftContext::default();
        for kind in ShiftKind::ALL {
            let spec = ShiftSpec { kind, degree: Degree::new(0).unwrap(), seed };
            prop_assert_eq!(&shift_signal(&s, &spec, &ctx, seed).unwrap(), &s);
        }
    }
}

#[test]
fn dataset_shift_is_deterministic_and_per_item() {
    let data = generate_synthetic_dataset(&SynthTaskSpec::default(), 6).unwrap();
    let ctx = ShiftContext::default();
    for kind in ShiftKind::ALL {
        for degree in Degree::all() {
            let spec = ShiftSpec {
                kind,
                degree,
                seed: 11,
            };
            let a = apply_shift(&data, &spec, &ctx).unwrap();
            let b = apply_shift(&data, &spec, &ctx).unwrap();
            assert_eq!(a, b, "{kind} degree {degree}");
            assert_eq!(a.len(), data.len());
            assert_eq!(a.labels(), data.labels());

            // An item's perturbation does not depend on which other items
            // are in the dataset.
            let subset = data.with_items(data.items()[2..5].to_vec()).unwrap();
            let c = apply_shift(&subset, &spec, &ctx).unwrap();
            assert_eq!(c.items(), &a.items()[2..5], "{kind} degree {degree}");
        }
    }
}

#[test]
fn stronger_degrees_perturb_more() {
    let data = generate_synthetic_dataset(&SynthTaskSpec::default(), 4).unwrap();
    let ctx = ShiftContext::default();
    let distortion = |kind: ShiftKind, d: u8| -> f64 {
        let spec = ShiftSpec {
            kind,
            degree: Degree::new(d).unwrap(),
            seed: 2,
        };
        let shifted = apply_shift(&data, &spec, &ctx).unwrap();
        data.items()
            .iter()
            .zip(shifted.items())
            .map(|(a, b)| {
                a.signal
                    .samples()
                    .iter()
                    .zip(b.signal.samples())
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
            })
            .sum()
    };
    for kind in [
        ShiftKind::GaussianNoise,
        ShiftKind::BackgroundNoise,
        ShiftKind::AmplitudeDistortion,
        ShiftKind::SegmentMissing,
    ] {
        let d: Vec<f64> = (0..=5).map(|k| distortion(kind, k)).collect();
        assert_eq!(d[0], 0.0);
        assert!(d.windows(2).all(|w| w[0] < w[1]), "{kind}: {d:?}");
    }
}

#[test]
fn invalid_parameters_are_rejected() {
    let s = Signal::new(vec![0.5; 10], 100.0).unwrap();
    assert!(clip_amplitude(&s, 0.0).is_err());
    assert!(clip_amplitude(&s, 1.5).is_err());
    assert!(mask_segments(&s, 1.0, 3, 0).is_err());
    assert!(mask_segments(&s, 0.5, 0, 0).is_err());
    assert!(drop_samples(&s, Some(1)).is_err());
    assert!(mix_gaussian(&s, f64::NAN, 0).is_err());
    let zero = Signal::new(vec![0.0; 10], 100.0).unwrap();
    assert!(mix_gaussian(&zero, 20.0, 0).is_err());
    assert!(mix_background(&s, 20.0, &BackgroundBank::new(Vec::new(), 0), 0).is_err());
}
