//! Featurizer output against a direct DFT and hand-built aggregation.

use proptest::prelude::*;
use shiftbench::features::{Aggregation, FeatureConfig, Featurizer};
use shiftbench::signal::Signal;

fn dft_magnitude(frame: &[f64], k: usize) -> f64 {
    let n = frame.len() as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (t, x) in frame.iter().enumerate() {
        let a = std::f64::consts::TAU * (k * t) as f64 / n;
        re += x * a.cos();
        im -= x * a.sin();
    }
    re.hypot(im)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spectrum_matches_direct_dft(frame in prop::collection::vec(-1.0f64..1.0, 64)) {
        let f = Featurizer::new(FeatureConfig { frame_length: 64, hop_length: 32, n_bins: 16, ..Default::default() }).unwrap();
        let spec = f.full_spectrum(&frame).unwrap();
        for (k, m) in spec.iter().enumerate() {
            prop_assert!((m - dft_magnitude(&frame, k)).abs() < 1e-9);
        }
    }

    #[test]
    fn features_match_naive_aggregation(x in prop::collection::vec(-1.0f64..1.0, 64..300)) {
        let cfg = FeatureConfig { frame_length: 32, hop_length: 16, n_bins: 8, aggregation: Aggregation::MeanStd, log_offset: 1e-6 };
        let got = Featurizer::new(cfg.clone()).unwrap().featurize(&Signal::new(x.clone(), 100.0).unwrap()).unwrap();
        let starts: Vec<usize> = (0..).map(|f| f * 16).take_while(|s| s + 32 <= x.len()).collect();
        prop_assert_eq!(got.len(), 16);
        for k in 0..8 {
            let logs: Vec<f64> = starts.iter().map(|s| (dft_magnitude(&x[*s..s + 32], k) + 1e-6).ln()).collect();
            let mean = logs.iter().sum::<f64>() / logs.len() as f64;
            let var = logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / logs.len() as f64;
            prop_assert!((got[k] - mean).abs() < 1e-8, "mean bin {}", k);
            prop_assert!((got[8 + k] - var.sqrt()).abs() < 1e-8, "std bin {}", k);
        }
    }
}
