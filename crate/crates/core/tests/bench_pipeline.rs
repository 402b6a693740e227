//! End-to-end benchmark runs on small configurations.

use std::collections::BTreeSet;
use std::fs;
use std::sync::OnceLock;

use shiftbench::bench::{
    export_csv, read_metrics_csv, render_report, run_benchmark, BenchmarkConfig, ModelSuite,
    RunMatrixResult,
};
use shiftbench::neural::TrainConfig;
use shiftbench::shift::ShiftKind;
use shiftbench::signal::split_dataset;
use shiftbench::uq::Method;

fn small(k: usize) -> BenchmarkConfig {
    let mut cfg = BenchmarkConfig {
        n_per_class: 20,
        hidden: vec![16],
        shift_kinds: vec![
            ShiftKind::GaussianNoise,
            ShiftKind::SegmentMissing,
            ShiftKind::SamplingRateMismatch,
        ],
        train: TrainConfig {
            epochs: 8,
            ..Default::default()
        },
        seed: 3,
        ..Default::default()
    };
    cfg.synthetic.num_classes = k;
    cfg.synthetic.marker_freqs.truncate(k);
    cfg.uq.samples = 4;
    cfg
}

fn three_class() -> &'static RunMatrixResult {
    static RESULT: OnceLock<RunMatrixResult> = OnceLock::new();
    RESULT.get_or_init(|| run_benchmark(&small(3)).unwrap())
}

#[test]
fn matrix_has_every_cell() {
    let r = three_class();
    assert!(r.failures.is_empty(), "{:?}", r.failures);
    assert_eq!(r.cells.len(), 5 * 3 * 6);
    let keys: BTreeSet<_> = r
        .reports()
        .map(|m| (m.method.clone(), m.shift_kind.clone(), m.degree))
        .collect();
    assert_eq!(keys.len(), 90);
    for m in r.reports() {
        assert_eq!(m.n_samples, r.provenance.split_sizes.test);
        assert!((0.0..=1.0).contains(&m.accuracy));
        assert!((0.0..=1.0).contains(&m.brier));
        assert!((0.0..=1.0).contains(&m.ece));
        assert!(m.mean_uncertainty >= 0.0 && m.mean_uncertainty <= 3f64.ln() + 1e-12);
        assert!(m.tpr.is_none() && m.tnr.is_none());
    }
    assert_eq!(
        r.provenance.split_sizes.train
            + r.provenance.split_sizes.validation
            + r.provenance.split_sizes.test,
        60
    );
}

#[test]
fn degree_zero_is_shared_across_kinds() {
    let r = three_class();
    for method in Method::ALL {
        let zero: Vec<_> = r
            .reports()
            .filter(|m| m.method == method.as_str() && m.degree == 0)
            .collect();
        assert_eq!(zero.len(), 3);
        for m in &zero[1..] {
            assert_eq!(
                (m.accuracy, m.brier, m.ece, m.mean_uncertainty),
                (
                    zero[0].accuracy,
                    zero[0].brier,
                    zero[0].ece,
                    zero[0].mean_uncertainty
                ),
                "{method}"
            );
        }
    }
}

#[test]
fn runs_are_deterministic() {
    let again = run_benchmark(&small(3)).unwrap();
    let a: Vec<_> = three_class().reports().cloned().collect();
    let b: Vec<_> = again.reports().cloned().collect();
    assert_eq!(a, b);
    assert_eq!(three_class().provenance, again.provenance);
}

#[test]
fn export_and_report_files() {
    let r = three_class();
    let dir = tempfile::tempdir().unwrap();
    let written = export_csv(r, dir.path()).unwrap();
    let names: BTreeSet<String> = written
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    for f in [
        "metrics.csv",
        "reliability.csv",
        "selective_prediction.csv",
        "shift_detection.csv",
        "entropy_histogram.csv",
        "provenance.json",
    ] {
        assert!(names.contains(f), "{f}");
    }
    assert!(!names.contains("tpr_tnr.csv"));
    assert!(!names.contains("failures.csv"));

    let rows = |f: &str| {
        fs::read_to_string(dir.path().join(f))
            .unwrap()
            .lines()
            .count()
            - 1
    };
    let cfg = small(3);
    assert_eq!(rows("metrics.csv"), 90);
    assert_eq!(rows("reliability.csv"), 90 * cfg.ece_buckets);
    assert_eq!(rows("selective_prediction.csv"), 90 * cfg.threshold_points);
    assert_eq!(rows("shift_detection.csv"), 75 * cfg.threshold_points);
    assert_eq!(rows("entropy_histogram.csv"), 90 * cfg.histogram_bins);

    let back = read_metrics_csv(dir.path().join("metrics.csv")).unwrap();
    let orig: Vec<_> = r.reports().cloned().collect();
    assert_eq!(back, orig);

    let prov: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("provenance.json")).unwrap())
            .unwrap();
    assert_eq!(prov["seed"], 3);
    assert_eq!(prov["config_hash"].as_str().unwrap().len(), 64);

    let figures = render_report(dir.path(), dir.path().join("figures")).unwrap();
    assert!(!figures.is_empty());
    let mut svgs = 0;
    for f in &figures {
        if f.extension().is_some_and(|e| e == "svg") {
            let text = fs::read_to_string(f).unwrap();
            let doc = roxmltree::Document::parse(&text)
                .unwrap_or_else(|e| panic!("{}: {e}", f.display()));
            assert_eq!(doc.root_element().tag_name().name(), "svg");
            svgs += 1;
        }
    }
    // Four trend metrics for each of the three kinds at least.
    assert!(svgs >= 12, "{svgs}");
    assert!(dir
        .path()
        .join("figures/trends/gaussian_noise_accuracy.svg")
        .exists());
}

#[test]
fn binary_task_reports_tpr_tnr() {
    let mut cfg = small(2);
    cfg.methods = vec![Method::Vanilla, Method::McDropout];
    cfg.shift_kinds = vec![ShiftKind::AmplitudeDistortion];
    cfg.degrees = vec![0, 5];
    cfg.ece_buckets = 4;
    let r = run_benchmark(&cfg).unwrap();
    assert_eq!(r.cells.len(), 4);
    for m in r.reports() {
        let (tpr, tnr) = (m.tpr.unwrap(), m.tnr.unwrap());
        assert!((0.0..=1.0).contains(&tpr) && (0.0..=1.0).contains(&tnr));
    }
    let dir = tempfile::tempdir().unwrap();
    export_csv(&r, dir.path()).unwrap();
    let tpr = fs::read_to_string(dir.path().join("tpr_tnr.csv")).unwrap();
    assert_eq!(tpr.lines().count(), 5);
}

#[test]
fn suite_save_load_reproduces_predictions() {
    let cfg = small(3);
    let data = cfg.load_dataset().unwrap();
    let (train, val, test) = split_dataset(&data, cfg.split, cfg.split_seed()).unwrap();
    let suite = ModelSuite::fit(&train, &val, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("suite.json");
    suite.save(&path).unwrap();
    let back = ModelSuite::load(&path).unwrap();
    assert_eq!(back, suite);
    let x = back.prepare(&test).unwrap();
    for method in Method::ALL {
        let seed = cfg.prediction_seed(method);
        assert_eq!(
            back.predict(method, &x.rows, &cfg.uq, seed).unwrap(),
            suite.predict(method, &x.rows, &cfg.uq, seed).unwrap(),
            "{method}"
        );
    }
    fs::write(&path, "{\"format\":\"something-else\",\"version\":1}").unwrap();
    assert!(ModelSuite::load(&path).is_err());
}

#[test]
fn missing_family_fails_only_its_method() {
    let mut cfg = small(3);
    cfg.methods = vec![Method::Vanilla];
    let data = cfg.load_dataset().unwrap();
    let (train, val, _) = split_dataset(&data, cfg.split, cfg.split_seed()).unwrap();
    let suite = ModelSuite::fit(&train, &val, &cfg).unwrap();
    assert!(suite.families.ensemble.is_empty());
    assert!(suite.families.variational.is_none());
    let x = suite.prepare(&val).unwrap();
    assert!(suite
        .predict(Method::Ensemble, &x.rows, &cfg.uq, 0)
        .is_err());
    assert!(suite
        .predict(Method::Bayesian, &x.rows, &cfg.uq, 0)
        .is_err());
    assert!(suite.predict(Method::Scaling, &x.rows, &cfg.uq, 0).is_err());
    assert!(suite.predict(Method::Vanilla, &x.rows, &cfg.uq, 0).is_ok());
}
