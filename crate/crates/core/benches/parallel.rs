//! Single-thread versus default-pool throughput of the data-parallel stages.
//! Built without the `parallel` feature, both variants run sequentially.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use shiftbench::bench::{run_benchmark, BenchmarkConfig};
use shiftbench::features::{FeatureConfig, Featurizer};
use shiftbench::neural::{Architecture, ModelParams};
use shiftbench::par;
use shiftbench::shift::{apply_shift, Degree, ShiftContext, ShiftKind, ShiftSpec};
use shiftbench::signal::{generate_synthetic_dataset, SynthTaskSpec};
use shiftbench::uq::predict_mcdropout;
use shiftbench::uq::Method;

const POOLS: [(&str, usize); 2] = [("sequential", 1), ("pool", 0)];

fn stages(c: &mut Criterion) {
    let data = generate_synthetic_dataset(&SynthTaskSpec::default(), 100).unwrap();
    let ctx = ShiftContext::default();
    let spec = ShiftSpec {
        kind: ShiftKind::BackgroundNoise,
        degree: Degree::new(5).unwrap(),
        seed: 1,
    };
    let featurizer = Featurizer::new(FeatureConfig::default()).unwrap();
    let features = featurizer.featurize_dataset(&data).unwrap();
    let model = ModelParams::init(&Architecture::dropout_mlp(features.dim, 3), 3, -5.0).unwrap();

    let mut group = c.benchmark_group("stages");
    for (name, threads) in POOLS {
        group.bench_function(BenchmarkId::new("apply_shift", name), |b| {
            b.iter(|| par::with_threads(threads, || apply_shift(&data, &spec, &ctx).unwrap()))
        });
        group.bench_function(BenchmarkId::new("featurize_dataset", name), |b| {
            b.iter(|| par::with_threads(threads, || featurizer.featurize_dataset(&data).unwrap()))
        });
        group.bench_function(BenchmarkId::new("predict_mcdropout", name), |b| {
            b.iter(|| {
                par::with_threads(threads, || {
                    predict_mcdropout(&model, &features.rows, 10, 5, false).unwrap()
                })
            })
        });
    }
    group.finish();
}

fn matrix(c: &mut Criterion) {
    let cfg = BenchmarkConfig {
        n_per_class: 40,
        methods: vec![Method::Vanilla, Method::McDropout, Method::Ensemble],
        shift_kinds: vec![ShiftKind::GaussianNoise, ShiftKind::SegmentMissing],
        train: shiftbench::neural::TrainConfig {
            epochs: 5,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut group = c.benchmark_group("matrix");
    group.sample_size(10);
    for (name, threads) in POOLS {
        group.bench_function(BenchmarkId::new("run_benchmark", name), |b| {
            b.iter(|| par::with_threads(threads, || run_benchmark(&cfg).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, stages, matrix);
criterion_main!(benches);
