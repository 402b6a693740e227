//! `shiftbench` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shiftbench::bench::{self, BenchmarkConfig, ModelSuite};
use shiftbench::metrics::{self, MetricsReport};
use shiftbench::shift::{self, Degree, ShiftKind, ShiftSpec};
use shiftbench::signal::{self, SignalDataset};
use shiftbench::uq::{self, Method};
use shiftbench::{par, Error, Result};

/// Uncertainty benchmarking of classifiers under controlled dataset shift.
///
/// Worker threads are capped by the SHIFTBENCH_THREADS environment variable
/// (0 or unset uses every core).
#[derive(Parser, Debug)]
#[command(name = "shiftbench", version)]
struct Cli {
    /// Log progress (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// JSON benchmark configuration; defaults apply to omitted fields.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Master seed; overrides the `seed` field of the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<BenchmarkConfig> {
        let mut cfg = match &self.config {
            Some(path) => BenchmarkConfig::from_json_file(path)?,
            None => BenchmarkConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic task and write train/validation/test manifests.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Output directory; gets `train/`, `validation/` and `test/`.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Perturb every signal of a manifest and write the shifted manifest.
    Shift {
        /// Shift kind: gaussian_noise, background_noise, amplitude_distortion,
        /// segment_missing or sampling_rate_mismatch.
        #[arg(long)]
        kind: ShiftKind,
        /// Shift degree, 0 (unchanged) to 5.
        #[arg(long)]
        degree: u8,
        /// Seed of the perturbation.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Input manifest.
        #[arg(long = "in", value_name = "MANIFEST")]
        input: PathBuf,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// JSON benchmark configuration (its `shift` options are used).
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
    },
    /// Train every model family the configured methods need.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training manifest.
        #[arg(long, value_name = "MANIFEST")]
        train: PathBuf,
        /// Validation manifest (model selection and temperature fitting).
        #[arg(long, value_name = "MANIFEST")]
        val: PathBuf,
        /// Output model file.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Score one method on one (shift kind, degree) cell.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Model file written by `train`.
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Test manifest.
        #[arg(long, value_name = "MANIFEST")]
        test: PathBuf,
        /// Method: vanilla, scaling, mcdropout, bayesian or ensemble.
        #[arg(long)]
        method: Method,
        /// Shift kind applied to the test set.
        #[arg(long, default_value = "gaussian_noise")]
        kind: ShiftKind,
        /// Shift degree applied to the test set.
        #[arg(long, default_value_t = 0)]
        degree: u8,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Also write the per-pass probabilities of sampled methods.
        #[arg(long)]
        passes: bool,
        /// Also write the standardized feature matrix.
        #[arg(long)]
        dump_features: bool,
    },
    /// Run the full methods × shift kinds × degrees matrix.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Output directory (overrides `output_dir` in the config).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Write only the CSV and JSON results, no figures.
        #[arg(long)]
        no_report: bool,
    },
    /// Render figures from the CSVs of a bench run.
    Report {
        /// Directory written by `bench`.
        #[arg(long = "in", value_name = "DIR")]
        input: PathBuf,
        /// Figure directory [default: <in>/figures].
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn generate(cfg: &BenchmarkConfig, out: &Path) -> Result<()> {
    let data = cfg.load_dataset()?;
    let (train, val, test) = signal::split_dataset(&data, cfg.split, cfg.split_seed())?;
    for (name, d) in [("train", &train), ("validation", &val), ("test", &test)] {
        let path = signal::write_manifest(d, out.join(name))?;
        println!("{}\t{} items", path.display(), d.len());
    }
    Ok(())
}

fn shift_manifest(
    kind: ShiftKind,
    degree: u8,
    seed: u64,
    input: &Path,
    out: &Path,
    config: Option<&Path>,
) -> Result<()> {
    let cfg = match config {
        Some(p) => BenchmarkConfig::from_json_file(p)?,
        None => BenchmarkConfig::default(),
    };
    let d = signal::read_manifest(input)?;
    let spec = ShiftSpec {
        kind,
        degree: Degree::new(degree)?,
        seed,
    };
    let shifted = shift::apply_shift(&d, &spec, &cfg.shift_context()?)?;
    let path = signal::write_manifest(&shifted, out)?;
    println!("{}", path.display());
    Ok(())
}

fn train(cfg: &BenchmarkConfig, train: &Path, val: &Path, out: &Path) -> Result<()> {
    let train = signal::read_manifest(train)?;
    let val = signal::read_manifest(val)?;
    let suite = ModelSuite::fit(&train, &val, cfg)?;
    for (family, msg) in &suite.families.failures {
        log::error!("{family}: {msg}");
    }
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    suite.save(out)?;
    println!("{}", out.display());
    Ok(())
}

struct EvalArgs<'a> {
    model: &'a Path,
    test: &'a Path,
    method: Method,
    kind: ShiftKind,
    degree: u8,
    out: &'a Path,
    passes: bool,
    dump_features: bool,
}

fn evaluate(cfg: &BenchmarkConfig, a: EvalArgs<'_>) -> Result<()> {
    let suite = ModelSuite::load(a.model)?;
    let test: SignalDataset = signal::read_manifest(a.test)?;
    let spec = ShiftSpec {
        kind: a.kind,
        degree: Degree::new(a.degree)?,
        seed: cfg.shift_seed(a.kind, a.degree),
    };
    let shifted = shift::apply_shift(&test, &spec, &cfg.shift_context()?)?;
    let x = suite.prepare(&shifted)?;
    let uq_cfg = uq::UQConfig {
        keep_passes: a.passes,
        ..cfg.uq.clone()
    };
    let preds = suite.predict(a.method, &x.rows, &uq_cfg, cfg.prediction_seed(a.method))?;
    let report = MetricsReport::compute(
        a.method.as_str(),
        a.kind.as_str(),
        a.degree,
        &preds,
        &x.labels,
        cfg.ece_buckets.min(preds.len()),
    )?;

    create_dir(a.out)?;
    let metrics_path = a.out.join("metrics.csv");
    let row = format!(
        "{}\n{},{},{},{},{},{},{},{},{},{}\n",
        bench::METRICS_HEADER,
        report.method,
        report.shift_kind,
        report.degree,
        report.accuracy,
        report.brier,
        report.ece,
        report.mean_uncertainty,
        report.tpr.map(|v| v.to_string()).unwrap_or_default(),
        report.tnr.map(|v| v.to_string()).unwrap_or_default(),
        report.n_samples
    );
    std::fs::write(&metrics_path, row).map_err(|e| Error::io(&metrics_path, e))?;
    let buckets = metrics::calibration_buckets(
        &preds,
        &x.labels,
        cfg.ece_buckets.min(preds.len()),
        metrics::Binning::Quantile,
    )?;
    let rel_path = a.out.join("reliability.csv");
    std::fs::write(&rel_path, buckets.to_csv()).map_err(|e| Error::io(&rel_path, e))?;
    let passes_path = a.out.join("passes.csv");
    uq::write_predictions(
        a.out.join("predictions.csv"),
        (a.passes && a.method.is_sampled()).then_some(passes_path.as_path()),
        &x.ids,
        &x.labels,
        &preds,
    )?;
    if a.dump_features {
        x.write_csv(a.out.join("features.csv"))?;
    }
    println!(
        "{} {} degree {}: accuracy {:.4}, brier {:.4}, ece {:.4}, uncertainty {:.4}",
        report.method,
        report.shift_kind,
        report.degree,
        report.accuracy,
        report.brier,
        report.ece,
        report.mean_uncertainty
    );
    Ok(())
}

fn run_bench(mut cfg: BenchmarkConfig, out: Option<PathBuf>, no_report: bool) -> Result<()> {
    if out.is_some() {
        cfg.output_dir = out;
    }
    let dir = cfg.output_dir.clone().ok_or_else(|| {
        Error::Config("no output directory: pass --out or set `output_dir`".into())
    })?;
    let result = bench::run_benchmark(&cfg)?;
    bench::export_csv(&result, &dir)?;
    if !no_report {
        bench::render_report(&dir, dir.join("figures"))?;
    }
    if !result.failures.is_empty() {
        log::warn!("{} cells failed; see failures.csv", result.failures.len());
    }
    println!("{}", dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common, out } => generate(&common.load()?, &out),
        Command::Shift {
            kind,
            degree,
            seed,
            input,
            out,
            config,
        } => shift_manifest(kind, degree, seed, &input, &out, config.as_deref()),
        Command::Train {
            common,
            train: t,
            val,
            out,
        } => train(&common.load()?, &t, &val, &out),
        Command::Evaluate {
            common,
            model,
            test,
            method,
            kind,
            degree,
            out,
            passes,
            dump_features,
        } => evaluate(
            &common.load()?,
            EvalArgs {
                model: &model,
                test: &test,
                method,
                kind,
                degree,
                out: &out,
                passes,
                dump_features,
            },
        ),
        Command::Bench {
            common,
            out,
            no_report,
        } => run_bench(common.load()?, out, no_report),
        Command::Report { input, out } => {
            let out = out.unwrap_or_else(|| input.join("figures"));
            let files = bench::render_report(&input, &out)?;
            println!("{} figures and tables in {}", files.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match par::with_threads(par::threads_from_env(), || run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
