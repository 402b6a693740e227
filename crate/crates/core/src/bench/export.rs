//! CSV and JSON artifacts of a benchmark run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::RunMatrixResult;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

pub const METRICS_HEADER: &str =
    "method,shift_kind,degree,accuracy,brier,ece,mean_uncertainty,tpr,tnr,n_samples";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write(dir: &Path, name: &str, text: String, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes `metrics.csv`, the analysis tables and `provenance.json` into `dir`
/// and returns the paths written.
pub fn export_csv(result: &RunMatrixResult, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let mut metrics = format!("{METRICS_HEADER}\n");
    let mut reliability = String::from("method,shift_kind,degree,bucket,lo,hi,size,acc,conf,gap\n");
    let mut selective = String::from(
        "method,shift_kind,degree,threshold,retained,retained_fraction,accuracy,empty\n",
    );
    let mut detection = String::from("method,shift_kind,degree,threshold,accuracy\n");
    let mut histogram = String::from("method,shift_kind,degree,bin,lo,hi,count\n");
    let mut tpr_tnr = String::from("method,shift_kind,degree,tpr,tnr\n");
    for c in &result.cells {
        let r = &c.report;
        let key = format!("{},{},{}", r.method, r.shift_kind, r.degree);
        let _ = writeln!(
            metrics,
            "{key},{},{},{},{},{},{},{}",
            r.accuracy,
            r.brier,
            r.ece,
            r.mean_uncertainty,
            opt(r.tpr),
            opt(r.tnr),
            r.n_samples
        );
        for (i, b) in c.reliability.buckets.iter().enumerate() {
            let _ = writeln!(
                reliability,
                "{key},{i},{},{},{},{},{},{}",
                b.lo,
                b.hi,
                b.size,
                b.accuracy,
                b.confidence,
                b.gap()
            );
        }
        for p in &c.selective {
            let _ = writeln!(
                selective,
                "{key},{},{},{},{},{}",
                p.threshold,
                p.retained,
                p.retained_fraction,
                opt(p.accuracy),
                u8::from(p.accuracy.is_none())
            );
        }
        for (tau, acc) in &c.detection {
            let _ = writeln!(detection, "{key},{tau},{acc}");
        }
        for (i, n) in c.histogram.counts.iter().enumerate() {
            let _ = writeln!(
                histogram,
                "{key},{i},{},{},{n}",
                c.histogram.edges[i],
                c.histogram.edges[i + 1]
            );
        }
        if let (Some(tpr), Some(tnr)) = (r.tpr, r.tnr) {
            let _ = writeln!(tpr_tnr, "{key},{tpr},{tnr}");
        }
    }
    write(dir, "metrics.csv", metrics, &mut written)?;
    write(dir, "reliability.csv", reliability, &mut written)?;
    write(dir, "selective_prediction.csv", selective, &mut written)?;
    write(dir, "shift_detection.csv", detection, &mut written)?;
    write(dir, "entropy_histogram.csv", histogram, &mut written)?;
    if result.num_classes() == 2 {
        write(dir, "tpr_tnr.csv", tpr_tnr, &mut written)?;
    }
    if !result.failures.is_empty() {
        let mut failures = String::from("method,shift_kind,degree,message\n");
        for f in &result.failures {
            let msg = f.message.replace('"', "\"\"");
            let _ = writeln!(
                failures,
                "{},{},{},\"{msg}\"",
                f.method, f.shift_kind, f.degree
            );
        }
        write(dir, "failures.csv", failures, &mut written)?;
    }
    let mut prov = serde_json::to_string_pretty(&result.provenance)?;
    prov.push('\n');
    write(dir, "provenance.json", prov, &mut written)?;
    Ok(written)
}

/// Reads a `metrics.csv` written by [`export_csv`].
pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsReport>> {
    let path = path.as_ref();
    let ingest = |message: String| Error::Ingest {
        location: path.display().to_string(),
        message,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => ingest(format!("{other:?}")),
    })?;
    let header = rdr
        .headers()
        .map_err(|e| ingest(e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != METRICS_HEADER {
        return Err(ingest(format!("unexpected header `{header}`")));
    }
    rdr.deserialize()
        .map(|r| r.map_err(|e| ingest(e.to_string())))
        .collect()
}
