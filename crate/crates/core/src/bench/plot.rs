//! Static SVG figures: metric-vs-degree trends, reliability diagrams,
//! selective prediction, shift detection and entropy histograms.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::export::read_metrics_csv;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

/// Metrics drawn per shift kind by [`plot_trends`].
pub const TREND_METRICS: [&str; 4] = ["accuracy", "brier", "ece", "mean_uncertainty"];

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            points,
            dashed: false,
        }
    }
}

/// A line chart with markers and a legend.
#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Fixed axis ranges; fitted to the data when `None`.
    pub x_range: Option<(f64, f64)>,
    pub y_range: Option<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn data_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

impl LineChart {
    pub fn new(
        title: impl Into<String>,
        x_label: impl Into<String>,
        y_label: impl Into<String>,
    ) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
            x_range: None,
            y_range: None,
        }
    }

    pub fn to_svg(&self) -> String {
        let pts = || self.series.iter().flat_map(|s| s.points.iter());
        let (x0, x1) = self
            .x_range
            .unwrap_or_else(|| data_range(pts().map(|p| p.0)));
        let (y0, y1) = self
            .y_range
            .unwrap_or_else(|| data_range(pts().map(|p| p.1)));
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

        let mut o = String::new();
        let _ = writeln!(
            o,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(
            o,
            r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
        );
        let _ = writeln!(
            o,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            o,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = x0 + f * (x1 - x0);
            let yv = y0 + f * (y1 - y0);
            let _ = writeln!(
                o,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                sx(xv),
                TOP + ph + 18.0,
                tick(xv)
            );
            let _ = writeln!(
                o,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                LEFT - 6.0,
                sy(yv) + 4.0,
                tick(yv)
            );
            let _ = writeln!(
                o,
                r##"<line x1="{LEFT}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#dddddd"/>"##,
                sy(yv),
                LEFT + pw,
                sy(yv)
            );
        }
        let _ = writeln!(
            o,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            o,
            r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );

        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let finite: Vec<_> = s
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .collect();
            let dash = if s.dashed {
                r#" stroke-dasharray="5,4""#
            } else {
                ""
            };
            if finite.len() >= 2 {
                let path: Vec<String> = finite
                    .iter()
                    .map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1)))
                    .collect();
                let _ = writeln!(
                    o,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
                    path.join(" ")
                );
            }
            if !s.dashed {
                for p in &finite {
                    let _ = writeln!(
                        o,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#,
                        sx(p.0),
                        sy(p.1)
                    );
                }
            }
            let ly = TOP + 10.0 + 18.0 * i as f64;
            let lx = WIDTH - RIGHT + 12.0;
            let _ = writeln!(
                o,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>"#,
                lx + 20.0
            );
            let _ = writeln!(
                o,
                r#"<text x="{}" y="{}">{}</text>"#,
                lx + 26.0,
                ly + 4.0,
                escape(&s.name)
            );
        }
        o.push_str("</svg>\n");
        o
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_svg()).map_err(|e| Error::io(path, e))
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn unique<T: PartialEq + Clone>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for i in items {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

fn metric_value(r: &MetricsReport, metric: &str) -> Option<f64> {
    match metric {
        "accuracy" => Some(r.accuracy),
        "brier" => Some(r.brier),
        "ece" => Some(r.ece),
        "mean_uncertainty" => Some(r.mean_uncertainty),
        "tpr" => r.tpr,
        "tnr" => r.tnr,
        _ => None,
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn trend_charts(reports: &[MetricsReport], dir: &Path, metrics: &[&str]) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let methods = unique(reports.iter().map(|r| r.method.clone()));
    let mut written = Vec::new();
    for kind in unique(reports.iter().map(|r| r.shift_kind.clone())) {
        for &metric in metrics {
            let mut chart =
                LineChart::new(format!("{metric} under {kind}"), "shift degree", metric);
            chart.x_range = Some((-0.25, 5.25));
            for m in &methods {
                let mut points: Vec<(f64, f64)> = reports
                    .iter()
                    .filter(|r| &r.method == m && r.shift_kind == kind)
                    .filter_map(|r| metric_value(r, metric).map(|v| (r.degree as f64, v)))
                    .collect();
                points.sort_by(|a, b| a.0.total_cmp(&b.0));
                chart.series.push(Series::new(m.clone(), points));
            }
            let path = dir.join(format!("{kind}_{metric}.svg"));
            chart.write(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// One SVG per `(shift kind, metric)`: the metric against degree, one line
/// per method.
pub fn plot_trends(reports: &[MetricsReport], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(Error::Invalid("no reports to plot".into()));
    }
    trend_charts(reports, dir.as_ref(), &TREND_METRICS)
}

/// A CSV file loaded as strings, addressed by column name.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    path: PathBuf,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Ingest {
                location: path.display().to_string(),
                message: format!("{other:?}"),
            },
        })?;
        let ingest = |e: csv::Error| Error::Ingest {
            location: path.display().to_string(),
            message: e.to_string(),
        };
        let header = rdr
            .headers()
            .map_err(ingest)?
            .iter()
            .map(String::from)
            .collect();
        let rows = rdr
            .records()
            .map(|r| {
                r.map(|r| r.iter().map(String::from).collect())
                    .map_err(ingest)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            header,
            rows,
            path: path.to_path_buf(),
        })
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Ingest {
                location: self.path.display().to_string(),
                message: format!("missing column `{name}`"),
            })
    }

    fn num(&self, row: &[String], c: usize) -> Result<f64> {
        row[c].parse().map_err(|_| Error::Ingest {
            location: self.path.display().to_string(),
            message: format!("`{}` is not a number", row[c]),
        })
    }
}

/// `(method, kind, degree)` of each row, in file order.
fn keys(t: &Table) -> Result<Vec<(String, String, u8)>> {
    let (m, k, d) = (t.col("method")?, t.col("shift_kind")?, t.col("degree")?);
    t.rows
        .iter()
        .map(|r| Ok((r[m].clone(), r[k].clone(), t.num(r, d)? as u8)))
        .collect()
}

/// Curves from a long-form table: for each kind, one chart with a line per
/// method at the kind's highest degree.
fn curves_at_max_degree(
    t: &Table,
    dir: &Path,
    x: &str,
    y: &str,
    what: &str,
) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let ks = keys(t)?;
    let (xc, yc) = (t.col(x)?, t.col(y)?);
    let mut written = Vec::new();
    for kind in unique(ks.iter().map(|k| k.1.clone())) {
        let Some(max_d) = ks.iter().filter(|k| k.1 == kind).map(|k| k.2).max() else {
            continue;
        };
        let mut chart = LineChart::new(
            format!("{what}: {kind}, degree {max_d}"),
            "entropy threshold",
            y,
        );
        chart.y_range = Some((0.0, 1.0));
        for m in unique(ks.iter().map(|k| k.0.clone())) {
            let mut points = Vec::new();
            for (row, key) in t.rows.iter().zip(&ks) {
                if key.0 == m && key.1 == kind && key.2 == max_d && !row[yc].is_empty() {
                    points.push((t.num(row, xc)?, t.num(row, yc)?));
                }
            }
            chart.series.push(Series::new(m, points));
        }
        let path = dir.join(format!("{kind}.svg"));
        chart.write(&path)?;
        written.push(path);
    }
    Ok(written)
}

fn reliability_figures(t: &Table, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let ks = keys(t)?;
    let cols = ["bucket", "lo", "hi", "size", "acc", "conf", "gap"].map(|c| t.col(c));
    let cols: Vec<usize> = cols.into_iter().collect::<Result<_>>()?;
    let (acc, conf) = (t.col("acc")?, t.col("conf")?);
    let mut written = Vec::new();
    for cell in unique(ks.iter().cloned()) {
        let mut table = String::from("bucket,lo,hi,size,acc,conf,gap\n");
        for (row, key) in t.rows.iter().zip(&ks) {
            if *key == cell {
                let fields: Vec<&str> = cols.iter().map(|&c| row[c].as_str()).collect();
                table.push_str(&fields.join(","));
                table.push('\n');
            }
        }
        let path = dir.join(format!("{}_{}_{}.csv", cell.0, cell.1, cell.2));
        fs::write(&path, table).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    for m in unique(ks.iter().map(|k| k.0.clone())) {
        for kind in unique(ks.iter().map(|k| k.1.clone())) {
            let mut chart = LineChart::new(
                format!("reliability: {m}, {kind}"),
                "confidence",
                "accuracy",
            );
            chart.x_range = Some((0.0, 1.0));
            chart.y_range = Some((0.0, 1.0));
            let mut diag = Series::new("perfect calibration", vec![(0.0, 0.0), (1.0, 1.0)]);
            diag.dashed = true;
            chart.series.push(diag);
            for d in unique(ks.iter().filter(|k| k.0 == m && k.1 == kind).map(|k| k.2)) {
                let mut points = Vec::new();
                for (row, key) in t.rows.iter().zip(&ks) {
                    if key.0 == m && key.1 == kind && key.2 == d {
                        points.push((t.num(row, conf)?, t.num(row, acc)?));
                    }
                }
                chart
                    .series
                    .push(Series::new(format!("degree {d}"), points));
            }
            let path = dir.join(format!("{kind}_{m}.svg"));
            chart.write(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}

fn histogram_figures(t: &Table, dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let ks = keys(t)?;
    let (lo, hi, count) = (t.col("lo")?, t.col("hi")?, t.col("count")?);
    let mut written = Vec::new();
    for m in unique(ks.iter().map(|k| k.0.clone())) {
        for kind in unique(ks.iter().map(|k| k.1.clone())) {
            let mut chart = LineChart::new(
                format!("entropy distribution: {m}, {kind}"),
                "predictive entropy",
                "fraction",
            );
            for d in unique(ks.iter().filter(|k| k.0 == m && k.1 == kind).map(|k| k.2)) {
                let mut points = Vec::new();
                for (row, key) in t.rows.iter().zip(&ks) {
                    if key.0 == m && key.1 == kind && key.2 == d {
                        let mid = 0.5 * (t.num(row, lo)? + t.num(row, hi)?);
                        points.push((mid, t.num(row, count)?));
                    }
                }
                let total: f64 = points.iter().map(|p| p.1).sum();
                if total > 0.0 {
                    points.iter_mut().for_each(|p| p.1 /= total);
                }
                chart
                    .series
                    .push(Series::new(format!("degree {d}"), points));
            }
            let path = dir.join(format!("{kind}_{m}.svg"));
            chart.write(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Renders every figure family from the CSVs a bench run wrote to `input`.
pub fn render_report(input: impl AsRef<Path>, out: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let input = input.as_ref();
    let out = out.as_ref();
    ensure_dir(out)?;
    let reports = read_metrics_csv(input.join("metrics.csv"))?;
    let mut written = plot_trends(&reports, out.join("trends"))?;
    if reports.iter().any(|r| r.tpr.is_some()) {
        written.extend(trend_charts(
            &reports,
            &out.join("tpr_tnr"),
            &["tpr", "tnr"],
        )?);
    }
    written.extend(reliability_figures(
        &Table::read(&input.join("reliability.csv"))?,
        &out.join("reliability"),
    )?);
    written.extend(curves_at_max_degree(
        &Table::read(&input.join("selective_prediction.csv"))?,
        &out.join("selective_prediction"),
        "threshold",
        "accuracy",
        "selective prediction",
    )?);
    written.extend(curves_at_max_degree(
        &Table::read(&input.join("shift_detection.csv"))?,
        &out.join("shift_detection"),
        "threshold",
        "accuracy",
        "shift detection",
    )?);
    written.extend(histogram_figures(
        &Table::read(&input.join("entropy_histogram.csv"))?,
        &out.join("entropy_histogram"),
    )?);
    Ok(written)
}
