//! Result files: long-format CSV tables, the summary as CSV and JSON, run
//! metadata, and the report's tidy table with a static SVG chart.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MethodLabel, RepetitionInfo, RunConfig, RunResult, Summary};
use crate::error::Result;
use crate::netlab::HeadKind;
use crate::scoring::PIT_BINS;
use crate::simgen::ScenarioId;

/// Contents of `run_meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub software: String,
    pub version: String,
    pub config: RunConfig,
    pub repetition_seeds: Vec<RepetitionInfo>,
    /// How the validation cases relate to the training cases.
    pub validation_data: String,
    pub created_unix_seconds: u64,
    pub elapsed_seconds: f64,
}

impl RunMeta {
    pub fn new(result: &RunResult, elapsed_seconds: f64) -> Self {
        Self {
            software: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: result.config.clone(),
            repetition_seeds: result.repetitions.clone(),
            validation_data: "generated in addition to the training cases".to_string(),
            created_unix_seconds: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            elapsed_seconds,
        }
    }
}

#[derive(Serialize)]
struct ResultRow {
    scenario: ScenarioId,
    variant: HeadKind,
    method: MethodLabel,
    n: usize,
    rep: usize,
    mean_crps: Option<f64>,
    crpss: Option<f64>,
    coverage: Option<f64>,
    pi_length: Option<f64>,
    bias: Option<f64>,
}

#[derive(Serialize)]
struct CoefficientRow {
    variant: HeadKind,
    method: MethodLabel,
    n: usize,
    rep: usize,
    a: f64,
    w0: f64,
    delta_n: f64,
}

#[derive(Serialize)]
struct PitRow {
    variant: HeadKind,
    method: MethodLabel,
    n: usize,
    rep: usize,
    bin: usize,
    lower: f64,
    upper: f64,
    count: u64,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes `results.csv`, `coefficients.csv`, `pit.csv`, `summary.csv`,
/// `summary.json` and `run_meta.json` into `dir`, creating it if needed.
pub fn write_outputs(result: &RunResult, summary: &Summary, meta: &RunMeta, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_rows(
        &dir.join("results.csv"),
        result.records.iter().map(|r| {
            let m = r.metrics.as_ref();
            ResultRow {
                scenario: r.scenario,
                variant: r.variant,
                method: r.method,
                n: r.n,
                rep: r.rep,
                mean_crps: m.map(|m| m.mean_crps),
                crpss: m.map(|m| m.crpss),
                coverage: m.map(|m| m.coverage),
                pi_length: m.map(|m| m.pi_length),
                bias: m.map(|m| m.bias),
            }
        }),
    )?;
    write_rows(
        &dir.join("coefficients.csv"),
        result.records.iter().filter_map(|r| {
            r.coefficients.map(|c| CoefficientRow {
                variant: r.variant,
                method: r.method,
                n: r.n,
                rep: r.rep,
                a: c.a,
                w0: c.w0,
                delta_n: c.delta_n,
            })
        }),
    )?;
    let width = 1.0 / PIT_BINS as f64;
    write_rows(
        &dir.join("pit.csv"),
        result.records.iter().flat_map(|r| {
            let hist = r.metrics.as_ref().map(|m| m.pit_histogram.clone()).unwrap_or_default();
            hist.into_iter().enumerate().map(move |(bin, count)| PitRow {
                variant: r.variant,
                method: r.method,
                n: r.n,
                rep: r.rep,
                bin,
                lower: bin as f64 * width,
                upper: (bin + 1) as f64 * width,
                count,
            })
        }),
    )?;
    write_rows(&dir.join("summary.csv"), &summary.rows)?;
    write_json(&dir.join("summary.json"), summary)?;
    write_json(&dir.join("run_meta.json"), meta)?;
    Ok(())
}

pub fn read_summary_json(path: &Path) -> Result<Summary> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}

#[derive(Serialize)]
struct TidyRow {
    scenario: ScenarioId,
    variant: HeadKind,
    method: MethodLabel,
    n: usize,
    crpss_median: f64,
    crpss_q1: f64,
    crpss_q3: f64,
    crpss_mean: f64,
    coverage: f64,
}

const PALETTE: [&str; 6] = ["#444444", "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e"];

/// Renders median skill score against ensemble size, one panel per variant
/// and one line per method.
pub fn svg_chart(summary: &Summary) -> String {
    let mut panels: BTreeMap<HeadKind, BTreeMap<MethodLabel, Vec<(usize, f64)>>> = BTreeMap::new();
    for r in &summary.rows {
        if r.crpss_median.is_finite() {
            panels
                .entry(r.variant)
                .or_default()
                .entry(r.method)
                .or_default()
                .push((r.n, r.crpss_median));
        }
    }
    let values = panels.values().flat_map(|p| p.values().flatten().map(|&(_, v)| v));
    let (mut lo, mut hi) = values.fold((0.0f64, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi - lo < 1e-9 {
        hi += 0.5;
        lo -= 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let n_max = summary.rows.iter().map(|r| r.n).max().unwrap_or(2).max(2) as f64;
    let n_min = summary.rows.iter().map(|r| r.n).min().unwrap_or(1) as f64;
    let n_span = (n_max - n_min).max(1.0);
    let (pw, ph, margin) = (320.0, 240.0, 50.0);
    let width = margin + panels.len().max(1) as f64 * (pw + margin);
    let height = ph + 2.0 * margin + 20.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, (variant, lines)) in panels.iter().enumerate() {
        let x0 = margin + i as f64 * (pw + margin);
        let y0 = margin;
        let sx = |n: f64| x0 + (n - n_min) / n_span * pw;
        let sy = |v: f64| y0 + (hi - v) / (hi - lo) * ph;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{variant}</text>"#, x0 + pw / 2.0, y0 - 15.0);
        let _ = writeln!(s, r#"<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        if lo < 0.0 && hi > 0.0 {
            let _ = writeln!(s, r##"<line x1="{x0}" y1="{0}" x2="{1}" y2="{0}" stroke="#bbbbbb" stroke-dasharray="4 3"/>"##, sy(0.0), x0 + pw);
        }
        for k in 0..=4 {
            let v = lo + (hi - lo) * k as f64 / 4.0;
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.3}</text>"#, x0 - 4.0, sy(v) + 4.0);
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">n</text>"#, x0 + pw / 2.0, y0 + ph + 30.0);
        let _ = writeln!(s, r#"<text x="{x0}" y="{}" text-anchor="middle">{n_min}</text>"#, y0 + ph + 15.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{n_max}</text>"#, x0 + pw, y0 + ph + 15.0);
        for (j, (method, points)) in lines.iter().enumerate() {
            let color = PALETTE[j % PALETTE.len()];
            let pts: Vec<String> = points.iter().map(|&(n, v)| format!("{:.2},{:.2}", sx(n as f64), sy(v))).collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
            let ly = y0 + 12.0 + 13.0 * j as f64;
            let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{color}">{method}</text>"#, x0 + pw - 40.0);
        }
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">median CRPSS</text>"#, width / 2.0, height - 8.0);
    s.push_str("</svg>\n");
    s
}

/// Writes `crpss_by_n.csv` and `crpss_by_n.svg` into `dir`.
pub fn write_report(summary: &Summary, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_rows(
        &dir.join("crpss_by_n.csv"),
        summary.rows.iter().map(|r| TidyRow {
            scenario: r.scenario,
            variant: r.variant,
            method: r.method,
            n: r.n,
            crpss_median: r.crpss_median,
            crpss_q1: r.crpss_q1,
            crpss_q3: r.crpss_q3,
            crpss_mean: r.crpss_mean,
            coverage: r.coverage,
        }),
    )?;
    let mut w = create(&dir.join("crpss_by_n.svg"))?;
    w.write_all(svg_chart(summary).as_bytes())?;
    w.flush()?;
    Ok(())
}
