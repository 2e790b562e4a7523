//! Result files: per-step RMSE tables, estimate tables and SVG plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BenchError, Result, RmseSeries};
use crate::simkit::TrackPair;
use crate::Vec2;

/// Writes `k,rmse_<label>,...` with one row per step. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_series_csv(series: &[RmseSeries], path: &Path) -> Result<()> {
    let err = |e: csv::Error| BenchError::file(path, e);
    let steps = series.first().map_or(0, |s| s.values.len());
    if let Some(s) = series.iter().find(|s| s.values.len() != steps) {
        return Err(BenchError::Shape(format!("series {} has {} steps, expected {steps}", s.label, s.values.len())));
    }
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let mut header = vec!["k".to_string()];
    header.extend(series.iter().map(|s| format!("rmse_{}", s.label)));
    w.write_record(&header).map_err(err)?;
    for k in 0..steps {
        let mut record = vec![(k + 1).to_string()];
        record.extend(series.iter().map(|s| format!("{}", s.values[k])));
        w.write_record(&record).map_err(err)?;
    }
    w.flush().map_err(|e| BenchError::file(path, e))
}

pub fn read_series_csv(path: &Path) -> Result<Vec<RmseSeries>> {
    let err = |e: csv::Error| BenchError::file(path, e);
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    let header = r.headers().map_err(err)?.clone();
    if header.get(0) != Some("k") {
        return Err(BenchError::file(path, "first column must be k"));
    }
    let mut series = Vec::new();
    for name in header.iter().skip(1) {
        let label = name
            .strip_prefix("rmse_")
            .ok_or_else(|| BenchError::file(path, format!("unexpected column {name:?}")))?;
        series.push(RmseSeries { label: label.to_string(), values: Vec::new() });
    }
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(err)?;
        let line = i + 2;
        let k: usize = record[0].parse().map_err(|e| BenchError::file(path, format!("line {line}: {e}")))?;
        if k != i + 1 {
            return Err(BenchError::file(path, format!("line {line}: expected k = {}, found {k}", i + 1)));
        }
        for (s, field) in series.iter_mut().zip(record.iter().skip(1)) {
            let v: f64 = field.parse().map_err(|e| BenchError::file(path, format!("line {line}: {e}")))?;
            s.values.push(v);
        }
    }
    Ok(series)
}

/// One position estimate; `source` names the method or the estimate kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub track_id: u64,
    /// 1-based step.
    pub k: usize,
    pub x: f64,
    pub y: f64,
    pub source: String,
}

pub fn write_estimates(rows: &[EstimateRow], path: &Path) -> Result<()> {
    let err = |e: csv::Error| BenchError::file(path, e);
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for row in rows {
        w.serialize(row).map_err(err)?;
    }
    w.flush().map_err(|e| BenchError::file(path, e))
}

pub fn read_estimates(path: &Path) -> Result<Vec<EstimateRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| BenchError::file(path, e))?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| BenchError::file(path, e))
}

/// Arranges estimate rows into per-track sequences in the order of
/// `tracks`; every track needs exactly one estimate per step.
pub fn align_estimates(rows: &[EstimateRow], tracks: &[TrackPair]) -> Result<Vec<Vec<Vec2>>> {
    let mut by_track: BTreeMap<u64, Vec<Option<Vec2>>> =
        tracks.iter().map(|t| (t.track_id, vec![None; t.len()])).collect();
    for row in rows {
        let slots = by_track
            .get_mut(&row.track_id)
            .ok_or_else(|| BenchError::Shape(format!("estimate for unknown track {}", row.track_id)))?;
        let slot = row
            .k
            .checked_sub(1)
            .and_then(|i| slots.get_mut(i))
            .ok_or_else(|| BenchError::Shape(format!("track {}: step {} out of range", row.track_id, row.k)))?;
        if slot.replace(Vec2::new(row.x, row.y)).is_some() {
            return Err(BenchError::Shape(format!("track {}: step {} estimated twice", row.track_id, row.k)));
        }
    }
    tracks
        .iter()
        .map(|t| {
            by_track[&t.track_id]
                .iter()
                .enumerate()
                .map(|(i, p)| p.ok_or_else(|| BenchError::Shape(format!("track {}: no estimate at step {}", t.track_id, i + 1))))
                .collect()
        })
        .collect()
}

const W: f64 = 720.0;
const H: f64 = 440.0;
const MARGIN: (f64, f64, f64, f64) = (64.0, 24.0, 40.0, 52.0); // left, right, top, bottom
const COLORS: [&str; 6] = ["#7f7f7f", "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

/// Line plot of RMSE against step, one polyline per series.
pub fn render_svg(title: &str, series: &[RmseSeries]) -> String {
    let steps = series.iter().map(|s| s.values.len()).max().unwrap_or(0).max(2);
    let top = series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0_f64, f64::max);
    let top = nice_ceiling(top);
    let (ml, mr, mt, mb) = MARGIN;
    let (pw, ph) = (W - ml - mr, H - mt - mb);
    let sx = |k: f64| ml + (k - 1.0) / (steps as f64 - 1.0) * pw;
    let sy = |v: f64| mt + ph - v / top * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#, W / 2.0, escape(title));
    for i in 0..=5 {
        let v = top * i as f64 / 5.0;
        let y = sy(v);
        let _ = writeln!(s, r##"<line x1="{ml}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#e0e0e0"/>"##, ml + pw);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#, ml - 6.0, y + 4.0, trim(v));
    }
    for i in 0..=5 {
        let k = 1.0 + (steps as f64 - 1.0) * i as f64 / 5.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#, sx(k), mt + ph + 16.0, k.round());
    }
    let _ = writeln!(s, r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="12">time step k</text>"#, ml + pw / 2.0, H - 12.0);
    let _ = writeln!(s, r#"<text x="16" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {:.1})">position RMSE (m)</text>"#, mt + ph / 2.0, mt + ph / 2.0);
    for (i, series) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = series
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(k, &v)| format!("{:.2},{:.2}", sx(k as f64 + 1.0), sy(v)))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.8" points="{}"/>"#, points.join(" "));
        let ly = mt + 14.0 + 16.0 * i as f64;
        let lx = ml + pw - 120.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#, lx + 26.0, ly + 4.0, escape(&series.label));
    }
    s.push_str("</svg>\n");
    s
}

/// Smallest of 1, 2, 2.5 or 5 times a power of ten that is at least `v`.
fn nice_ceiling(v: f64) -> f64 {
    if v <= 0.0 {
        return 1.0;
    }
    let p = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0].iter().map(|m| m * p).find(|&c| c >= v).unwrap_or(10.0 * p)
}

fn trim(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
