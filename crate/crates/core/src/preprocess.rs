//! Sample-sparseness normalization of measurement tracks.
//!
//! A track is cut into overlapping windows of length `tau`; each window is
//! rotated so that its first increment lies on the positive x-axis; every
//! in-window time `k` then yields one sample whose features are the
//! displacements of the (left-padded) history relative to the current
//! measurement, and whose target is the rotated truth-minus-measurement error.

use std::io::{Read, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::gbt::{FeatureMatrix, GbtError};
use crate::simkit::TrackPair;
use crate::Vec2;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("degenerate rotation basis: first two points coincide")]
    DegenerateBasis,
    #[error("sequence of length {len} is shorter than the window length {tau}")]
    InsufficientLength { len: usize, tau: usize },
    #[error("window length must be at least 2, got {0}")]
    InvalidTau(usize),
    #[error("in-window time {k} outside 1..={tau}")]
    InWindowTime { k: usize, tau: usize },
    #[error(transparent)]
    Features(#[from] GbtError),
    #[error("sample file: {0}")]
    Csv(#[from] csv::Error),
    #[error("sample file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

/// Rotates `v` counter-clockwise by `alpha` radians.
pub fn rotate_vec(v: Vec2, alpha: f64) -> Vec2 {
    let (s, c) = alpha.sin_cos();
    Vec2::new(v.x * c - v.y * s, v.y * c + v.x * s)
}

/// Undoes [`rotate_vec`] with the same angle.
pub fn inverse_rotate_vec(t: Vec2, alpha: f64) -> Vec2 {
    let (s, c) = alpha.sin_cos();
    Vec2::new(t.x * c + t.y * s, t.y * c - t.x * s)
}

/// Angle that rotates the increment `z2 − z1` onto the positive x-axis.
pub fn rotation_angle(z1: Vec2, z2: Vec2) -> Result<f64> {
    let d = z2 - z1;
    if d.x == 0.0 && d.y == 0.0 {
        return Err(PreprocessError::DegenerateBasis);
    }
    Ok(-d.y.atan2(d.x))
}

/// Whether windows are aligned to their first increment. `Identity` keeps
/// the raw orientation and is only meant for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationMode {
    #[default]
    Aligned,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub points: Vec<Vec2>,
    pub track_id: u64,
    /// 1-based position of the window's first point in the source sequence.
    pub start_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotatedWindow {
    pub points: Vec<Vec2>,
    pub alpha: f64,
}

pub fn window_tracks(track_id: u64, seq: &[Vec2], tau: usize) -> Result<Vec<Window>> {
    if tau < 2 {
        return Err(PreprocessError::InvalidTau(tau));
    }
    if seq.len() < tau {
        return Err(PreprocessError::InsufficientLength { len: seq.len(), tau });
    }
    Ok(seq
        .windows(tau)
        .enumerate()
        .map(|(i, w)| Window { points: w.to_vec(), track_id, start_index: i + 1 })
        .collect())
}

/// Rotates a point sequence about its first point so the first increment
/// lies on the positive x-axis, preserving every segment length.
pub fn rotate_points(points: &[Vec2], mode: RotationMode) -> Result<RotatedWindow> {
    if points.len() < 2 {
        return Err(PreprocessError::InsufficientLength { len: points.len(), tau: 2 });
    }
    let alpha = match mode {
        RotationMode::Aligned => rotation_angle(points[0], points[1])?,
        RotationMode::Identity => return Ok(RotatedWindow { points: points.to_vec(), alpha: 0.0 }),
    };
    let mut out = Vec::with_capacity(points.len());
    out.push(points[0]);
    for pair in points.windows(2) {
        let prev = *out.last().expect("seeded with the first point");
        out.push(rotate_vec(pair[1] - pair[0], alpha) + prev);
    }
    Ok(RotatedWindow { points: out, alpha })
}

pub fn rotate_window(w: &Window) -> Result<RotatedWindow> {
    rotate_points(&w.points, RotationMode::Aligned)
}

/// Relative-displacement features; `None` marks a missing slot.
///
/// Layout: `τ − 1` slots ordered oldest to newest, each contributing its x
/// then its y displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<Option<f64>>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_missing(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }
}

/// Features for a history of `k ≤ τ` rotated points, the last being the
/// current measurement. The history is left-padded to `τ` slots.
pub fn history_features(rotated: &[Vec2], tau: usize) -> Result<FeatureVector> {
    let k = rotated.len();
    if tau < 2 {
        return Err(PreprocessError::InvalidTau(tau));
    }
    if k == 0 || k > tau {
        return Err(PreprocessError::InWindowTime { k, tau });
    }
    let current = rotated[k - 1];
    let pad = tau - k;
    let mut values = Vec::with_capacity(2 * (tau - 1));
    for slot in 0..tau - 1 {
        if slot < pad {
            values.push(None);
            values.push(None);
        } else {
            let d = rotated[slot - pad] - current;
            values.push(Some(d.x));
            values.push(Some(d.y));
        }
    }
    Ok(FeatureVector { values })
}

/// Features of the sample at in-window time `k` (1-based).
pub fn extract_features(rw: &RotatedWindow, k: usize) -> Result<FeatureVector> {
    let tau = rw.points.len();
    if k == 0 || k > tau {
        return Err(PreprocessError::InWindowTime { k, tau });
    }
    history_features(&rw.points[..k], tau)
}

/// Truth-minus-measurement error expressed in the rotated frame.
pub fn rotate_target(x: Vec2, z: Vec2, alpha: f64) -> Vec2 {
    rotate_vec(x - z, alpha)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: FeatureVector,
    pub target: Vec2,
    pub alpha: f64,
    pub track_id: u64,
    /// 1-based window position within its track.
    pub window_index: usize,
    /// 1-based in-window time.
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleMeta {
    pub track_id: u64,
    pub window_index: usize,
    pub k: usize,
    pub alpha: f64,
}

/// A window dropped during dataset assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkippedWindow {
    pub track_id: u64,
    pub window_index: usize,
}

/// Column-compact sample set, ordered by (track, window, k).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub tau: usize,
    pub features: FeatureMatrix,
    pub targets: Vec<Vec2>,
    pub meta: Vec<SampleMeta>,
    pub skipped: Vec<SkippedWindow>,
}

impl Dataset {
    fn empty(tau: usize) -> Self {
        Self {
            tau,
            features: FeatureMatrix::new(2 * (tau - 1)),
            targets: Vec::new(),
            meta: Vec::new(),
            skipped: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.n_features()
    }

    pub fn sample(&self, i: usize) -> Sample {
        let m = self.meta[i];
        let values = (0..self.n_features()).map(|f| self.features.get(i, f)).collect();
        Sample {
            features: FeatureVector { values },
            target: self.targets[i],
            alpha: m.alpha,
            track_id: m.track_id,
            window_index: m.window_index,
            k: m.k,
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = Sample> + '_ {
        (0..self.len()).map(|i| self.sample(i))
    }

    pub fn target_component(&self, axis: usize) -> Vec<f64> {
        self.targets.iter().map(|t| t[axis]).collect()
    }

    fn push(&mut self, features: &FeatureVector, target: Vec2, meta: SampleMeta) -> Result<()> {
        self.features.push_row(&features.values)?;
        self.targets.push(target);
        self.meta.push(meta);
        Ok(())
    }

    fn append(&mut self, other: Dataset) -> Result<()> {
        for i in 0..other.len() {
            self.features.push_raw_row(other.features.row(i))?;
        }
        self.targets.extend(other.targets);
        self.meta.extend(other.meta);
        self.skipped.extend(other.skipped);
        Ok(())
    }
}

fn build_track(track: &TrackPair, tau: usize, mode: RotationMode) -> Result<Dataset> {
    let meas = track.measured_positions();
    let truth = track.true_positions();
    let windows = window_tracks(track.track_id, &meas, tau)?;
    let mut out = Dataset::empty(tau);
    for w in &windows {
        let rw = match rotate_points(&w.points, mode) {
            Ok(rw) => rw,
            Err(PreprocessError::DegenerateBasis) => {
                out.skipped.push(SkippedWindow { track_id: track.track_id, window_index: w.start_index });
                continue;
            }
            Err(e) => return Err(e),
        };
        for k in 1..=tau {
            let features = extract_features(&rw, k)?;
            let at = w.start_index - 1 + k - 1;
            let target = rotate_target(truth[at], meas[at], rw.alpha);
            let meta = SampleMeta { track_id: track.track_id, window_index: w.start_index, k, alpha: rw.alpha };
            out.push(&features, target, meta)?;
        }
    }
    Ok(out)
}

/// Builds `N (T − τ + 1) τ` samples from aligned windows.
pub fn build_dataset(tracks: &[TrackPair], tau: usize) -> Result<Dataset> {
    build_dataset_with(tracks, tau, RotationMode::Aligned)
}

/// As [`build_dataset`], with the rotation step selectable. Windows whose
/// first two measurements coincide are skipped and listed in `skipped`.
pub fn build_dataset_with(tracks: &[TrackPair], tau: usize, mode: RotationMode) -> Result<Dataset> {
    if tau < 2 {
        return Err(PreprocessError::InvalidTau(tau));
    }
    let parts: Vec<Dataset> = tracks
        .par_iter()
        .map(|t| build_track(t, tau, mode))
        .collect::<Result<_>>()?;
    let total: usize = parts.iter().map(Dataset::len).sum();
    let mut out = Dataset::empty(tau);
    out.features = FeatureMatrix::with_capacity(2 * (tau - 1), total);
    out.targets.reserve(total);
    out.meta.reserve(total);
    for p in parts {
        out.append(p)?;
    }
    Ok(out)
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Writes samples as CSV; missing features are empty cells.
pub fn write_samples<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["track_id".to_string(), "window_index".into(), "k".into(), "alpha".into()];
    header.extend((1..=ds.n_features()).map(|i| format!("f_{i}")));
    header.push("target_x".into());
    header.push("target_y".into());
    wtr.write_record(&header)?;
    for i in 0..ds.len() {
        let m = ds.meta[i];
        let mut rec = vec![m.track_id.to_string(), m.window_index.to_string(), m.k.to_string(), fmt_f64(m.alpha)];
        rec.extend(ds.features.row(i).iter().map(|&v| if v.is_nan() { String::new() } else { fmt_f64(v) }));
        rec.push(fmt_f64(ds.targets[i].x));
        rec.push(fmt_f64(ds.targets[i].y));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_samples<R: Read>(input: R) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let n_cols = headers.len();
    if n_cols < 8 || (n_cols - 6) % 2 != 0 {
        return Err(PreprocessError::Format(format!("unexpected column count {n_cols}")));
    }
    let n_features = n_cols - 6;
    let tau = n_features / 2 + 1;
    let mut ds = Dataset::empty(tau);
    let parse = |s: &str, what: &str| -> Result<f64> {
        s.parse::<f64>().map_err(|_| PreprocessError::Format(format!("bad {what}: {s:?}")))
    };
    let parse_int = |s: &str, what: &str| -> Result<u64> {
        s.parse::<u64>().map_err(|_| PreprocessError::Format(format!("bad {what}: {s:?}")))
    };
    for rec in rdr.records() {
        let rec = rec?;
        let meta = SampleMeta {
            track_id: parse_int(&rec[0], "track_id")?,
            window_index: parse_int(&rec[1], "window_index")? as usize,
            k: parse_int(&rec[2], "k")? as usize,
            alpha: parse(&rec[3], "alpha")?,
        };
        let values = (4..4 + n_features)
            .map(|c| if rec[c].is_empty() { Ok(None) } else { parse(&rec[c], "feature").map(Some) })
            .collect::<Result<Vec<_>>>()?;
        let target = Vec2::new(parse(&rec[n_cols - 2], "target_x")?, parse(&rec[n_cols - 1], "target_y")?);
        ds.push(&FeatureVector { values }, target, meta)?;
    }
    Ok(ds)
}
