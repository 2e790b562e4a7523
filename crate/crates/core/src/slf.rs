//! The supervised-learning filter: training on preprocessed windows and
//! online estimation.
//!
//! Training fits one boosted model per coordinate of the rotated error
//! `R(x − z, α)`. Estimation rebuilds the same features from the trailing
//! window of measurements, predicts the rotated error, rotates it back with
//! the window's own angle and adds it to the current measurement.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gbt::{BoostedModel, GbtError, TrainParams, Trainer};
use crate::preprocess::{
    build_dataset_with, history_features, inverse_rotate_vec, rotate_points, PreprocessError, RotationMode,
};
use crate::simkit::{Measurement, TrackPair};
use crate::Vec2;

#[derive(Debug, Error)]
pub enum SlfError {
    #[error("need at least 2 measurements, got {0}")]
    InsufficientHistory(usize),
    #[error("no training samples")]
    EmptyDataset,
    #[error("models disagree: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Gbt(#[from] GbtError),
    #[error("model bundle {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("model bundle manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SlfError>;

/// Facts about the training run, kept with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    /// Pooled position RMSE of the fitted rotated errors over all samples.
    pub rmse: f64,
    pub n_samples: usize,
    pub n_tracks: usize,
    /// Windows dropped because their first two measurements coincide.
    pub n_skipped_windows: usize,
    /// SHA-256 of the training tracks, see [`dataset_fingerprint`].
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlfModel {
    pub model_x: BoostedModel,
    pub model_y: BoostedModel,
    pub tau: usize,
    pub train_params: TrainParams,
    pub rotation: RotationMode,
    pub summary: TrainingSummary,
}

/// How an estimate was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateSource {
    Model,
    /// First step of a track; there is no rotation basis yet.
    FirstMeasurement,
    /// The window's first two measurements coincide.
    DegenerateBasis,
}

impl EstimateSource {
    pub fn name(self) -> &'static str {
        match self {
            Self::Model => "model",
            Self::FirstMeasurement => "first_measurement",
            Self::DegenerateBasis => "degenerate_basis",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub position: Vec2,
    pub source: EstimateSource,
}

impl Estimate {
    fn raw(z: &Measurement, source: EstimateSource) -> Self {
        Self { position: z.position(), source }
    }
}

/// Hash of track ids, measurements and truth, in order, over the exact bit
/// patterns of every value.
pub fn dataset_fingerprint(tracks: &[TrackPair]) -> String {
    let mut h = Sha256::new();
    for t in tracks {
        h.update(t.track_id.to_le_bytes());
        h.update((t.meas.len() as u64).to_le_bytes());
        for (x, z) in t.truth.iter().zip(&t.meas) {
            for v in [z.zx, z.zy, x.px, x.vx, x.py, x.vy] {
                h.update(v.to_bits().to_le_bytes());
            }
        }
    }
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn slf_train(tracks: &[TrackPair], tau: usize, params: &TrainParams) -> Result<SlfModel> {
    slf_train_with(tracks, tau, params, RotationMode::Aligned)
}

/// Builds the sample set and fits the x and y error models on it. With
/// [`RotationMode::Identity`] windows keep their raw heading, which is the
/// ablation variant.
pub fn slf_train_with(tracks: &[TrackPair], tau: usize, params: &TrainParams, rotation: RotationMode) -> Result<SlfModel> {
    params.validate()?;
    let ds = build_dataset_with(tracks, tau, rotation)?;
    if ds.is_empty() {
        return Err(SlfError::EmptyDataset);
    }
    let trainer = Trainer::new(&ds.features);
    let fit_x = trainer.fit(&ds.target_component(0), params)?;
    let fit_y = trainer.fit(&ds.target_component(1), params)?;
    let summary = TrainingSummary {
        rmse: (fit_x.final_mse() + fit_y.final_mse()).sqrt(),
        n_samples: ds.len(),
        n_tracks: tracks.len(),
        n_skipped_windows: ds.skipped.len(),
        fingerprint: dataset_fingerprint(tracks),
    };
    Ok(SlfModel { model_x: fit_x.model, model_y: fit_y.model, tau, train_params: *params, rotation, summary })
}

impl SlfModel {
    /// Rotated error predicted from raw features (NaN = missing).
    fn predict_rotated(&self, row: &[f64]) -> Vec2 {
        Vec2::new(self.model_x.predict_raw(row), self.model_y.predict_raw(row))
    }

    fn check(&self) -> Result<()> {
        if self.tau < 2 {
            return Err(SlfError::Preprocess(PreprocessError::InvalidTau(self.tau)));
        }
        let n = 2 * (self.tau - 1);
        for (name, m) in [("x", &self.model_x), ("y", &self.model_y)] {
            if m.n_features != n {
                return Err(SlfError::Inconsistent(format!(
                    "model_{name} has {} features, tau {} needs {n}",
                    m.n_features, self.tau
                )));
            }
        }
        Ok(())
    }
}

/// Estimate for the last of `recent`, which holds the trailing measurements
/// of a track (only the last `τ` are used).
pub fn slf_estimate_point(model: &SlfModel, recent: &[Measurement]) -> Result<Estimate> {
    if recent.len() < 2 {
        return Err(SlfError::InsufficientHistory(recent.len()));
    }
    let window = &recent[recent.len().saturating_sub(model.tau)..];
    let current = window.last().expect("at least two measurements");
    let points: Vec<Vec2> = window.iter().map(Measurement::position).collect();
    let rw = match rotate_points(&points, model.rotation) {
        Ok(rw) => rw,
        Err(PreprocessError::DegenerateBasis) => return Ok(Estimate::raw(current, EstimateSource::DegenerateBasis)),
        Err(e) => return Err(e.into()),
    };
    let fv = history_features(&rw.points, model.tau)?;
    let row: Vec<f64> = fv.values.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    let err = inverse_rotate_vec(model.predict_rotated(&row), rw.alpha);
    Ok(Estimate { position: err + current.position(), source: EstimateSource::Model })
}

/// Online filtering of one track. Step `k` only sees measurements `1..=k`;
/// the first step passes the raw measurement through.
pub fn slf_filter_track(model: &SlfModel, meas: &[Measurement]) -> Result<Vec<Estimate>> {
    if meas.len() < 2 {
        return Err(SlfError::InsufficientHistory(meas.len()));
    }
    let mut out = Vec::with_capacity(meas.len());
    out.push(Estimate::raw(&meas[0], EstimateSource::FirstMeasurement));
    for k in 2..=meas.len() {
        out.push(slf_estimate_point(model, &meas[..k])?);
    }
    Ok(out)
}

/// [`slf_filter_track`] over many tracks, in parallel; output order
/// follows input order.
pub fn slf_filter_tracks(model: &SlfModel, tracks: &[TrackPair]) -> Result<Vec<Vec<Estimate>>> {
    tracks.par_iter().map(|t| slf_filter_track(model, &t.meas)).collect()
}

const MODEL_X: &str = "model_x.json";
const MODEL_Y: &str = "model_y.json";
const MANIFEST: &str = "manifest.json";

/// Contents of `manifest.json` in a model bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tau: usize,
    pub rotation: RotationMode,
    pub train_params: TrainParams,
    pub training: TrainingSummary,
    /// SHA-256 of each model file, checked on load.
    pub model_x_sha256: String,
    pub model_y_sha256: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SlfError + '_ {
    move |source| SlfError::Io { path: path.display().to_string(), source }
}

fn dump_bytes(m: &BoostedModel) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    m.dump(&mut buf)?;
    buf.push(b'\n');
    Ok(buf)
}

/// Writes `model_x.json`, `model_y.json` and `manifest.json` into `dir`,
/// creating it if needed.
pub fn save_bundle(model: &SlfModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let x = dump_bytes(&model.model_x)?;
    let y = dump_bytes(&model.model_y)?;
    let manifest = Manifest {
        tau: model.tau,
        rotation: model.rotation,
        train_params: model.train_params,
        training: model.summary.clone(),
        model_x_sha256: hex(&Sha256::digest(&x)),
        model_y_sha256: hex(&Sha256::digest(&y)),
    };
    for (name, bytes) in [(MODEL_X, x), (MODEL_Y, y)] {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    let path = dir.join(MANIFEST);
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n").map_err(io_err(&path))?;
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<SlfModel> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read(&path).map_err(io_err(&path))
    };
    let manifest: Manifest = serde_json::from_slice(&read(MANIFEST)?)?;
    let mut models = Vec::with_capacity(2);
    for (name, want) in [(MODEL_X, &manifest.model_x_sha256), (MODEL_Y, &manifest.model_y_sha256)] {
        let bytes = read(name)?;
        let got = hex(&Sha256::digest(&bytes));
        if &got != want {
            return Err(SlfError::Inconsistent(format!("{name} hash {got} does not match manifest {want}")));
        }
        models.push(BoostedModel::load(bytes.as_slice())?);
    }
    let model_y = models.pop().expect("two models");
    let model_x = models.pop().expect("two models");
    let model = SlfModel {
        model_x,
        model_y,
        tau: manifest.tau,
        train_params: manifest.train_params,
        rotation: manifest.rotation,
        summary: manifest.training,
    };
    model.check()?;
    Ok(model)
}
