//! Monte Carlo comparisons of the raw measurements, a Kalman filter and the
//! learned filter, and the files they produce.
//!
//! A run simulates a training and a test set from an [`ExperimentSpec`],
//! trains the filter (plus the unrotated variant for ablations), filters
//! every test track with each method and reduces the errors to one
//! position RMSE per time step. Result files are a function of the spec
//! alone.

mod config;
mod output;
mod sweep;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gbt::TrainParams;
use crate::kalman::{kf_run, KalmanError, KfAssumption, KfModel};
use crate::preprocess::RotationMode;
use crate::simkit::{simulate_tracks, ScenarioConfig, SimError, TrackPair};
use crate::slf::{slf_filter_tracks, slf_train_with, SlfError, SlfModel, TrainingSummary};
use crate::Vec2;

pub use config::{derive_seeds, ExperimentConfig, Plan, Preset, Profile, QR_GRID};
pub use output::{align_estimates, read_estimates, read_series_csv, render_svg, write_estimates, write_series_csv, EstimateRow};
pub use sweep::{sweep_hyperparams, write_sweep_csv, SweepAxis, SweepRow, SweepTable};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("summary does not match {path}: {message}")]
    Inconsistent { path: PathBuf, message: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Kalman(#[from] KalmanError),
    #[error(transparent)]
    Slf(#[from] SlfError),
}

pub type Result<T> = std::result::Result<T, BenchError>;

impl BenchError {
    pub(crate) fn file(path: &Path, err: impl std::fmt::Display) -> Self {
        BenchError::File { path: path.to_path_buf(), message: err.to_string() }
    }
}

/// Position RMSE per time step `k = 1..=T` (stored 0-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseSeries {
    pub label: String,
    pub values: Vec<f64>,
}

impl RmseSeries {
    /// Mean of the values at `k ∈ [lo, hi]` (1-based, inclusive).
    pub fn mean_over(&self, (lo, hi): (usize, usize)) -> f64 {
        mean_over(&self.values, (lo, hi))
    }
}

fn mean_over(values: &[f64], (lo, hi): (usize, usize)) -> f64 {
    let window = &values[lo - 1..hi];
    window.iter().sum::<f64>() / window.len() as f64
}

/// `sqrt(mean_j ‖est_j(k) − truth_j(k)‖²)` for every `k`.
pub fn rmse_series(label: &str, estimates: &[Vec<Vec2>], truth: &[Vec<Vec2>]) -> Result<RmseSeries> {
    if estimates.len() != truth.len() || estimates.is_empty() {
        return Err(BenchError::Shape(format!(
            "{} estimate tracks for {} truth tracks",
            estimates.len(),
            truth.len()
        )));
    }
    let steps = truth[0].len();
    for (j, (e, t)) in estimates.iter().zip(truth).enumerate() {
        if e.len() != steps || t.len() != steps {
            return Err(BenchError::Shape(format!(
                "track {j}: {} estimates and {} truth points, expected {steps}",
                e.len(),
                t.len()
            )));
        }
    }
    let n = estimates.len() as f64;
    let values = (0..steps)
        .map(|k| {
            let sq: f64 = estimates.iter().zip(truth).map(|(e, t)| (e[k] - t[k]).norm_squared()).sum();
            (sq / n).sqrt()
        })
        .collect();
    Ok(RmseSeries { label: label.to_string(), values })
}

/// Everything that determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub preset: Preset,
    /// Seed the train and test seeds were derived from.
    pub seed: u64,
    pub train: ScenarioConfig,
    pub test: ScenarioConfig,
    pub tau: usize,
    pub params: TrainParams,
    /// Noise levels the Kalman filter assumes.
    pub kf: KfAssumption,
    /// Also train the filter without rotation alignment.
    pub ablation: bool,
    /// Steps averaged in the summary; `[τ, T]` when absent.
    pub k_range: Option<(usize, usize)>,
    /// Not written to `spec.toml`, so that a run's files do not depend on
    /// where they were written.
    #[serde(skip)]
    pub output_dir: PathBuf,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BenchError::InvalidSpec(m));
        if self.train.seed == self.test.seed {
            return bad(format!("train and test seeds must differ, both are {}", self.train.seed));
        }
        if self.train.dt != self.test.dt {
            return bad("train and test sets must share dt".into());
        }
        if self.tau < 2 || self.tau > self.train.steps {
            return bad(format!("tau {} must lie in 2..={}", self.tau, self.train.steps));
        }
        self.train.validate()?;
        self.test.validate()?;
        self.params.validate().map_err(|e| BenchError::InvalidSpec(e.to_string()))?;
        let (lo, hi) = self.resolved_k_range();
        if lo < 1 || lo > hi || hi > self.test.steps {
            return bad(format!("k range [{lo}, {hi}] outside 1..={}", self.test.steps));
        }
        Ok(())
    }

    pub fn resolved_k_range(&self) -> (usize, usize) {
        self.k_range.unwrap_or((self.tau, self.test.steps))
    }
}

/// In-memory outcome of one run.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    /// `meas`, `kf`, `slf` and, for ablations, `slf_norot`.
    pub series: Vec<RmseSeries>,
    pub model: SlfModel,
    pub model_norot: Option<SlfModel>,
    pub test_fingerprint: String,
}

impl ExperimentResult {
    pub fn series(&self, label: &str) -> Option<&RmseSeries> {
        self.series.iter().find(|s| s.label == label)
    }

    /// Mean of the named series over the summary window.
    pub fn mean(&self, label: &str) -> Option<f64> {
        self.series(label).map(|s| s.mean_over(self.spec.resolved_k_range()))
    }
}

/// Kalman position estimates for every track.
pub fn kf_estimates(tracks: &[TrackPair], assumption: &KfAssumption, dt: f64) -> Result<Vec<Vec<Vec2>>> {
    let model = KfModel::from_assumption(dt, assumption)?;
    Ok(tracks.par_iter().map(|t| kf_run(&t.meas, &model, dt)).collect::<std::result::Result<_, _>>()?)
}

/// Filters `test` with the trained models and the Kalman filter and
/// returns the per-step RMSE of each method.
pub fn evaluate_filters(
    test: &[TrackPair],
    kf: &KfAssumption,
    dt: f64,
    models: &[(&str, &SlfModel)],
) -> Result<Vec<RmseSeries>> {
    let truth: Vec<Vec<Vec2>> = test.iter().map(TrackPair::true_positions).collect();
    let meas: Vec<Vec<Vec2>> = test.iter().map(TrackPair::measured_positions).collect();
    let mut series = vec![
        rmse_series("meas", &meas, &truth)?,
        rmse_series("kf", &kf_estimates(test, kf, dt)?, &truth)?,
    ];
    for (label, model) in models {
        let est: Vec<Vec<Vec2>> = slf_filter_tracks(model, test)?
            .into_iter()
            .map(|track| track.into_iter().map(|e| e.position).collect())
            .collect();
        series.push(rmse_series(label, &est, &truth)?);
    }
    Ok(series)
}

/// Simulates, trains and evaluates without touching the file system.
pub fn evaluate_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let train = simulate_tracks(&spec.train)?;
    let test = simulate_tracks(&spec.test)?;
    let model = slf_train_with(&train, spec.tau, &spec.params, RotationMode::Aligned)?;
    let model_norot = if spec.ablation {
        Some(slf_train_with(&train, spec.tau, &spec.params, RotationMode::Identity)?)
    } else {
        None
    };
    let mut models = vec![("slf", &model)];
    if let Some(m) = &model_norot {
        models.push(("slf_norot", m));
    }
    let series = evaluate_filters(&test, &spec.kf, spec.test.dt, &models)?;
    let test_fingerprint = crate::slf::dataset_fingerprint(&test);
    Ok(ExperimentResult { spec: spec.clone(), series, model, model_norot, test_fingerprint })
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub preset: Preset,
    pub seed: u64,
    pub train_seed: u64,
    pub test_seed: u64,
    pub n_train_tracks: usize,
    pub n_test_tracks: usize,
    pub steps: usize,
    pub tau: usize,
    pub params: TrainParams,
    pub kf: KfAssumption,
    pub k_range: (usize, usize),
    /// Mean RMSE over `k_range` per series label.
    pub mean_rmse: BTreeMap<String, f64>,
    pub training: BTreeMap<String, TrainingSummary>,
    pub test_fingerprint: String,
    /// Set once the means were recomputed from the written CSV.
    pub consistency_check: String,
}

/// Paths of the files written by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub plot: PathBuf,
    pub spec: PathBuf,
    pub models: Vec<PathBuf>,
}

pub const SERIES_CSV: &str = "rmse.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const PLOT_SVG: &str = "rmse.svg";
pub const SPEC_TOML: &str = "spec.toml";

/// Runs the experiment and writes `rmse.csv`, `summary.json`, `rmse.svg`,
/// `spec.toml` and the model bundles into the spec's output directory.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<(ExperimentResult, RunFiles)> {
    let result = evaluate_experiment(spec)?;
    let files = write_result(&result)?;
    Ok((result, files))
}

pub fn write_result(result: &ExperimentResult) -> Result<RunFiles> {
    let spec = &result.spec;
    let dir = &spec.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| BenchError::file(dir, e))?;
    let k_range = spec.resolved_k_range();

    let csv = dir.join(SERIES_CSV);
    write_series_csv(&result.series, &csv)?;
    let mean_rmse: Vec<(String, f64)> =
        result.series.iter().map(|s| (s.label.clone(), s.mean_over(k_range))).collect();
    check_consistency(&csv, &mean_rmse, k_range)?;

    let mut training = BTreeMap::from([("slf".to_string(), result.model.summary.clone())]);
    let mut models = vec![dir.join("model")];
    crate::slf::save_bundle(&result.model, &models[0])?;
    if let Some(m) = &result.model_norot {
        training.insert("slf_norot".to_string(), m.summary.clone());
        models.push(dir.join("model_norot"));
        crate::slf::save_bundle(m, &models[1])?;
    }
    let summary = Summary {
        preset: spec.preset,
        seed: spec.seed,
        train_seed: spec.train.seed,
        test_seed: spec.test.seed,
        n_train_tracks: spec.train.n_tracks,
        n_test_tracks: spec.test.n_tracks,
        steps: spec.test.steps,
        tau: spec.tau,
        params: spec.params,
        kf: spec.kf,
        k_range,
        mean_rmse: mean_rmse.into_iter().collect(),
        training,
        test_fingerprint: result.test_fingerprint.clone(),
        consistency_check: "passed".into(),
    };
    let summary_path = dir.join(SUMMARY_JSON);
    let text = serde_json::to_string_pretty(&summary).map_err(|e| BenchError::file(&summary_path, e))?;
    std::fs::write(&summary_path, text + "\n").map_err(|e| BenchError::file(&summary_path, e))?;

    let plot = dir.join(PLOT_SVG);
    let title = format!("{} (seed {})", spec.preset, spec.seed);
    std::fs::write(&plot, render_svg(&title, &result.series)).map_err(|e| BenchError::file(&plot, e))?;

    let spec_path = dir.join(SPEC_TOML);
    let text = toml::to_string_pretty(spec).map_err(|e| BenchError::file(&spec_path, e))?;
    std::fs::write(&spec_path, text).map_err(|e| BenchError::file(&spec_path, e))?;

    Ok(RunFiles { csv, summary: summary_path, plot, spec: spec_path, models })
}

pub const GRID_CSV: &str = "grid_summary.csv";

/// Runs every experiment of `plan` and writes its files. Returns one
/// human-readable line per run or sweep row.
pub fn execute_plan(plan: &Plan) -> Result<Vec<String>> {
    let mut report = Vec::new();
    let line = |r: &ExperimentResult| {
        let means: Vec<String> = r
            .series
            .iter()
            .map(|s| format!("{}={:.4}", s.label, s.mean_over(r.spec.resolved_k_range())))
            .collect();
        format!("{}: {}", r.spec.output_dir.display(), means.join(" "))
    };
    match plan {
        Plan::Single(spec) => {
            let (r, _) = run_experiment(spec)?;
            report.push(line(&r));
        }
        Plan::Grid(runs) => {
            let mut done: Vec<ExperimentResult> = Vec::new();
            for (_, spec) in runs {
                // Grid points shared between panels are computed once.
                let same = |r: &&ExperimentResult| ExperimentSpec { output_dir: spec.output_dir.clone(), ..r.spec.clone() } == *spec;
                let r = match done.iter().find(same) {
                    Some(r) => ExperimentResult { spec: spec.clone(), ..r.clone() },
                    None => evaluate_experiment(spec)?,
                };
                write_result(&r)?;
                report.push(line(&r));
                done.push(r);
            }
            let root = runs[0].1.output_dir.parent().unwrap_or(Path::new("."));
            write_grid_csv(runs, &done, &root.join(GRID_CSV))?;
        }
        Plan::Sweep { base, axes } => {
            std::fs::create_dir_all(&base.output_dir).map_err(|e| BenchError::file(&base.output_dir, e))?;
            for (axis, values) in axes {
                let table = sweep_hyperparams(base, *axis, values)?;
                let path = base.output_dir.join(format!("sweep_{axis}.csv"));
                write_sweep_csv(&table, &path)?;
                for r in &table.rows {
                    report.push(format!(
                        "{axis}={}: meas={:.4} kf={:.4} slf={:.4}",
                        r.value, r.mean_meas, r.mean_kf, r.mean_slf
                    ));
                }
            }
        }
    }
    Ok(report)
}

fn write_grid_csv(runs: &[(String, ExperimentSpec)], results: &[ExperimentResult], path: &Path) -> Result<()> {
    let err = |e: csv::Error| BenchError::file(path, e);
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["label", "qs", "vx2", "vy2", "mean_rmse_meas", "mean_rmse_kf", "mean_rmse_slf"])
        .map_err(err)?;
    for ((label, spec), r) in runs.iter().zip(results) {
        let qs = spec.test.process.intensity_at(1);
        let (vx2, vy2, _) = spec.test.measurement.parts();
        let mut rec = vec![label.clone()];
        rec.extend([qs, vx2, vy2].iter().map(|v| format!("{v}")));
        rec.extend(["meas", "kf", "slf"].iter().map(|l| format!("{}", r.mean(l).unwrap_or(f64::NAN))));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| BenchError::file(path, e))
}

/// Re-reads the written series and recomputes every mean.
fn check_consistency(csv: &Path, means: &[(String, f64)], k_range: (usize, usize)) -> Result<()> {
    let read = read_series_csv(csv)?;
    if read.len() != means.len() {
        return Err(BenchError::Inconsistent {
            path: csv.to_path_buf(),
            message: format!("{} series in file, {} in summary", read.len(), means.len()),
        });
    }
    for (s, (label, mean)) in read.iter().zip(means) {
        let again = s.mean_over(k_range);
        if &s.label != label || again.to_bits() != mean.to_bits() {
            return Err(BenchError::Inconsistent {
                path: csv.to_path_buf(),
                message: format!("{label}: summary mean {mean}, file gives {} = {again}", s.label),
            });
        }
    }
    Ok(())
}
