//! One-parameter sweeps around a base experiment.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::Profile;
use super::{evaluate_filters, BenchError, ExperimentSpec, Result, RmseSeries};
use crate::preprocess::RotationMode;
use crate::simkit::simulate_tracks;
use crate::slf::{slf_train_with, SlfModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Sliding window length.
    Tau,
    /// Number of training tracks.
    Samples,
    Nrounds,
    MaxDepth,
    Eta,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 5] = [Self::Tau, Self::Samples, Self::Nrounds, Self::MaxDepth, Self::Eta];
    /// Axes swept by `reproduce sweep` when none is named.
    pub const FIGURE: [SweepAxis; 4] = [Self::Tau, Self::Samples, Self::Nrounds, Self::MaxDepth];

    pub fn name(self) -> &'static str {
        match self {
            Self::Tau => "tau",
            Self::Samples => "samples",
            Self::Nrounds => "nrounds",
            Self::MaxDepth => "max_depth",
            Self::Eta => "eta",
        }
    }

    pub fn default_values(self, profile: Profile) -> Vec<f64> {
        let paper = profile == Profile::Paper;
        match self {
            Self::Tau => vec![5.0, 10.0, 20.0, 30.0],
            Self::Samples if paper => vec![1250.0, 2500.0, 5000.0, 10000.0],
            Self::Samples => vec![250.0, 500.0, 1000.0, 2000.0],
            Self::Nrounds if paper => vec![1.0, 100.0, 250.0, 500.0],
            Self::Nrounds => vec![1.0, 50.0, 100.0, 200.0],
            Self::MaxDepth => vec![2.0, 4.0, 6.0, 8.0],
            Self::Eta => vec![0.01, 0.05, 0.1, 0.3],
        }
    }

    fn is_integer(self) -> bool {
        self != Self::Eta
    }

    /// `base` with this axis set to `value`.
    fn apply(self, base: &ExperimentSpec, value: f64) -> ExperimentSpec {
        let mut s = base.clone();
        let n = value as usize;
        match self {
            Self::Tau => s.tau = n,
            Self::Samples => s.train.n_tracks = n,
            Self::Nrounds => s.params.nrounds = n,
            Self::MaxDepth => s.params.max_depth = n,
            Self::Eta => s.params.eta = value,
        }
        s
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| BenchError::InvalidSpec(format!("unknown sweep axis {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub mean_meas: f64,
    pub mean_kf: f64,
    pub mean_slf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub axis: SweepAxis,
    /// Window of the means; the base spec's, whatever the swept value.
    pub k_range: (usize, usize),
    pub rows: Vec<SweepRow>,
}

/// Mean RMSE of each method for every value of `axis`, in the given order.
///
/// The test set and the Kalman baseline do not depend on the swept value
/// and are shared by all rows. Along `nrounds` one model is trained with
/// the largest value and cut back for the smaller ones, which equals
/// training each separately since rounds only append trees.
pub fn sweep_hyperparams(base: &ExperimentSpec, axis: SweepAxis, values: &[f64]) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(BenchError::InvalidSpec("sweep needs at least one value".into()));
    }
    for &v in values {
        if !(v.is_finite() && v > 0.0) || (axis.is_integer() && v.fract() != 0.0) {
            return Err(BenchError::InvalidSpec(format!("{v} is not a valid {axis} value")));
        }
        axis.apply(base, v).validate()?;
    }
    base.validate()?;
    let k_range = base.resolved_k_range();
    let test = simulate_tracks(&base.test)?;
    let evaluate = |model: &SlfModel| -> Result<Vec<RmseSeries>> {
        evaluate_filters(&test, &base.kf, base.test.dt, &[("slf", model)])
    };
    let row = |value: f64, series: Vec<RmseSeries>| {
        let mean = |i: usize| series[i].mean_over(k_range);
        SweepRow { value, mean_meas: mean(0), mean_kf: mean(1), mean_slf: mean(2) }
    };

    let mut rows = Vec::with_capacity(values.len());
    if axis == SweepAxis::Nrounds {
        let top = values.iter().fold(0.0_f64, |a, &b| a.max(b));
        let spec = axis.apply(base, top);
        let train = simulate_tracks(&spec.train)?;
        let full = slf_train_with(&train, spec.tau, &spec.params, RotationMode::Aligned)?;
        for &v in values {
            rows.push(row(v, evaluate(&truncated(&full, v as usize))?));
        }
    } else {
        let mut shared_train = None;
        for &v in values {
            let spec = axis.apply(base, v);
            let train = match (&shared_train, axis) {
                (Some(t), a) if a != SweepAxis::Samples => t,
                _ => shared_train.insert(simulate_tracks(&spec.train)?),
            };
            let model = slf_train_with(train, spec.tau, &spec.params, RotationMode::Aligned)?;
            rows.push(row(v, evaluate(&model)?));
        }
    }
    Ok(SweepTable { axis, k_range, rows })
}

/// The model after its first `nrounds` rounds.
fn truncated(model: &SlfModel, nrounds: usize) -> SlfModel {
    let mut m = model.clone();
    for b in [&mut m.model_x, &mut m.model_y] {
        b.trees.truncate(nrounds);
        b.params.nrounds = nrounds;
    }
    m.train_params.nrounds = nrounds;
    m
}

/// Writes `<axis>,mean_rmse_meas,mean_rmse_kf,mean_rmse_slf`.
pub fn write_sweep_csv(table: &SweepTable, path: &Path) -> Result<()> {
    let err = |e: csv::Error| BenchError::file(path, e);
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record([table.axis.name(), "mean_rmse_meas", "mean_rmse_kf", "mean_rmse_slf"]).map_err(err)?;
    for r in &table.rows {
        w.write_record([r.value, r.mean_meas, r.mean_kf, r.mean_slf].map(|v| format!("{v}"))).map_err(err)?;
    }
    w.flush().map_err(|e| BenchError::file(path, e))
}
