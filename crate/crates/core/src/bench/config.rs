//! Scenario presets, run profiles and the configuration file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::sweep::SweepAxis;
use super::{BenchError, ExperimentSpec, Result};
use crate::gbt::TrainParams;
use crate::kalman::KfAssumption;
use crate::simkit::{InitBox, MeasNoiseSpec, ProcessNoiseSpec, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Matched Gaussian noise, T = 50.
    General,
    /// Hyperparameter sweeps on the general scenario.
    Sweep,
    /// Training and test targets start in opposite quadrants.
    Ablation,
    /// Process noise intensity grows with time; the filter assumes qs = 1.
    Special1,
    /// Gaussian plus exponential process noise; the filter assumes Gaussian.
    Special2,
    /// As `Special2`, with measurement noise multiplied by an exponential draw.
    Special3,
    /// Grid over process noise intensity and measurement variances.
    QrGrid,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::General,
        Preset::Sweep,
        Preset::Ablation,
        Preset::Special1,
        Preset::Special2,
        Preset::Special3,
        Preset::QrGrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::General => "general",
            Preset::Sweep => "sweep",
            Preset::Ablation => "ablation",
            Preset::Special1 => "special1",
            Preset::Special2 => "special2",
            Preset::Special3 => "special3",
            Preset::QrGrid => "qr-grid",
        }
    }

    /// Number of time steps per track.
    pub fn steps(self) -> usize {
        match self {
            Preset::General | Preset::Sweep => 50,
            _ => 30,
        }
    }

    /// Steps averaged in summaries when the configuration names none;
    /// `None` means `[τ, T]`.
    pub fn default_k_range(self) -> Option<(usize, usize)> {
        (self.steps() == 30).then_some((10, 30))
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| BenchError::InvalidSpec(format!("unknown preset {s:?}")))
    }
}

/// Data and model size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// 2000 training tracks, 500 test tracks, 200 rounds.
    #[default]
    Desk,
    /// 10000 training tracks, 5000 test tracks, 500 rounds.
    Paper,
}

impl Profile {
    /// `(train tracks, test tracks, boosting rounds)`.
    pub fn sizes(self) -> (usize, usize, usize) {
        match self {
            Profile::Desk => (2000, 500, 200),
            Profile::Paper => (10000, 5000, 500),
        }
    }
}

impl FromStr for Profile {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(BenchError::InvalidSpec(format!("unknown profile {s:?}"))),
        }
    }
}

/// Train and test seeds drawn from one master seed, so that neighbouring
/// master seeds do not share data sets.
pub fn derive_seeds(seed: u64) -> (u64, u64) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (rng.next_u64(), rng.next_u64())
}

/// Grid points of the `qr-grid` preset as `(label, qs, vx2, vy2)`: the
/// process noise panel at R = diag(30, 20), then the measurement noise
/// panel at qs = 1.
pub const QR_GRID: [(&str, f64, f64, f64); 8] = [
    ("qs-0.01", 0.01, 30.0, 20.0),
    ("qs-0.1", 0.1, 30.0, 20.0),
    ("qs-1", 1.0, 30.0, 20.0),
    ("qs-3", 3.0, 30.0, 20.0),
    ("r-3x2", 1.0, 3.0, 2.0),
    ("r-8x5", 1.0, 8.0, 5.0),
    ("r-15x10", 1.0, 15.0, 10.0),
    ("r-30x20", 1.0, 30.0, 20.0),
];

/// Run settings as read from a TOML file or the command line. Every field
/// is optional; unset fields come from the preset and profile.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub profile: Option<Profile>,
    pub train_tracks: Option<usize>,
    pub test_tracks: Option<usize>,
    pub tau: Option<usize>,
    pub nrounds: Option<usize>,
    pub max_depth: Option<usize>,
    pub eta: Option<f64>,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub min_samples_leaf: Option<usize>,
    /// Noise levels the Kalman filter assumes, replacing the preset's.
    pub kf_qs: Option<f64>,
    pub kf_vx2: Option<f64>,
    pub kf_vy2: Option<f64>,
    /// Inclusive 1-based range of steps averaged in summaries.
    pub k_range: Option<[usize; 2]>,
    pub output_dir: Option<PathBuf>,
    pub sweep_axis: Option<SweepAxis>,
    pub sweep_values: Option<Vec<f64>>,
}

/// What a configuration expands to.
#[derive(Debug, Clone)]
pub enum Plan {
    Single(ExperimentSpec),
    /// Independent runs, each writing into its own subdirectory.
    Grid(Vec<(String, ExperimentSpec)>),
    /// Sweeps around a base run; one table per axis.
    Sweep { base: ExperimentSpec, axes: Vec<(SweepAxis, Vec<f64>)> },
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| BenchError::InvalidSpec(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::file(path, e))?;
        toml::from_str(&text).map_err(|e| BenchError::file(path, e))
    }

    /// Fields set in `over` replace those in `self`.
    pub fn merged(self, over: ExperimentConfig) -> Self {
        macro_rules! pick {
            ($($f:ident),*) => { Self { $($f: over.$f.or(self.$f)),* } };
        }
        pick!(
            preset, seed, profile, train_tracks, test_tracks, tau, nrounds, max_depth, eta, lambda, gamma,
            min_samples_leaf, kf_qs, kf_vx2, kf_vy2, k_range, output_dir, sweep_axis, sweep_values
        )
    }

    fn profile(&self) -> Profile {
        self.profile.unwrap_or_default()
    }

    /// Training parameters: profile round count, library defaults otherwise.
    pub fn params(&self) -> TrainParams {
        let d = TrainParams::default();
        TrainParams {
            nrounds: self.nrounds.unwrap_or(self.profile().sizes().2),
            max_depth: self.max_depth.unwrap_or(d.max_depth),
            eta: self.eta.unwrap_or(d.eta),
            lambda: self.lambda.unwrap_or(d.lambda),
            gamma: self.gamma.unwrap_or(d.gamma),
            min_samples_leaf: self.min_samples_leaf.unwrap_or(d.min_samples_leaf),
            base_score: d.base_score,
        }
    }

    fn override_kf(&self, kf: KfAssumption) -> KfAssumption {
        KfAssumption {
            qs: self.kf_qs.unwrap_or(kf.qs),
            vx2: self.kf_vx2.unwrap_or(kf.vx2),
            vy2: self.kf_vy2.unwrap_or(kf.vy2),
        }
    }

    /// The single-scenario spec of `preset` with this configuration's sizes.
    pub fn spec_for(&self, preset: Preset, seed: u64) -> ExperimentSpec {
        let (n_train, n_test, _) = self.profile().sizes();
        let (train_seed, test_seed) = derive_seeds(seed);
        let gaussian_r = MeasNoiseSpec::Gaussian { vx2: 30.0, vy2: 20.0 };
        let assumed = KfAssumption { qs: 1.0, vx2: 30.0, vy2: 20.0 };
        let (process, measurement) = match preset {
            Preset::General | Preset::Sweep | Preset::Ablation | Preset::QrGrid => {
                (ProcessNoiseSpec::Gaussian { qs: 1.0 }, gaussian_r)
            }
            Preset::Special1 => (ProcessNoiseSpec::TimeVarying { slope: 0.5 }, gaussian_r),
            Preset::Special2 => (ProcessNoiseSpec::GaussPlusExp { qs: 1.0, kappa: 1.0 }, gaussian_r),
            Preset::Special3 => (
                ProcessNoiseSpec::GaussPlusExp { qs: 1.0, kappa: 1.0 },
                MeasNoiseSpec::GaussTimesExp { vx2: 30.0, vy2: 20.0, kappa: 1.0 },
            ),
        };
        let (train_box, test_box) = match preset {
            Preset::Ablation => (
                InitBox { px: (0.0, 5000.0), vx: (0.0, 25.0), py: (0.0, 5000.0), vy: (0.0, 30.0) },
                InitBox { px: (-5000.0, 0.0), vx: (-25.0, 0.0), py: (-5000.0, 0.0), vy: (-30.0, 0.0) },
            ),
            _ => (InitBox::default(), InitBox::default()),
        };
        let scenario = |n_tracks, init_box, seed| ScenarioConfig {
            dt: 1.0,
            steps: preset.steps(),
            n_tracks,
            init_box,
            process,
            measurement,
            seed,
        };
        ExperimentSpec {
            preset,
            seed,
            train: scenario(self.train_tracks.unwrap_or(n_train), train_box, train_seed),
            test: scenario(self.test_tracks.unwrap_or(n_test), test_box, test_seed),
            tau: self.tau.unwrap_or(20),
            params: self.params(),
            kf: self.override_kf(assumed),
            ablation: preset == Preset::Ablation,
            k_range: self.k_range.map(|[a, b]| (a, b)).or(preset.default_k_range()),
            output_dir: self.output_dir.clone().unwrap_or_else(|| PathBuf::from("results").join(preset.name())),
        }
    }

    /// The named sweep axis with its values, or every figure axis with
    /// profile defaults.
    pub fn sweep_axes(&self) -> Vec<(SweepAxis, Vec<f64>)> {
        match self.sweep_axis {
            Some(axis) => {
                let values = self.sweep_values.clone().unwrap_or_else(|| axis.default_values(self.profile()));
                vec![(axis, values)]
            }
            None => SweepAxis::FIGURE.iter().map(|&a| (a, a.default_values(self.profile()))).collect(),
        }
    }

    /// Expands the configuration; `preset` and `seed` must be set.
    pub fn plan(&self) -> Result<Plan> {
        let preset = self.preset.ok_or_else(|| BenchError::InvalidSpec("no preset given".into()))?;
        let seed = self.seed.ok_or_else(|| BenchError::InvalidSpec("a seed is required".into()))?;
        let base = self.spec_for(preset, seed);
        let plan = match preset {
            Preset::QrGrid => Plan::Grid(
                QR_GRID
                    .iter()
                    .map(|&(label, qs, vx2, vy2)| {
                        let mut s = base.clone();
                        for sc in [&mut s.train, &mut s.test] {
                            sc.process = ProcessNoiseSpec::Gaussian { qs };
                            sc.measurement = MeasNoiseSpec::Gaussian { vx2, vy2 };
                        }
                        s.kf = self.override_kf(KfAssumption { qs, vx2, vy2 });
                        s.output_dir = base.output_dir.join(label);
                        (label.to_string(), s)
                    })
                    .collect(),
            ),
            Preset::Sweep => Plan::Sweep { base, axes: self.sweep_axes() },
            _ => Plan::Single(base),
        };
        Ok(plan)
    }
}
