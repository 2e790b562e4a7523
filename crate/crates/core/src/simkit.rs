//! Constant-velocity track simulation.
//!
//! State ordering is `[px, vx, py, vy]` throughout. Each track owns an
//! independent ChaCha stream selected by its track id, so the tracks of a
//! scenario do not depend on how many other tracks are generated.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Vec2;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("dataset file: {0}")]
    Csv(#[from] csv::Error),
    #[error("dataset file: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Kinematic truth: position and velocity per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub px: f64,
    pub vx: f64,
    pub py: f64,
    pub vy: f64,
}

impl StateVector {
    pub fn new(px: f64, vx: f64, py: f64, vy: f64) -> Self {
        Self { px, vx, py, vy }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.px, self.py)
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.px, self.vx, self.py, self.vy)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.px.is_finite() && self.vx.is_finite() && self.py.is_finite() && self.vy.is_finite()
    }
}

/// A position measurement at 1-based time index `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub zx: f64,
    pub zy: f64,
    pub k: usize,
}

impl Measurement {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.zx, self.zy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessNoiseSpec {
    /// White-noise acceleration with intensity `qs`.
    Gaussian { qs: f64 },
    /// Intensity grows with the 1-based step index: `qs_k = slope * k`.
    TimeVarying { slope: f64 },
    /// Gaussian noise plus an independent `Exp(kappa)` shift on every state component.
    GaussPlusExp { qs: f64, kappa: f64 },
}

impl ProcessNoiseSpec {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Gaussian { qs } => qs >= 0.0 && qs.is_finite(),
            Self::TimeVarying { slope } => slope >= 0.0 && slope.is_finite(),
            Self::GaussPlusExp { qs, kappa } => qs >= 0.0 && qs.is_finite() && kappa > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidConfig(format!("process noise {self:?}")))
        }
    }

    /// Gaussian intensity used for the transition out of step `k` (1-based).
    pub fn intensity_at(&self, k: usize) -> f64 {
        match *self {
            Self::Gaussian { qs } | Self::GaussPlusExp { qs, .. } => qs,
            Self::TimeVarying { slope } => slope * k as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasNoiseSpec {
    Gaussian { vx2: f64, vy2: f64 },
    /// Gaussian draw multiplied element-wise by an independent `Exp(kappa)` draw.
    GaussTimesExp { vx2: f64, vy2: f64, kappa: f64 },
}

impl MeasNoiseSpec {
    fn validate(&self) -> Result<()> {
        let (vx2, vy2, kappa) = self.parts();
        if vx2 >= 0.0 && vy2 >= 0.0 && vx2.is_finite() && vy2.is_finite() && kappa.is_none_or(|k| k > 0.0) {
            Ok(())
        } else {
            Err(SimError::InvalidConfig(format!("measurement noise {self:?}")))
        }
    }

    /// Gaussian variances and, for the multiplicative variant, the exponential rate.
    pub fn parts(&self) -> (f64, f64, Option<f64>) {
        match *self {
            Self::Gaussian { vx2, vy2 } => (vx2, vy2, None),
            Self::GaussTimesExp { vx2, vy2, kappa } => (vx2, vy2, Some(kappa)),
        }
    }
}

/// Inclusive uniform ranges for each initial state component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitBox {
    pub px: (f64, f64),
    pub vx: (f64, f64),
    pub py: (f64, f64),
    pub vy: (f64, f64),
}

impl Default for InitBox {
    fn default() -> Self {
        Self {
            px: (-5000.0, 5000.0),
            vx: (-25.0, 25.0),
            py: (-5000.0, 5000.0),
            vy: (-30.0, 30.0),
        }
    }
}

impl InitBox {
    fn ranges(&self) -> [(f64, f64); 4] {
        [self.px, self.vx, self.py, self.vy]
    }

    fn validate(&self) -> Result<()> {
        for (lo, hi) in self.ranges() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(SimError::InvalidConfig(format!("init box {self:?}")));
            }
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> StateVector {
        let mut draw = |(lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
        StateVector::new(draw(self.px), draw(self.vx), draw(self.py), draw(self.vy))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub dt: f64,
    pub steps: usize,
    pub n_tracks: usize,
    pub init_box: InitBox,
    pub process: ProcessNoiseSpec,
    pub measurement: MeasNoiseSpec,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            dt: 1.0,
            steps: 50,
            n_tracks: 1,
            init_box: InitBox::default(),
            process: ProcessNoiseSpec::Gaussian { qs: 1.0 },
            measurement: MeasNoiseSpec::Gaussian { vx2: 30.0, vy2: 20.0 },
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.steps < 2 {
            return Err(SimError::InvalidConfig(format!("need at least 2 steps, got {}", self.steps)));
        }
        if self.n_tracks == 0 {
            return Err(SimError::InvalidConfig("n_tracks must be at least 1".into()));
        }
        self.init_box.validate()?;
        self.process.validate()?;
        self.measurement.validate()
    }
}

/// Aligned truth and measurements for one target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackPair {
    pub track_id: u64,
    pub truth: Vec<StateVector>,
    pub meas: Vec<Measurement>,
}

impl TrackPair {
    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn measured_positions(&self) -> Vec<Vec2> {
        self.meas.iter().map(Measurement::position).collect()
    }

    pub fn true_positions(&self) -> Vec<Vec2> {
        self.truth.iter().map(StateVector::position).collect()
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(SimError::InvalidConfig(format!("dt must be positive, got {dt}")))
    }
}

/// CV transition `I2 ⊗ [[1, dt], [0, 1]]`.
pub fn transition_matrix(dt: f64) -> Result<Matrix4<f64>> {
    check_dt(dt)?;
    #[rustfmt::skip]
    let f = Matrix4::new(
        1.0, dt,  0.0, 0.0,
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, 1.0, dt,
        0.0, 0.0, 0.0, 1.0,
    );
    Ok(f)
}

/// Discretized white-noise acceleration covariance `qs · I2 ⊗ [[dt³/3, dt²/2], [dt²/2, dt]]`.
pub fn process_cov(qs: f64, dt: f64) -> Result<Matrix4<f64>> {
    check_dt(dt)?;
    if !(qs >= 0.0 && qs.is_finite()) {
        return Err(SimError::InvalidConfig(format!("process intensity must be non-negative, got {qs}")));
    }
    let (a, b, c) = (qs * dt.powi(3) / 3.0, qs * dt * dt / 2.0, qs * dt);
    #[rustfmt::skip]
    let q = Matrix4::new(
        a,   b,   0.0, 0.0,
        b,   c,   0.0, 0.0,
        0.0, 0.0, a,   b,
        0.0, 0.0, b,   c,
    );
    Ok(q)
}

pub fn meas_cov(vx2: f64, vy2: f64) -> Result<Matrix2<f64>> {
    if !(vx2 >= 0.0 && vy2 >= 0.0 && vx2.is_finite() && vy2.is_finite()) {
        return Err(SimError::InvalidConfig(format!("measurement variances must be non-negative, got ({vx2}, {vy2})")));
    }
    Ok(Matrix2::new(vx2, 0.0, 0.0, vy2))
}

/// Position-only observation matrix.
pub fn measurement_matrix() -> Matrix2x4<f64> {
    Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0)
}

/// Random stream for one track: the scenario seed selects the key and the
/// track id selects the ChaCha stream.
pub fn track_rng(seed: u64, track_id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(track_id);
    rng
}

/// Lower Cholesky factor of the unit-intensity per-axis process block.
fn unit_axis_factor(dt: f64) -> (f64, f64, f64) {
    let l11 = (dt.powi(3) / 3.0).sqrt();
    let l21 = (dt * dt / 2.0) / l11;
    let l22 = (dt - l21 * l21).max(0.0).sqrt();
    (l11, l21, l22)
}

pub fn simulate_track(cfg: &ScenarioConfig, track_id: u64) -> Result<TrackPair> {
    cfg.validate()?;
    Ok(simulate_validated(cfg, track_id))
}

fn simulate_validated(cfg: &ScenarioConfig, track_id: u64) -> TrackPair {
    let mut rng = track_rng(cfg.seed, track_id);
    let f = transition_matrix(cfg.dt).expect("validated dt");
    let (l11, l21, l22) = unit_axis_factor(cfg.dt);
    let proc_exp = match cfg.process {
        ProcessNoiseSpec::GaussPlusExp { kappa, .. } => Some(Exp::new(kappa).expect("validated rate")),
        _ => None,
    };
    let (vx2, vy2, meas_kappa) = cfg.measurement.parts();
    let meas_exp = meas_kappa.map(|k| Exp::new(k).expect("validated rate"));
    let (sx, sy) = (vx2.sqrt(), vy2.sqrt());

    let mut truth = Vec::with_capacity(cfg.steps);
    let mut meas = Vec::with_capacity(cfg.steps);
    let mut x = cfg.init_box.sample(&mut rng).to_vector();
    for k in 1..=cfg.steps {
        if k > 1 {
            let sq = cfg.process.intensity_at(k - 1).sqrt();
            let mut w = Vector4::zeros();
            for axis in 0..2 {
                let n1: f64 = StandardNormal.sample(&mut rng);
                let n2: f64 = StandardNormal.sample(&mut rng);
                w[2 * axis] = sq * l11 * n1;
                w[2 * axis + 1] = sq * (l21 * n1 + l22 * n2);
            }
            if let Some(e) = &proc_exp {
                for i in 0..4 {
                    w[i] += e.sample(&mut rng);
                }
            }
            x = f * x + w;
        }
        let nx: f64 = StandardNormal.sample(&mut rng);
        let ny: f64 = StandardNormal.sample(&mut rng);
        let (mut vx, mut vy) = (sx * nx, sy * ny);
        if let Some(e) = &meas_exp {
            vx *= e.sample(&mut rng);
            vy *= e.sample(&mut rng);
        }
        truth.push(StateVector::from_vector(&x));
        meas.push(Measurement { zx: x[0] + vx, zy: x[2] + vy, k });
    }
    TrackPair { track_id, truth, meas }
}

/// Generates `cfg.n_tracks` tracks with ids `0..n_tracks`.
pub fn simulate_tracks(cfg: &ScenarioConfig) -> Result<Vec<TrackPair>> {
    cfg.validate()?;
    Ok((0..cfg.n_tracks as u64)
        .into_par_iter()
        .map(|id| simulate_validated(cfg, id))
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetRow {
    track_id: u64,
    k: usize,
    zx: f64,
    zy: f64,
    true_px: f64,
    true_vx: f64,
    true_py: f64,
    true_vy: f64,
}

pub fn write_dataset<W: Write>(tracks: &[TrackPair], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for t in tracks {
        for (x, z) in t.truth.iter().zip(&t.meas) {
            wtr.serialize(DatasetRow {
                track_id: t.track_id,
                k: z.k,
                zx: z.zx,
                zy: z.zy,
                true_px: x.px,
                true_vx: x.vx,
                true_py: x.py,
                true_vy: x.vy,
            })?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Reads rows grouped by `track_id` in file order; `k` must run 1, 2, ... within each track.
pub fn read_dataset<R: Read>(input: R) -> Result<Vec<TrackPair>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut tracks: Vec<TrackPair> = Vec::new();
    for row in rdr.deserialize() {
        let row: DatasetRow = row?;
        let start_new = tracks.last().is_none_or(|t| t.track_id != row.track_id);
        if start_new {
            tracks.push(TrackPair { track_id: row.track_id, truth: Vec::new(), meas: Vec::new() });
        }
        let t = tracks.last_mut().expect("pushed above");
        if row.k != t.meas.len() + 1 {
            return Err(SimError::Format(format!(
                "track {} expected k={} but found k={}",
                row.track_id,
                t.meas.len() + 1,
                row.k
            )));
        }
        t.truth.push(StateVector::new(row.true_px, row.true_vx, row.true_py, row.true_vy));
        t.meas.push(Measurement { zx: row.zx, zy: row.zy, k: row.k });
    }
    Ok(tracks)
}

pub fn save_dataset(tracks: &[TrackPair], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_dataset(tracks, std::io::BufWriter::new(file))
}

pub fn load_dataset(path: &Path) -> Result<Vec<TrackPair>> {
    read_dataset(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::SymmetricEigen;

    fn noiseless(steps: usize, n_tracks: usize) -> ScenarioConfig {
        ScenarioConfig {
            dt: 1.0,
            steps,
            n_tracks,
            init_box: InitBox { px: (0.0, 0.0), vx: (1.0, 1.0), py: (0.0, 0.0), vy: (1.0, 1.0) },
            process: ProcessNoiseSpec::Gaussian { qs: 0.0 },
            measurement: MeasNoiseSpec::Gaussian { vx2: 0.0, vy2: 0.0 },
            seed: 3,
        }
    }

    #[test]
    fn transition_matrix_examples() {
        let f = transition_matrix(1.0).unwrap();
        #[rustfmt::skip]
        let expected = Matrix4::new(
            1.0, 1.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 1.0,
            0.0, 0.0, 0.0, 1.0,
        );
        assert_eq!(f, expected);
        let half = transition_matrix(0.5).unwrap();
        assert_eq!(half[(0, 1)], 0.5);
        assert_eq!(half[(2, 3)], 0.5);
        assert_eq!(f * Vector4::new(0.0, 1.0, 0.0, 1.0), Vector4::new(1.0, 1.0, 1.0, 1.0));
        assert!(transition_matrix(0.0).is_err());
        assert!(transition_matrix(-1.0).is_err());
    }

    #[test]
    fn process_cov_examples() {
        let q = process_cov(1.0, 1.0).unwrap();
        assert_abs_diff_eq!(q[(0, 0)], 1.0 / 3.0);
        assert_abs_diff_eq!(q[(0, 1)], 0.5);
        assert_abs_diff_eq!(q[(1, 1)], 1.0);
        assert_abs_diff_eq!(q[(2, 2)], 1.0 / 3.0);
        assert_eq!(q[(0, 2)], 0.0);
        assert_eq!(process_cov(0.0, 1.0).unwrap(), Matrix4::zeros());
        let q2 = process_cov(2.0, 1.0).unwrap();
        assert_abs_diff_eq!(q2[(0, 0)], 2.0 / 3.0);
        assert_abs_diff_eq!(q2[(3, 2)], 1.0);
        assert_abs_diff_eq!(q2[(3, 3)], 2.0);
        assert!(process_cov(-0.1, 1.0).is_err());
    }

    #[test]
    fn process_cov_is_symmetric_psd() {
        for &qs in &[0.0, 0.01, 1.0, 7.5] {
            for &dt in &[0.01, 0.5, 1.0, 3.0] {
                let q = process_cov(qs, dt).unwrap();
                assert_eq!(q, q.transpose());
                let eig = SymmetricEigen::new(q).eigenvalues;
                assert!(eig.iter().all(|&e| e >= -1e-12), "qs={qs} dt={dt} eig={eig}");
            }
        }
    }

    #[test]
    fn meas_cov_examples() {
        assert_eq!(meas_cov(30.0, 20.0).unwrap(), Matrix2::new(30.0, 0.0, 0.0, 20.0));
        assert_eq!(meas_cov(0.0, 0.0).unwrap(), Matrix2::zeros());
        assert_eq!(meas_cov(3.0, 2.0).unwrap(), Matrix2::new(3.0, 0.0, 0.0, 2.0));
        assert!(meas_cov(-1.0, 2.0).is_err());
    }

    #[test]
    fn noiseless_track_is_the_affine_line() {
        let tracks = simulate_tracks(&noiseless(100, 1)).unwrap();
        let t = &tracks[0];
        for (i, (x, z)) in t.truth.iter().zip(&t.meas).enumerate() {
            let k = (i + 1) as f64;
            assert!((x.px - (k - 1.0)).abs() < 1e-9);
            assert!((x.py - (k - 1.0)).abs() < 1e-9);
            assert_eq!(z.k, i + 1);
            assert_eq!((z.zx, z.zy), (x.px, x.py));
        }
    }

    #[test]
    fn shape_contract() {
        let cfg = ScenarioConfig { n_tracks: 5, steps: 30, ..ScenarioConfig::default() };
        let tracks = simulate_tracks(&cfg).unwrap();
        assert_eq!(tracks.len(), 5);
        for (i, t) in tracks.iter().enumerate() {
            assert_eq!(t.track_id, i as u64);
            assert_eq!(t.truth.len(), 30);
            assert_eq!(t.meas.len(), 30);
            assert!(t.meas.iter().enumerate().all(|(k, z)| z.k == k + 1));
        }
    }

    #[test]
    fn deterministic_and_prefix_stable() {
        let cfg = ScenarioConfig { n_tracks: 4, steps: 20, seed: 99, ..ScenarioConfig::default() };
        let a = simulate_tracks(&cfg).unwrap();
        let b = simulate_tracks(&cfg).unwrap();
        assert_eq!(a, b);
        let more = simulate_tracks(&ScenarioConfig { n_tracks: 9, ..cfg.clone() }).unwrap();
        assert_eq!(&more[..4], &a[..]);
        let other = simulate_tracks(&ScenarioConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(other[0], a[0]);
    }

    #[test]
    fn exponential_shift_has_unit_mean() {
        // Zero Gaussian intensity and zero initial velocity: every per-step
        // velocity increment is exactly one Exp(1) draw.
        let cfg = ScenarioConfig {
            dt: 1.0,
            steps: 1001,
            n_tracks: 100,
            init_box: InitBox { px: (0.0, 0.0), vx: (0.0, 0.0), py: (0.0, 0.0), vy: (0.0, 0.0) },
            process: ProcessNoiseSpec::GaussPlusExp { qs: 0.0, kappa: 1.0 },
            measurement: MeasNoiseSpec::Gaussian { vx2: 0.0, vy2: 0.0 },
            seed: 11,
        };
        let tracks = simulate_tracks(&cfg).unwrap();
        let mut sum = 0.0;
        let mut n = 0usize;
        for t in &tracks {
            for w in t.truth.windows(2) {
                sum += w[1].vx - w[0].vx;
                n += 1;
            }
        }
        assert_eq!(n, 100_000);
        let mean = sum / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean shift {mean}");
    }

    #[test]
    fn gaussian_measurement_variance_matches_spec() {
        let cfg = ScenarioConfig { n_tracks: 2000, steps: 50, seed: 5, ..ScenarioConfig::default() };
        let tracks = simulate_tracks(&cfg).unwrap();
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for t in &tracks {
            for (x, z) in t.truth.iter().zip(&t.meas) {
                sx += (z.zx - x.px).powi(2);
                sy += (z.zy - x.py).powi(2);
                n += 1.0;
            }
        }
        assert!(((sx / n) / 30.0 - 1.0).abs() < 0.05);
        assert!(((sy / n) / 20.0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn time_varying_intensity_follows_step_index() {
        let p = ProcessNoiseSpec::TimeVarying { slope: 0.5 };
        assert_eq!(p.intensity_at(1), 0.5);
        assert_eq!(p.intensity_at(30), 15.0);
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = ScenarioConfig::default();
        assert!(ScenarioConfig { dt: 0.0, ..base.clone() }.validate().is_err());
        assert!(ScenarioConfig { steps: 1, ..base.clone() }.validate().is_err());
        assert!(ScenarioConfig { n_tracks: 0, ..base.clone() }.validate().is_err());
        let bad_box = InitBox { px: (1.0, 0.0), ..InitBox::default() };
        assert!(ScenarioConfig { init_box: bad_box, ..base.clone() }.validate().is_err());
        let bad_exp = ProcessNoiseSpec::GaussPlusExp { qs: 1.0, kappa: 0.0 };
        assert!(ScenarioConfig { process: bad_exp, ..base }.validate().is_err());
    }

    #[test]
    fn dataset_file_round_trip() {
        let cfg = ScenarioConfig { n_tracks: 3, steps: 12, seed: 1, ..ScenarioConfig::default() };
        let tracks = simulate_tracks(&cfg).unwrap();
        let mut buf = Vec::new();
        write_dataset(&tracks, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("track_id,k,zx,zy,true_px,true_vx,true_py,true_vy\n"));
        assert_eq!(read_dataset(&buf[..]).unwrap(), tracks);
    }
}
