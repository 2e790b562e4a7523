//! Linear-Gaussian Kalman filter for the constant-velocity model.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simkit::{self, Measurement, SimError, StateVector};
use crate::Vec2;

#[derive(Debug, Error)]
pub enum KalmanError {
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("track needs at least 2 measurements, got {0}")]
    ShortTrack(usize),
    #[error("steady-state iteration did not converge after {iterations} iterations (last change {delta:e})")]
    NoConvergence { iterations: usize, delta: f64 },
    #[error(transparent)]
    Model(#[from] SimError),
}

pub type Result<T> = std::result::Result<T, KalmanError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KfState {
    pub mean: Vector4<f64>,
    pub cov: Matrix4<f64>,
}

impl KfState {
    pub fn state(&self) -> StateVector {
        StateVector::from_vector(&self.mean)
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.mean[0], self.mean[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KfModel {
    pub f: Matrix4<f64>,
    pub h: Matrix2x4<f64>,
    pub q: Matrix4<f64>,
    pub r: Matrix2<f64>,
}

/// Noise levels a filter assumes; may differ from what generated the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KfAssumption {
    pub qs: f64,
    pub vx2: f64,
    pub vy2: f64,
}

impl KfModel {
    pub fn constant_velocity(dt: f64, qs: f64, vx2: f64, vy2: f64) -> Result<Self> {
        Ok(Self {
            f: simkit::transition_matrix(dt)?,
            h: simkit::measurement_matrix(),
            q: simkit::process_cov(qs, dt)?,
            r: simkit::meas_cov(vx2, vy2)?,
        })
    }

    pub fn from_assumption(dt: f64, a: &KfAssumption) -> Result<Self> {
        Self::constant_velocity(dt, a.qs, a.vx2, a.vy2)
    }
}

fn z_vec(z: &Measurement) -> Vector2<f64> {
    Vector2::new(z.zx, z.zy)
}

/// Two-point differencing: position from `z2`, velocity from `(z2 − z1)/dt`.
pub fn kf_init(z1: &Measurement, z2: &Measurement, model: &KfModel, dt: f64) -> KfState {
    let v = (z_vec(z2) - z_vec(z1)) / dt;
    let mean = Vector4::new(z2.zx, v.x, z2.zy, v.y);
    let mut cov = model.q;
    for axis in 0..2 {
        let r = model.r[(axis, axis)];
        let (p, vel) = (2 * axis, 2 * axis + 1);
        cov[(p, p)] += r;
        cov[(p, vel)] += r / dt;
        cov[(vel, p)] += r / dt;
        cov[(vel, vel)] += 2.0 * r / (dt * dt);
    }
    // Cross-axis measurement correlation.
    let rxy = model.r[(0, 1)];
    if rxy != 0.0 {
        for (a, b) in [(0usize, 2usize), (2, 0)] {
            cov[(a, b)] += rxy;
            cov[(a, b + 1)] += rxy / dt;
            cov[(a + 1, b)] += rxy / dt;
            cov[(a + 1, b + 1)] += 2.0 * rxy / (dt * dt);
        }
    }
    KfState { mean, cov }
}

pub fn kf_predict(s: &KfState, model: &KfModel) -> KfState {
    KfState { mean: model.f * s.mean, cov: model.f * s.cov * model.f.transpose() + model.q }
}

/// Measurement update with the Joseph-form covariance.
pub fn kf_update(s: &KfState, z: &Measurement, model: &KfModel) -> Result<KfState> {
    let h = &model.h;
    let innov_cov = h * s.cov * h.transpose() + model.r;
    let s_inv = innov_cov.try_inverse().ok_or(KalmanError::SingularInnovation)?;
    if !s_inv.iter().all(|v| v.is_finite()) {
        return Err(KalmanError::SingularInnovation);
    }
    let gain = s.cov * h.transpose() * s_inv;
    let mean = s.mean + gain * (z_vec(z) - h * s.mean);
    let i_kh = Matrix4::identity() - gain * h;
    let cov = i_kh * s.cov * i_kh.transpose() + gain * model.r * gain.transpose();
    Ok(KfState { mean, cov: symmetrize(&cov) })
}

fn symmetrize(m: &Matrix4<f64>) -> Matrix4<f64> {
    (m + m.transpose()) * 0.5
}

/// Filters one track; estimate `k` uses measurements `1..=k` only. The first
/// two outputs are the raw first measurement and the initialized position.
pub fn kf_run(track: &[Measurement], model: &KfModel, dt: f64) -> Result<Vec<Vec2>> {
    Ok(kf_run_states(track, model, dt)?.iter().map(KfState::position).collect())
}

pub fn kf_run_states(track: &[Measurement], model: &KfModel, dt: f64) -> Result<Vec<KfState>> {
    if track.len() < 2 {
        return Err(KalmanError::ShortTrack(track.len()));
    }
    let init = kf_init(&track[0], &track[1], model, dt);
    let first = KfState {
        mean: Vector4::new(track[0].zx, init.mean[1], track[0].zy, init.mean[3]),
        cov: init.cov,
    };
    let mut out = Vec::with_capacity(track.len());
    out.push(first);
    out.push(init);
    let mut s = init;
    for z in &track[2..] {
        s = kf_update(&kf_predict(&s, model), z, model)?;
        out.push(s);
    }
    Ok(out)
}

pub const STEADY_STATE_TOL: f64 = 1e-10;
pub const STEADY_STATE_MAX_ITER: usize = 100_000;

/// Fixed point of the posterior covariance recursion.
pub fn steady_state_cov(model: &KfModel) -> Result<Matrix4<f64>> {
    let mut p = Matrix4::identity() * 1e3;
    let mut delta = f64::INFINITY;
    for _ in 0..STEADY_STATE_MAX_ITER {
        let prior = KfState { mean: Vector4::zeros(), cov: p };
        let z = Measurement { zx: 0.0, zy: 0.0, k: 1 };
        let next = kf_update(&kf_predict(&prior, model), &z, model)?.cov;
        delta = (next - p).abs().max();
        p = next;
        if delta < STEADY_STATE_TOL {
            return Ok(p);
        }
    }
    Err(KalmanError::NoConvergence { iterations: STEADY_STATE_MAX_ITER, delta })
}

/// RMSE of position implied by a covariance: `sqrt(P_xx + P_yy)`.
pub fn position_rmse(cov: &Matrix4<f64>) -> f64 {
    (cov[(0, 0)] + cov[(2, 2)]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simkit::{simulate_tracks, InitBox, MeasNoiseSpec, ProcessNoiseSpec, ScenarioConfig};
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(zx: f64, zy: f64, k: usize) -> Measurement {
        Measurement { zx, zy, k }
    }

    fn model() -> KfModel {
        KfModel::constant_velocity(1.0, 1.0, 30.0, 20.0).unwrap()
    }

    #[test]
    fn init_examples() {
        let md = model();
        let s = kf_init(&m(0.0, 0.0, 1), &m(1.0, 1.0, 2), &md, 1.0);
        assert_eq!(s.mean, Vector4::new(1.0, 1.0, 1.0, 1.0));
        let s = kf_init(&m(4.0, -2.0, 1), &m(4.0, -2.0, 2), &md, 1.0);
        assert_eq!((s.mean[1], s.mean[3]), (0.0, 0.0));
        let zero_q = KfModel::constant_velocity(1.0, 0.0, 30.0, 20.0).unwrap();
        let s = kf_init(&m(0.0, 0.0, 1), &m(1.0, 1.0, 2), &zero_q, 1.0);
        assert_eq!(s.cov[(0, 0)], 30.0);
        assert_eq!(s.cov[(2, 2)], 20.0);
        assert_eq!(s.cov[(0, 2)], 0.0);
    }

    #[test]
    fn predict_examples() {
        let md = KfModel::constant_velocity(1.0, 0.0, 1.0, 1.0).unwrap();
        let s = KfState { mean: Vector4::new(0.0, 1.0, 0.0, 1.0), cov: Matrix4::zeros() };
        let p = kf_predict(&s, &md);
        assert_eq!(p.mean, Vector4::new(1.0, 1.0, 1.0, 1.0));
        assert_eq!(p.cov, Matrix4::zeros());

        let mut ident = model();
        ident.f = Matrix4::identity();
        let p = kf_predict(&KfState { mean: Vector4::zeros(), cov: Matrix4::identity() }, &ident);
        assert_eq!(p.cov, Matrix4::identity() + ident.q);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Matrix4::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let p = kf_predict(&KfState { mean: Vector4::zeros(), cov: a * a.transpose() }, &model());
        assert!((p.cov - p.cov.transpose()).abs().max() < 1e-12);
    }

    #[test]
    fn update_examples() {
        let mut perfect = model();
        perfect.r = Matrix2::zeros();
        let prior = KfState { mean: Vector4::new(1.0, 0.0, 2.0, 0.0), cov: Matrix4::identity() * 5.0 };
        let post = kf_update(&prior, &m(3.0, -1.0, 1), &perfect).unwrap();
        assert!((post.position() - Vec2::new(3.0, -1.0)).norm() < 1e-12);

        let certain = KfState { mean: Vector4::new(1.0, 2.0, 3.0, 4.0), cov: Matrix4::zeros() };
        let post = kf_update(&certain, &m(10.0, 10.0, 1), &model()).unwrap();
        assert_eq!(post.mean, certain.mean);

        // Decoupled axes reduce to scalar Bayes fusion per position.
        let prior = KfState { mean: Vector4::zeros(), cov: Matrix4::from_diagonal(&Vector4::new(4.0, 1.0, 9.0, 1.0)) };
        let post = kf_update(&prior, &m(1.0, 1.0, 1), &model()).unwrap();
        let fused = |a: f64, b: f64| 1.0 / (1.0 / a + 1.0 / b);
        assert!((post.cov[(0, 0)] - fused(4.0, 30.0)).abs() < 1e-12);
        assert!((post.cov[(2, 2)] - fused(9.0, 20.0)).abs() < 1e-12);

        let mut singular = perfect;
        singular.r = Matrix2::zeros();
        let zero = KfState { mean: Vector4::zeros(), cov: Matrix4::zeros() };
        assert!(matches!(kf_update(&zero, &m(0.0, 0.0, 1), &singular), Err(KalmanError::SingularInnovation)));
    }

    fn standard_update(s: &KfState, z: &Measurement, model: &KfModel) -> KfState {
        let h = &model.h;
        let sc = h * s.cov * h.transpose() + model.r;
        let k = s.cov * h.transpose() * sc.try_inverse().unwrap();
        KfState {
            mean: s.mean + k * (z_vec(z) - h * s.mean),
            cov: (Matrix4::identity() - k * h) * s.cov,
        }
    }

    #[test]
    fn joseph_matches_standard_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let a = Matrix4::from_fn(|_, _| rng.random_range(-3.0..3.0));
            let prior = KfState { mean: Vector4::from_fn(|_, _| rng.random_range(-5.0..5.0)), cov: a * a.transpose() };
            let z = m(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 1);
            let md = KfModel::constant_velocity(1.0, 1.0, rng.random_range(0.5..40.0), rng.random_range(0.5..40.0))
                .unwrap();
            let j = kf_update(&prior, &z, &md).unwrap();
            let s = standard_update(&prior, &z, &md);
            assert!((j.cov - s.cov).abs().max() < 1e-8);
            assert!((j.mean - s.mean).abs().max() < 1e-8);
        }
    }

    #[test]
    fn covariance_stays_symmetric_psd() {
        let md = model();
        let mut s = kf_init(&m(0.0, 0.0, 1), &m(1.0, 2.0, 2), &md, 1.0);
        for i in 0..10_000 {
            s = kf_update(&kf_predict(&s, &md), &m(i as f64, 2.0 * i as f64, i + 3), &md).unwrap();
            assert!((s.cov - s.cov.transpose()).abs().max() < 1e-9);
        }
        let eig = SymmetricEigen::new(s.cov).eigenvalues;
        assert!(eig.iter().all(|&e| e >= -1e-9));
    }

    fn scenario(n: usize, steps: usize, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            dt: 1.0,
            steps,
            n_tracks: n,
            init_box: InitBox::default(),
            process: ProcessNoiseSpec::Gaussian { qs: 1.0 },
            measurement: MeasNoiseSpec::Gaussian { vx2: 30.0, vy2: 20.0 },
            seed,
        }
    }

    #[test]
    fn noiseless_track_converges() {
        let cfg = ScenarioConfig {
            process: ProcessNoiseSpec::Gaussian { qs: 0.0 },
            measurement: MeasNoiseSpec::Gaussian { vx2: 0.0, vy2: 0.0 },
            ..scenario(1, 50, 4)
        };
        let t = &simulate_tracks(&cfg).unwrap()[0];
        let md = KfModel::constant_velocity(1.0, 0.0, 1e-6, 1e-6).unwrap();
        let est = kf_run(&t.meas, &md, 1.0).unwrap();
        let last = est.last().unwrap();
        assert!((last - t.truth.last().unwrap().position()).norm() < 1e-6);
    }

    #[test]
    fn short_tracks() {
        let est = kf_run(&[m(0.0, 0.0, 1), m(1.0, 1.0, 2)], &model(), 1.0).unwrap();
        assert_eq!(est, vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0)]);
        assert!(matches!(kf_run(&[m(0.0, 0.0, 1)], &model(), 1.0), Err(KalmanError::ShortTrack(1))));
    }

    #[test]
    fn matched_rmse_trend_and_bound() {
        let tracks = simulate_tracks(&scenario(1000, 30, 21)).unwrap();
        let md = model();
        let mut sq = vec![0.0; 30];
        let mut meas_sq = 0.0;
        for t in &tracks {
            let est = kf_run(&t.meas, &md, 1.0).unwrap();
            for (k, (e, x)) in est.iter().zip(&t.truth).enumerate() {
                sq[k] += (e - x.position()).norm_squared();
            }
            meas_sq += (t.meas[29].position() - t.truth[29].position()).norm_squared();
        }
        let rmse: Vec<f64> = sq.iter().map(|s| (s / 1000.0).sqrt()).collect();
        // Least-squares slope over k = 5..30.
        let ks: Vec<f64> = (5..=30).map(|k| k as f64).collect();
        let ys = &rmse[4..];
        let (mk, my) = (ks.iter().sum::<f64>() / ks.len() as f64, ys.iter().sum::<f64>() / ys.len() as f64);
        let slope = ks.iter().zip(ys).map(|(k, y)| (k - mk) * (y - my)).sum::<f64>()
            / ks.iter().map(|k| (k - mk).powi(2)).sum::<f64>();
        assert!(slope <= 0.0, "slope {slope}");
        // Measurement RMSE at one step over 1000 tracks has relative sd ≈ 1/sqrt(2·1000).
        let meas_rmse = (meas_sq / 1000.0).sqrt();
        assert!(rmse[29] <= meas_rmse * (1.0 + 3.0 / (2000f64).sqrt()));
    }

    #[test]
    fn steady_state_examples() {
        let p = steady_state_cov(&model()).unwrap();
        let next = kf_update(
            &kf_predict(&KfState { mean: Vector4::zeros(), cov: p }, &model()),
            &m(0.0, 0.0, 1),
            &model(),
        )
        .unwrap()
        .cov;
        assert!((next - p).abs().max() < 1e-9);
        assert_eq!(p[(0, 2)], 0.0);
        assert_eq!(p[(1, 3)], 0.0);

        let big = KfModel::constant_velocity(1.0, 100.0, 30.0, 20.0).unwrap();
        let pb = steady_state_cov(&big).unwrap();
        assert!(pb[(0, 0)] > p[(0, 0)]);
        assert!(pb[(2, 2)] > p[(2, 2)]);

        // The x block depends only on the x measurement variance.
        let other_y = KfModel::constant_velocity(1.0, 1.0, 30.0, 3.0).unwrap();
        let po = steady_state_cov(&other_y).unwrap();
        assert!((po.fixed_view::<2, 2>(0, 0) - p.fixed_view::<2, 2>(0, 0)).abs().max() < 1e-9);
    }
}
