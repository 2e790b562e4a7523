//! Exact-greedy gradient-boosted regression trees.
//!
//! Trees are grown on a second-order expansion of the squared-error loss
//! with an L2 penalty `lambda` on leaf weights and a per-leaf penalty
//! `gamma`. Missing feature values never produce thresholds; every split
//! learns which child they are routed to.

mod booster;
mod matrix;
mod split;
mod tree;

pub use booster::{train, BoostedModel, TrainOutcome, Trainer};
pub use matrix::{ColumnIndex, FeatureMatrix, MISSING};
pub use split::{find_best_split, SplitCandidate};
pub use tree::{fit_tree, TreeNode};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GbtError {
    #[error("invalid training parameters: {0}")]
    InvalidParams(String),
    #[error("non-positive curvature: H + lambda = {0}")]
    NonPositiveCurvature(f64),
    #[error("empty training set")]
    EmptyDataset,
    #[error("feature length mismatch: expected {expected}, got {got}")]
    FeatureLength { expected: usize, got: usize },
    #[error("target count {targets} does not match row count {rows}")]
    TargetLength { rows: usize, targets: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GbtError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub nrounds: usize,
    pub max_depth: usize,
    pub eta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub min_samples_leaf: usize,
    pub base_score: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            nrounds: 500,
            max_depth: 8,
            eta: 0.05,
            lambda: 1.0,
            gamma: 0.0,
            min_samples_leaf: 1,
            base_score: 0.0,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(GbtError::InvalidParams(what.to_string()));
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad("eta must lie in (0, 1]");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be non-negative");
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be non-negative");
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be at least 1");
        }
        if !self.base_score.is_finite() {
            return bad("base_score must be finite");
        }
        Ok(())
    }
}

/// First and second derivative of the per-sample loss at the current prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradHess {
    pub g: f64,
    pub h: f64,
}

/// Derivatives of `½ (pred − target)²`.
pub fn grad_hess(target: f64, pred: f64) -> GradHess {
    GradHess { g: pred - target, h: 1.0 }
}

/// Regularized optimal leaf value `−G / (H + λ)`.
pub fn leaf_weight(g_sum: f64, h_sum: f64, lambda: f64) -> Result<f64> {
    let denom = h_sum + lambda;
    if denom > 0.0 {
        Ok(-g_sum / denom)
    } else {
        Err(GbtError::NonPositiveCurvature(denom))
    }
}

/// Reduction of the regularized structure score from splitting one leaf into two.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + lambda);
    0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)) - gamma
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn grad_hess_examples() {
        assert_eq!(grad_hess(3.0, 1.0), GradHess { g: -2.0, h: 1.0 });
        assert_eq!(grad_hess(0.0, 0.0), GradHess { g: 0.0, h: 1.0 });
        assert_eq!(grad_hess(-1.5, 2.5), GradHess { g: 4.0, h: 1.0 });
    }

    #[test]
    fn leaf_weight_examples() {
        assert_eq!(leaf_weight(-4.0, 2.0, 0.0).unwrap(), 2.0);
        assert_eq!(leaf_weight(-4.0, 2.0, 2.0).unwrap(), 1.0);
        assert!(leaf_weight(-4.0, 2.0, 1e12).unwrap().abs() < 1e-10);
        assert!(matches!(leaf_weight(1.0, 0.0, 0.0), Err(GbtError::NonPositiveCurvature(_))));
    }

    #[test]
    fn split_gain_examples() {
        assert_abs_diff_eq!(split_gain(-1.0, 1.0, 1.0, 1.0, 0.0, 0.0), 1.0);
        assert_abs_diff_eq!(split_gain(0.0, 3.0, 0.0, 2.0, 1.0, 0.7), -0.7);
    }

    /// Second-order objective of one leaf with its optimal weight:
    /// min_w G w + ½ (H + λ) w² + γ.
    fn leaf_objective(g: f64, h: f64, lambda: f64, gamma: f64) -> f64 {
        let w = -g / (h + lambda);
        g * w + 0.5 * (h + lambda) * w * w + gamma
    }

    proptest! {
        #[test]
        fn split_gain_matches_objective_reduction(
            gl in -50.0..50.0f64, hl in 0.1..40.0f64,
            gr in -50.0..50.0f64, hr in 0.1..40.0f64,
            lambda in 0.0..5.0f64, gamma in 0.0..2.0f64,
        ) {
            let before = leaf_objective(gl + gr, hl + hr, lambda, gamma);
            let after = leaf_objective(gl, hl, lambda, gamma) + leaf_objective(gr, hr, lambda, gamma);
            let gain = split_gain(gl, hl, gr, hr, lambda, gamma);
            prop_assert!((gain - (before - after)).abs() < 1e-9 * (1.0 + gain.abs()));
        }

        #[test]
        fn leaf_weight_minimizes_quadratic(g in -20.0..20.0f64, h in 0.5..20.0f64, lambda in 0.0..3.0f64) {
            let w_star = leaf_weight(g, h, lambda).unwrap();
            let obj = |w: f64| g * w + 0.5 * (h + lambda) * w * w;
            let best = obj(w_star);
            for i in -2000..=2000 {
                let w = w_star + i as f64 * 1e-3;
                prop_assert!(obj(w) >= best - 1e-12);
            }
        }
    }

    #[test]
    fn params_validation() {
        assert!(TrainParams::default().validate().is_ok());
        assert!(TrainParams { eta: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainParams { eta: 1.5, ..Default::default() }.validate().is_err());
        assert!(TrainParams { lambda: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainParams { gamma: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainParams { min_samples_leaf: 0, ..Default::default() }.validate().is_err());
    }
}
