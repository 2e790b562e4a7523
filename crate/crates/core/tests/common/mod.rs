//! Oracles and generators shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use slf_core::gbt::{split_gain, FeatureMatrix, GradHess, TrainParams, TreeNode};
use slf_core::simkit::{Measurement, StateVector, TrackPair};
use slf_core::Vec2;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small data set with repeated values and injected missing entries.
pub struct SmallSet {
    pub matrix: FeatureMatrix,
    pub gh: Vec<GradHess>,
    pub params: TrainParams,
}

pub fn small_set(rng: &mut impl Rng) -> SmallSet {
    let n = rng.random_range(2..=64);
    let nf = rng.random_range(1..=3);
    let levels = rng.random_range(2..=12);
    let p_missing = [0.0, 0.1, 0.4][rng.random_range(0..3)];
    let rows: Vec<Vec<Option<f64>>> = (0..n)
        .map(|_| {
            (0..nf)
                .map(|_| (!rng.random_bool(p_missing)).then(|| rng.random_range(0..levels) as f64 * 0.37 - 1.0))
                .collect()
        })
        .collect();
    let const_h = rng.random_bool(0.5);
    let gh = (0..n)
        .map(|_| GradHess {
            g: rng.sample::<f64, _>(StandardNormal) * 2.0,
            h: if const_h { 1.0 } else { rng.random_range(0.1..2.0) },
        })
        .collect();
    let params = TrainParams {
        lambda: [0.0, 1.0][rng.random_range(0..2)],
        gamma: [0.0, 0.2][rng.random_range(0..2)],
        min_samples_leaf: rng.random_range(1..=3),
        ..TrainParams::default()
    };
    SmallSet { matrix: FeatureMatrix::from_rows(nf, &rows).unwrap(), gh, params }
}

/// Best positive gain over every (feature, threshold, default direction)
/// triple, by direct enumeration of the induced partitions.
pub fn brute_force_gain(m: &FeatureMatrix, gh: &[GradHess], members: &[usize], p: &TrainParams) -> Option<f64> {
    let mut best: Option<f64> = None;
    for f in 0..m.n_features() {
        let mut values: Vec<f64> = members.iter().filter_map(|&r| m.get(r, f)).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        // "Strictly below t goes left" for every present value t, plus a
        // threshold above all of them.
        let thresholds = values.iter().copied().chain(values.last().map(|v| v + 1.0));
        for t in thresholds {
            for default_left in [true, false] {
                let (mut gl, mut hl, mut nl, mut gr, mut hr, mut nr) = (0.0, 0.0, 0, 0.0, 0.0, 0);
                for &r in members {
                    let left = m.get(r, f).map_or(default_left, |v| v < t);
                    if left {
                        (gl, hl, nl) = (gl + gh[r].g, hl + gh[r].h, nl + 1);
                    } else {
                        (gr, hr, nr) = (gr + gh[r].g, hr + gh[r].h, nr + 1);
                    }
                }
                if nl < p.min_samples_leaf || nr < p.min_samples_leaf || nl == 0 || nr == 0 {
                    continue;
                }
                let gain = split_gain(gl, hl, gr, hr, p.lambda, p.gamma);
                if gain > 0.0 && best.is_none_or(|b| gain > b) {
                    best = Some(gain);
                }
            }
        }
    }
    best
}

/// Every split node of `tree` with the rows that reach it, plus the row
/// sets of leaves above `max_depth`.
pub fn node_members(
    tree: &TreeNode,
    m: &FeatureMatrix,
    rows: Vec<usize>,
    depth: usize,
    out: &mut Vec<(Option<f64>, Vec<usize>, usize)>,
) {
    match tree {
        TreeNode::Leaf { .. } => out.push((None, rows, depth)),
        TreeNode::Split { feature, threshold, default_left, gain, left, right } => {
            let (l, r): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&i| m.get(i, *feature).map_or(*default_left, |v| v < *threshold));
            out.push((Some(*gain), rows, depth));
            node_members(left, m, l, depth + 1, out);
            node_members(right, m, r, depth + 1, out);
        }
    }
}

/// `|a − b| ≤ tol·(1 + |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

/// Rotates truth and measurements by `beta` about the first measurement.
pub fn rotate_track(t: &TrackPair, beta: f64) -> TrackPair {
    let (s, c) = beta.sin_cos();
    let o = t.meas[0].position();
    let rot = |p: Vec2| o + Vec2::new(c * (p.x - o.x) - s * (p.y - o.y), s * (p.x - o.x) + c * (p.y - o.y));
    let rotv = |v: Vec2| Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y);
    TrackPair {
        track_id: t.track_id,
        truth: t
            .truth
            .iter()
            .map(|x| {
                let p = rot(x.position());
                let v = rotv(Vec2::new(x.vx, x.vy));
                StateVector::new(p.x, v.x, p.y, v.y)
            })
            .collect(),
        meas: t
            .meas
            .iter()
            .map(|z| {
                let p = rot(z.position());
                Measurement { zx: p.x, zy: p.y, k: z.k }
            })
            .collect(),
    }
}
