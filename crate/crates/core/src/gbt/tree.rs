use serde::{Deserialize, Serialize};

use super::matrix::{ColumnIndex, FeatureMatrix};
use super::split::{shared_hessian, NodeColumns, NodeStats, RowBits, SplitCandidate, SplitSearch};
use super::{leaf_weight, GbtError, GradHess, Result, TrainParams};

/// Node id of a row that already reached its leaf.
const CLOSED: u32 = u32::MAX;

fn splittable(t: &NodeStats, params: &TrainParams) -> bool {
    t.count >= 2 * params.min_samples_leaf
}

/// One regression tree. Leaf weights are stored unshrunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        weight: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        default_left: bool,
        gain: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    /// Evaluates the tree on a raw row (NaN = missing).
    pub fn eval(&self, row: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { weight } => return *weight,
                TreeNode::Split { feature, threshold, default_left, left, right, .. } => {
                    let v = row[*feature];
                    let go_left = if v.is_nan() { *default_left } else { v < *threshold };
                    node = if go_left { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    pub(crate) fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split { feature, left, right, .. } => {
                Some((*feature).max(left.max_feature().unwrap_or(0)).max(right.max_feature().unwrap_or(0)))
            }
        }
    }

    pub(crate) fn all_finite(&self) -> bool {
        match self {
            TreeNode::Leaf { weight } => weight.is_finite(),
            TreeNode::Split { threshold, gain, left, right, .. } => {
                threshold.is_finite() && gain.is_finite() && left.all_finite() && right.all_finite()
            }
        }
    }
}

enum ArenaNode {
    Pending,
    Leaf(f64),
    Split { split: SplitCandidate, left: usize, right: usize },
}

/// Where rows of an open node go once the level is resolved.
enum Route {
    /// The right child's slot follows the left one.
    Split { default_left: bool, left: u32 },
    Leaf(f64),
}

fn into_tree(arena: &[ArenaNode], id: usize) -> TreeNode {
    match &arena[id] {
        ArenaNode::Leaf(w) => TreeNode::Leaf { weight: *w },
        ArenaNode::Split { split, left, right } => TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            default_left: split.default_left,
            gain: split.gain,
            left: Box::new(into_tree(arena, *left)),
            right: Box::new(into_tree(arena, *right)),
        },
        ArenaNode::Pending => unreachable!("every node is resolved before conversion"),
    }
}

/// Level-wise grower. Every open node of a level is resolved from one scan
/// per feature; since nodes are split independently this yields the same
/// tree as recursive best-first growth without a leaf cap.
#[derive(Default)]
pub(crate) struct Grower {
    search: SplitSearch,
    cols: NodeColumns,
    node_of: Vec<u32>,
    goes_left: RowBits,
}

pub(crate) struct GrownTree {
    pub tree: TreeNode,
    /// Unshrunk leaf weight reached by each training row.
    pub row_weights: Vec<f64>,
}

impl Grower {
    pub(crate) fn grow(
        &mut self,
        matrix: &FeatureMatrix,
        index: &ColumnIndex,
        gh: &[GradHess],
        params: &TrainParams,
    ) -> Result<GrownTree> {
        let n = matrix.n_rows();
        if n == 0 {
            return Err(GbtError::EmptyDataset);
        }
        self.node_of.clear();
        self.node_of.resize(n, 0);
        self.goes_left.reset(n);
        let h_const = shared_hessian(gh);
        let mut row_weights = vec![0.0; n];
        let mut arena = vec![ArenaNode::Pending];
        // Arena ids of the nodes open at the current level, with their sums
        // and best splits.
        let mut open: Vec<usize> = vec![0];
        let mut totals = vec![NodeStats::default()];
        for d in gh {
            totals[0].add(d.g, d.h);
        }
        let mut best = vec![None];
        if params.max_depth > 0 {
            let (search, cols) = (&mut self.search, &mut self.cols);
            search.begin(&totals, &[splittable(&totals[0], params)], h_const, n, params);
            cols.reset(index, gh, None, |view| search.scan(0, view, params));
            search.finish(matrix, params, &mut best);
        }
        let mut depth = 0usize;

        while !open.is_empty() {
            let mut routes: Vec<Route> = Vec::with_capacity(open.len());
            let mut left_slot: Vec<Option<u32>> = Vec::with_capacity(open.len());
            let mut next_open = Vec::new();
            for (slot, &id) in open.iter().enumerate() {
                match best[slot] {
                    Some((split, _)) => {
                        let (l, r) = (arena.len(), arena.len() + 1);
                        arena.push(ArenaNode::Pending);
                        arena.push(ArenaNode::Pending);
                        arena[id] = ArenaNode::Split { split, left: l, right: r };
                        let ls = next_open.len() as u32;
                        next_open.push(l);
                        next_open.push(r);
                        routes.push(Route::Split { default_left: split.default_left, left: ls });
                        left_slot.push(Some(ls));
                    }
                    None => {
                        let t = totals[slot];
                        let w = leaf_weight(t.g, t.h, params.lambda)?;
                        arena[id] = ArenaNode::Leaf(w);
                        routes.push(Route::Leaf(w));
                        left_slot.push(None);
                    }
                }
            }

            // Rows missing the split feature take the default direction;
            // present ones are read off the sorted segment, where the first
            // `pos` entries lie below the threshold.
            for (r, &o) in self.node_of.iter().enumerate() {
                if let Some(Route::Split { default_left, .. }) = routes.get(o as usize) {
                    self.goes_left.set(r, *default_left);
                }
            }
            for (o, b) in best.iter().enumerate() {
                if let Some((split, pos)) = b {
                    for (k, r) in self.cols.segment(split.feature, o).enumerate() {
                        self.goes_left.set(r as usize, k < *pos);
                    }
                }
            }
            let mut next_totals = vec![NodeStats::default(); next_open.len()];
            for (r, (o, d)) in self.node_of.iter_mut().zip(gh).enumerate() {
                if *o == CLOSED {
                    continue;
                }
                match routes[*o as usize] {
                    Route::Split { left, .. } => {
                        *o = if self.goes_left.get(r as u32) { left } else { left + 1 };
                        next_totals[*o as usize].add(d.g, d.h);
                    }
                    Route::Leaf(w) => {
                        row_weights[r] = w;
                        *o = CLOSED;
                    }
                }
            }
            depth += 1;
            best.clear();
            best.resize(next_open.len(), None);
            // The last level is never searched, so its layout is not needed.
            if !next_open.is_empty() && depth < params.max_depth {
                let active: Vec<bool> = next_totals.iter().map(|t| splittable(t, params)).collect();
                if active.iter().any(|&a| a) {
                    let (search, cols) = (&mut self.search, &mut self.cols);
                    search.begin(&next_totals, &active, h_const, n, params);
                    cols.partition(&left_slot, &self.goes_left, |o, view| search.scan(o, view, params));
                    search.finish(matrix, params, &mut best);
                }
            }
            open = next_open;
            totals = next_totals;
        }

        Ok(GrownTree { tree: into_tree(&arena, 0), row_weights })
    }
}

/// Fits one regression tree to the given gradients.
pub fn fit_tree(matrix: &FeatureMatrix, gh: &[GradHess], params: &TrainParams) -> Result<TreeNode> {
    params.validate()?;
    if gh.len() != matrix.n_rows() {
        return Err(GbtError::TargetLength { rows: matrix.n_rows(), targets: gh.len() });
    }
    let index = ColumnIndex::build(matrix);
    Ok(Grower::default().grow(matrix, &index, gh, params)?.tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbt::grad_hess;

    fn exact(depth: usize) -> TrainParams {
        TrainParams { lambda: 0.0, gamma: 0.0, max_depth: depth, ..TrainParams::default() }
    }

    fn gh_for(targets: &[f64]) -> Vec<GradHess> {
        targets.iter().map(|&t| grad_hess(t, 0.0)).collect()
    }

    #[test]
    fn depth_zero_is_regularized_mean() {
        let m = FeatureMatrix::from_rows(1, &[vec![Some(0.0)], vec![Some(1.0)], vec![Some(2.0)]]).unwrap();
        let p = TrainParams { max_depth: 0, lambda: 1.0, ..TrainParams::default() };
        let tree = fit_tree(&m, &gh_for(&[1.0, 2.0, 6.0]), &p).unwrap();
        assert_eq!(tree, TreeNode::Leaf { weight: 9.0 / 4.0 });
    }

    #[test]
    fn stump_reproduces_separable_targets() {
        let m = FeatureMatrix::from_rows(1, &[vec![Some(0.0)], vec![Some(1.0)]]).unwrap();
        let tree = fit_tree(&m, &gh_for(&[-1.0, 1.0]), &exact(1)).unwrap();
        assert_eq!(tree.eval(&[0.0]), -1.0);
        assert_eq!(tree.eval(&[1.0]), 1.0);
        assert_eq!(tree.depth(), 1);
    }

    #[test]
    fn xor_needs_depth_two() {
        let rows = vec![
            vec![Some(0.0), Some(0.0)],
            vec![Some(0.0), Some(1.0)],
            vec![Some(1.0), Some(0.0)],
            vec![Some(1.0), Some(1.0)],
        ];
        let m = FeatureMatrix::from_rows(2, &rows).unwrap();
        // XOR with unequal magnitudes so the first split has positive gain.
        let targets = [0.0, 1.0, 3.0, 0.0];
        let tree = fit_tree(&m, &gh_for(&targets), &exact(2)).unwrap();
        for (row, t) in rows.iter().zip(targets) {
            let raw: Vec<f64> = row.iter().map(|v| v.unwrap()).collect();
            assert!((tree.eval(&raw) - t).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_follows_default_direction() {
        let m = FeatureMatrix::from_rows(1, &[vec![Some(0.0)], vec![Some(1.0)], vec![None]]).unwrap();
        let tree = fit_tree(&m, &gh_for(&[-1.0, 1.0, -1.0]), &exact(1)).unwrap();
        match &tree {
            TreeNode::Split { default_left, .. } => assert!(*default_left),
            _ => panic!("expected a split"),
        }
        assert_eq!(tree.eval(&[f64::NAN]), -1.0);
    }

    #[test]
    fn row_weights_match_tree_evaluation() {
        let rows: Vec<Vec<Option<f64>>> = (0..40)
            .map(|i| {
                let x = (i as f64 * 0.37).sin();
                vec![Some(x), if i % 3 == 0 { None } else { Some((i as f64).sqrt()) }]
            })
            .collect();
        let m = FeatureMatrix::from_rows(2, &rows).unwrap();
        let targets: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64).collect();
        let index = ColumnIndex::build(&m);
        let grown = Grower::default()
            .grow(&m, &index, &gh_for(&targets), &TrainParams { max_depth: 3, ..TrainParams::default() })
            .unwrap();
        for r in 0..m.n_rows() {
            assert_eq!(grown.tree.eval(m.row(r)), grown.row_weights[r]);
        }
        assert!(grown.tree.depth() <= 3);
    }

    #[test]
    fn min_samples_leaf_bounds_leaf_size() {
        let rows: Vec<Vec<Option<f64>>> = (0..30).map(|i| vec![Some(i as f64)]).collect();
        let m = FeatureMatrix::from_rows(1, &rows).unwrap();
        let targets: Vec<f64> = (0..30).map(|i| (i % 4) as f64).collect();
        let index = ColumnIndex::build(&m);
        let p = TrainParams { max_depth: 6, min_samples_leaf: 4, ..exact(6) };
        let grown = Grower::default().grow(&m, &index, &gh_for(&targets), &p).unwrap();
        let mut counts = std::collections::HashMap::<u64, usize>::new();
        for r in 0..30 {
            *counts.entry(grown.row_weights[r].to_bits()).or_default() += 1;
        }
        // Distinct leaves may share a weight, so this is a lower bound per weight.
        assert!(counts.values().all(|&c| c >= 4));
    }
}
