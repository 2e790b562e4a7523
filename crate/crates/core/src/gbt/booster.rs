use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::{ColumnIndex, FeatureMatrix};
use super::tree::{Grower, TreeNode};
use super::{grad_hess, GbtError, GradHess, Result, TrainParams};

/// Additive tree ensemble: `base_score + eta · Σ tree(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub n_features: usize,
    pub eta: f64,
    pub base_score: f64,
    pub params: TrainParams,
    pub trees: Vec<TreeNode>,
}

impl BoostedModel {
    /// A model without trees.
    pub fn constant(n_features: usize, params: TrainParams) -> Self {
        Self { n_features, eta: params.eta, base_score: params.base_score, params, trees: Vec::new() }
    }

    pub fn predict(&self, features: &[Option<f64>]) -> Result<f64> {
        if features.len() != self.n_features {
            return Err(GbtError::FeatureLength { expected: self.n_features, got: features.len() });
        }
        let raw: Vec<f64> = features.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        Ok(self.predict_raw(&raw))
    }

    /// Prediction for a raw row (NaN = missing). Panics on length mismatch.
    pub fn predict_raw(&self, row: &[f64]) -> f64 {
        assert_eq!(row.len(), self.n_features, "feature length mismatch");
        let sum: f64 = self.trees.iter().map(|t| t.eval(row)).sum();
        self.base_score + self.eta * sum
    }

    pub fn predict_matrix(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        if matrix.n_features() != self.n_features {
            return Err(GbtError::FeatureLength { expected: self.n_features, got: matrix.n_features() });
        }
        Ok((0..matrix.n_rows()).map(|r| self.predict_raw(matrix.row(r))).collect())
    }

    /// Writes the model as indented JSON. Floats are printed in shortest
    /// round-trip form, so [`BoostedModel::load`] restores them bit for bit.
    pub fn dump<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    pub fn load<R: Read>(input: R) -> Result<Self> {
        let model: Self = serde_json::from_reader(input)?;
        model.check()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.dump(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_path(path: &Path) -> Result<Self> {
        Self::load(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    fn check(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.base_score.is_finite()) {
            return Err(GbtError::NonFinite("model header".into()));
        }
        for t in &self.trees {
            if !t.all_finite() {
                return Err(GbtError::NonFinite("tree values".into()));
            }
            if let Some(f) = t.max_feature() {
                if f >= self.n_features {
                    return Err(GbtError::FeatureLength { expected: self.n_features, got: f + 1 });
                }
            }
        }
        Ok(())
    }
}

pub struct TrainOutcome {
    pub model: BoostedModel,
    /// Mean squared training error before the first tree and after every round.
    pub loss_history: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_mse(&self) -> f64 {
        *self.loss_history.last().expect("history holds the initial loss")
    }
}

/// Holds the pre-sorted columns of one feature matrix so several targets
/// can be fitted without re-sorting.
pub struct Trainer<'a> {
    matrix: &'a FeatureMatrix,
    index: ColumnIndex,
}

impl<'a> Trainer<'a> {
    pub fn new(matrix: &'a FeatureMatrix) -> Self {
        Self { matrix, index: ColumnIndex::build(matrix) }
    }

    pub fn fit(&self, targets: &[f64], params: &TrainParams) -> Result<TrainOutcome> {
        params.validate()?;
        let n = self.matrix.n_rows();
        if n == 0 {
            return Err(GbtError::EmptyDataset);
        }
        if targets.len() != n {
            return Err(GbtError::TargetLength { rows: n, targets: targets.len() });
        }
        if let Some(t) = targets.iter().find(|t| !t.is_finite()) {
            return Err(GbtError::NonFinite(format!("target {t}")));
        }

        let mut model = BoostedModel::constant(self.matrix.n_features(), *params);
        let mut preds = vec![params.base_score; n];
        let mut loss_history = Vec::with_capacity(params.nrounds + 1);
        loss_history.push(mse(&preds, targets));
        let mut grower = Grower::default();
        let mut gh: Vec<GradHess> = Vec::with_capacity(n);
        for _ in 0..params.nrounds {
            gh.clear();
            gh.extend(targets.iter().zip(&preds).map(|(&t, &p)| grad_hess(t, p)));
            let grown = grower.grow(self.matrix, &self.index, &gh, params)?;
            for (p, w) in preds.iter_mut().zip(&grown.row_weights) {
                *p += params.eta * w;
            }
            model.trees.push(grown.tree);
            loss_history.push(mse(&preds, targets));
        }
        Ok(TrainOutcome { model, loss_history })
    }
}

fn mse(preds: &[f64], targets: &[f64]) -> f64 {
    preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / preds.len() as f64
}

/// Forward stagewise boosting on squared error.
pub fn train(matrix: &FeatureMatrix, targets: &[f64], params: &TrainParams) -> Result<BoostedModel> {
    Ok(Trainer::new(matrix).fit(targets, params)?.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn monotone_data(n: usize) -> (FeatureMatrix, Vec<f64>) {
        let rows: Vec<Vec<Option<f64>>> = (0..n).map(|i| vec![Some(i as f64 / n as f64)]).collect();
        let targets = (0..n).map(|i| (3.0 * i as f64 / n as f64).exp()).collect();
        (FeatureMatrix::from_rows(1, &rows).unwrap(), targets)
    }

    #[test]
    fn zero_rounds_predict_base_score() {
        let (m, t) = monotone_data(10);
        let p = TrainParams { nrounds: 0, base_score: 1.25, ..TrainParams::default() };
        let model = train(&m, &t, &p).unwrap();
        assert!(model.trees.is_empty());
        assert_eq!(model.predict(&[Some(0.3)]).unwrap(), 1.25);
        assert_eq!(model.predict(&[None]).unwrap(), 1.25);
    }

    #[test]
    fn monotone_single_feature_fits_well() {
        let (m, t) = monotone_data(200);
        let p = TrainParams { nrounds: 200, max_depth: 2, eta: 0.1, lambda: 1.0, ..TrainParams::default() };
        let out = Trainer::new(&m).fit(&t, &p).unwrap();
        let mean = t.iter().sum::<f64>() / t.len() as f64;
        let sd = (t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t.len() as f64).sqrt();
        assert!(out.final_mse().sqrt() < 0.1 * sd, "rmse {} sd {}", out.final_mse().sqrt(), sd);
    }

    #[test]
    fn constant_targets_converge_in_one_round() {
        let rows: Vec<Vec<Option<f64>>> = (0..12).map(|i| vec![Some(i as f64), None]).collect();
        let m = FeatureMatrix::from_rows(2, &rows).unwrap();
        let t = vec![4.5; 12];
        let p = TrainParams { nrounds: 3, eta: 1.0, lambda: 0.0, base_score: 0.0, ..TrainParams::default() };
        let model = train(&m, &t, &p).unwrap();
        assert_eq!(model.trees[0], TreeNode::Leaf { weight: 4.5 });
        for tree in &model.trees[1..] {
            assert_eq!(tree, &TreeNode::Leaf { weight: 0.0 });
        }
    }

    #[test]
    fn stump_prediction() {
        let m = FeatureMatrix::from_rows(1, &[vec![Some(0.0)], vec![Some(1.0)]]).unwrap();
        let p = TrainParams { nrounds: 1, max_depth: 1, eta: 1.0, lambda: 0.0, ..TrainParams::default() };
        let model = train(&m, &[-1.0, 1.0], &p).unwrap();
        assert_eq!(model.predict(&[Some(0.0)]).unwrap(), -1.0);
        assert_eq!(model.predict(&[Some(1.0)]).unwrap(), 1.0);
    }

    #[test]
    fn all_missing_input_follows_defaults() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<Option<f64>>> = (0..60)
            .map(|_| (0..3).map(|_| rng.random_bool(0.7).then(|| rng.random::<f64>())).collect())
            .collect();
        let targets: Vec<f64> = (0..60).map(|_| rng.random::<f64>()).collect();
        let m = FeatureMatrix::from_rows(3, &rows).unwrap();
        let p = TrainParams { nrounds: 5, max_depth: 3, ..TrainParams::default() };
        let model = train(&m, &targets, &p).unwrap();
        let expected: f64 = model.base_score
            + model.eta
                * model
                    .trees
                    .iter()
                    .map(|t| {
                        let mut node = t;
                        loop {
                            match node {
                                TreeNode::Leaf { weight } => break *weight,
                                TreeNode::Split { default_left, left, right, .. } => {
                                    node = if *default_left { left } else { right }
                                }
                            }
                        }
                    })
                    .sum::<f64>();
        assert_eq!(model.predict(&[None, None, None]).unwrap(), expected);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (m, t) = monotone_data(5);
        assert!(matches!(train(&m, &t[..3], &TrainParams::default()), Err(GbtError::TargetLength { .. })));
        let empty = FeatureMatrix::new(1);
        assert!(matches!(train(&empty, &[], &TrainParams::default()), Err(GbtError::EmptyDataset)));
        let model = BoostedModel::constant(2, TrainParams::default());
        assert!(model.predict(&[Some(1.0)]).is_err());
        let mut bad = t.clone();
        bad[0] = f64::NAN;
        assert!(train(&m, &bad, &TrainParams::default()).is_err());
    }

    #[test]
    fn dump_load_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<Vec<Option<f64>>> = (0..300)
            .map(|_| (0..4).map(|_| rng.random_bool(0.8).then(|| rng.random_range(-10.0..10.0))).collect())
            .collect();
        let targets: Vec<f64> = rows.iter().map(|r| r[0].unwrap_or(1.0).sin() * 3.0 + rng.random::<f64>()).collect();
        let m = FeatureMatrix::from_rows(4, &rows).unwrap();
        let p = TrainParams { nrounds: 20, max_depth: 4, eta: 0.3, ..TrainParams::default() };
        let model = train(&m, &targets, &p).unwrap();
        let mut buf = Vec::new();
        model.dump(&mut buf).unwrap();
        let back = BoostedModel::load(&buf[..]).unwrap();
        assert_eq!(back, model);
        for _ in 0..1000 {
            let x: Vec<f64> =
                (0..4).map(|_| if rng.random_bool(0.2) { f64::NAN } else { rng.random_range(-12.0..12.0) }).collect();
            assert_eq!(back.predict_raw(&x).to_bits(), model.predict_raw(&x).to_bits());
        }
    }

    #[test]
    fn load_rejects_out_of_range_feature() {
        let mut model = BoostedModel::constant(1, TrainParams::default());
        model.trees.push(TreeNode::Split {
            feature: 3,
            threshold: 0.0,
            default_left: true,
            gain: 1.0,
            left: Box::new(TreeNode::Leaf { weight: 1.0 }),
            right: Box::new(TreeNode::Leaf { weight: 2.0 }),
        });
        let mut buf = Vec::new();
        model.dump(&mut buf).unwrap();
        assert!(BoostedModel::load(&buf[..]).is_err());
    }
}
