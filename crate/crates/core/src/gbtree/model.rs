use serde::{Deserialize, Serialize};

use super::rng::XorShift64Star;
use super::tree::{grow_presorted, presort};
use super::{sample_count, Hyperparams, TreeNode};
use crate::error::{Error, Result};
use crate::features::{self, ScalerParams};
use crate::matrix::Matrix;

/// Value of the `format` field in model files.
pub const MODEL_FORMAT: &str = "tickforge-gbt/1";

/// The boosted trees produced by [`fit`]; operates on standardized inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub base_score: f64,
    pub learning_rate: f64,
    pub n_features: usize,
    pub trees: Vec<TreeNode>,
}

impl Ensemble {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(row)).sum();
        self.base_score + self.learning_rate * sum
    }
}

/// Fits `hp.n_trees` trees to `(x, y)`.
///
/// Per round, rows are drawn before columns from a single generator seeded
/// with `hp.seed`; a draw is skipped when the fraction is 1.
pub fn fit(x: &Matrix, y: &[f64], hp: &Hyperparams) -> Result<Ensemble> {
    hp.validate()?;
    let m = x.n_rows();
    let n = x.n_cols();
    if y.len() != m {
        return Err(Error::DimensionMismatch {
            what: "targets",
            expected: m,
            got: y.len(),
        });
    }
    if m < 2 {
        return Err(Error::InsufficientHistory { needed: 2, got: m });
    }
    if n == 0 {
        return Err(Error::Empty("feature matrix has no columns"));
    }
    if x.as_slice().iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("training data contains non-finite values"));
    }

    let base_score = y.iter().sum::<f64>() / m as f64;
    let mut pred = vec![base_score; m];
    let mut grad = vec![0.0; m];
    let hess = vec![1.0; m];
    let presorted = presort(x);
    let mut rng = XorShift64Star::new(hp.seed);
    let rows_per_tree = sample_count(hp.subsample, m);
    let cols_per_tree = sample_count(hp.colsample, n);
    let all_cols: Vec<usize> = (0..n).collect();
    let mut in_bag = vec![true; m];

    let mut trees = Vec::with_capacity(hp.n_trees);
    for _ in 0..hp.n_trees {
        if rows_per_tree < m {
            in_bag.fill(false);
            for r in rng.sample_indices(m, rows_per_tree) {
                in_bag[r] = true;
            }
        }
        let cols = if cols_per_tree < n {
            rng.sample_indices(n, cols_per_tree)
        } else {
            all_cols.clone()
        };
        for i in 0..m {
            grad[i] = pred[i] - y[i];
        }
        let tree = grow_presorted(x, &presorted, &in_bag, &grad, &hess, hp, &cols)?;
        for (i, p) in pred.iter_mut().enumerate() {
            *p += hp.learning_rate * tree.predict_row(x.row(i));
        }
        trees.push(tree);
    }

    Ok(Ensemble {
        base_score,
        learning_rate: hp.learning_rate,
        n_features: n,
        trees,
    })
}

/// `base_score + learning_rate * sum of tree outputs` for each row.
pub fn predict(ensemble: &Ensemble, x: &Matrix) -> Result<Vec<f64>> {
    if x.n_cols() != ensemble.n_features {
        return Err(Error::DimensionMismatch {
            what: "feature columns",
            expected: ensemble.n_features,
            got: x.n_cols(),
        });
    }
    Ok(x.rows().map(|row| ensemble.predict_row(row)).collect())
}

/// A trained model with everything needed to score raw feature rows. This is
/// the on-disk model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub format: String,
    pub base_score: f64,
    pub hyperparams: Hyperparams,
    pub scaler: ScalerParams,
    pub feature_names: Vec<String>,
    pub horizon: usize,
    /// Fraction of the feature rows used for training (chronologically first).
    pub train_fraction: f64,
    pub trees: Vec<TreeNode>,
}

impl GbtModel {
    pub fn new(
        ensemble: Ensemble,
        hyperparams: Hyperparams,
        scaler: ScalerParams,
        feature_names: Vec<String>,
        horizon: usize,
        train_fraction: f64,
    ) -> Self {
        GbtModel {
            format: MODEL_FORMAT.to_string(),
            base_score: ensemble.base_score,
            hyperparams,
            scaler,
            feature_names,
            horizon,
            train_fraction,
            trees: ensemble.trees,
        }
    }

    pub fn ensemble(&self) -> Ensemble {
        Ensemble {
            base_score: self.base_score,
            learning_rate: self.hyperparams.learning_rate,
            n_features: self.feature_names.len(),
            trees: self.trees.clone(),
        }
    }

    /// Standardizes `raw` with the stored scaler, then predicts.
    pub fn predict_raw(&self, raw: &Matrix) -> Result<Vec<f64>> {
        let x = features::transform(raw, &self.scaler)?;
        predict(&self.ensemble(), &x)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(raw: &[u8]) -> Result<Self> {
        // Check the version tag before the full schema.
        #[derive(Deserialize)]
        struct Tag {
            format: String,
        }
        let tag: Tag = serde_json::from_slice(raw)?;
        if tag.format != MODEL_FORMAT {
            return Err(Error::UnsupportedFormat(tag.format));
        }
        let model: GbtModel = serde_json::from_slice(raw)?;
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<()> {
        self.hyperparams.validate()?;
        let n = self.feature_names.len();
        if self.scaler.means.len() != n || self.scaler.stds.len() != n {
            return Err(Error::DimensionMismatch {
                what: "scaler columns",
                expected: n,
                got: self.scaler.means.len(),
            });
        }
        if let Some(f) = self.trees.iter().filter_map(TreeNode::max_feature).max() {
            if f >= n {
                return Err(Error::invalid(format!(
                    "tree references feature {f} but the model has {n}"
                )));
            }
        }
        Ok(())
    }
}
