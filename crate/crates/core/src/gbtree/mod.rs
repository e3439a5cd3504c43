//! Gradient-boosted regression trees with second-order split finding.
//!
//! Each round fits a tree to the gradients `g = prediction - target` and unit
//! hessians of the per-sample loss `0.5 * (y - prediction)^2`. Leaves take the
//! closed-form minimiser of `G*w + 0.5*(H + lambda)*w^2 + alpha*|w|`, splits
//! are scored by the reduction of that objective minus `gamma`, and every
//! tree's output is shrunk by the learning rate before it is added.
//!
//! The factor 0.5 in the loss is a convention: using `(y - prediction)^2`
//! instead is equivalent to doubling `lambda`, `alpha`, `gamma` and
//! `min_child_weight`.

mod model;
pub mod rng;
mod tree;

pub use model::{fit, predict, Ensemble, GbtModel, MODEL_FORMAT};
pub use tree::{best_split, grow_tree, SplitCandidate, TreeNode};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Number of boosting rounds (trees).
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// Minimum hessian sum in each child of a split.
    pub min_child_weight: f64,
    /// Fraction of rows drawn, without replacement, for each tree.
    pub subsample: f64,
    /// Fraction of feature columns drawn for each tree.
    pub colsample: f64,
    /// Per-leaf penalty; the minimum objective reduction a split must exceed.
    pub gamma: f64,
    /// L1 penalty on leaf weights.
    pub alpha: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    pub seed: u64,
}

impl Hyperparams {
    /// The preset configuration:
    /// C=0.8, gamma=0, eta=0.2, depth 4, min child weight 3, 300 trees,
    /// alpha=1, lambda=0.5, subsample 1.0.
    pub fn paper_best() -> Self {
        Hyperparams {
            n_trees: 300,
            learning_rate: 0.2,
            max_depth: 4,
            min_child_weight: 3.0,
            subsample: 1.0,
            colsample: 0.8,
            gamma: 0.0,
            alpha: 1.0,
            lambda: 0.5,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn bad(msg: String) -> Result<()> {
            Err(Error::InvalidParameter(msg))
        }
        let finite = [
            self.learning_rate,
            self.min_child_weight,
            self.subsample,
            self.colsample,
            self.gamma,
            self.alpha,
            self.lambda,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return bad("hyperparameters must be finite".into());
        }
        if self.n_trees == 0 {
            return bad("n_trees must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!(
                "learning_rate must lie in (0, 1], got {}",
                self.learning_rate
            ));
        }
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1".into());
        }
        if self.min_child_weight < 0.0 {
            return bad(format!(
                "min_child_weight must be >= 0, got {}",
                self.min_child_weight
            ));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad(format!(
                "subsample must lie in (0, 1], got {}",
                self.subsample
            ));
        }
        if !(self.colsample > 0.0 && self.colsample <= 1.0) {
            return bad(format!(
                "colsample must lie in (0, 1], got {}",
                self.colsample
            ));
        }
        for (name, v) in [
            ("gamma", self.gamma),
            ("alpha", self.alpha),
            ("lambda", self.lambda),
        ] {
            if v < 0.0 {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams::paper_best()
    }
}

/// Number of items kept when sampling `fraction` of `n`, rounded up and at
/// least one.
pub(crate) fn sample_count(fraction: f64, n: usize) -> usize {
    // The epsilon keeps e.g. 0.8 * 5 = 4.000000000000001 from rounding to 5.
    ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

/// `max(|g| - alpha, 0)`, the L1 soft-threshold of a gradient sum.
#[inline]
fn shrink(g: f64, alpha: f64) -> f64 {
    (g.abs() - alpha).max(0.0)
}

/// Optimal weight of a leaf with gradient sum `g` and hessian sum `h`.
pub fn leaf_weight(g: f64, h: f64, lambda: f64, alpha: f64) -> Result<f64> {
    let denom = h + lambda;
    if denom.is_nan() || denom <= 0.0 {
        return Err(Error::invalid(format!(
            "leaf hessian plus lambda must be positive, got {denom}"
        )));
    }
    let t = shrink(g, alpha);
    if t == 0.0 {
        return Ok(0.0);
    }
    Ok(-g.signum() * t / denom)
}

/// Twice the objective reduction of giving a leaf its optimal weight.
#[inline]
fn leaf_score(g: f64, h: f64, lambda: f64, alpha: f64) -> f64 {
    let t = shrink(g, alpha);
    t * t / (h + lambda)
}

#[inline]
pub(crate) fn gain_unchecked(
    gl: f64,
    hl: f64,
    gr: f64,
    hr: f64,
    lambda: f64,
    alpha: f64,
    gamma: f64,
) -> f64 {
    0.5 * (leaf_score(gl, hl, lambda, alpha) + leaf_score(gr, hr, lambda, alpha)
        - leaf_score(gl + gr, hl + hr, lambda, alpha))
        - gamma
}

/// Objective reduction from splitting a leaf into children with the given
/// gradient/hessian sums, net of the extra-leaf penalty `gamma`.
pub fn split_gain(
    gl: f64,
    hl: f64,
    gr: f64,
    hr: f64,
    lambda: f64,
    alpha: f64,
    gamma: f64,
) -> Result<f64> {
    if !(hl + lambda > 0.0 && hr + lambda > 0.0) {
        return Err(Error::invalid(
            "child hessian plus lambda must be positive on both sides",
        ));
    }
    Ok(gain_unchecked(gl, hl, gr, hr, lambda, alpha, gamma))
}
