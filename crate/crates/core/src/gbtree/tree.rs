use serde::{Deserialize, Serialize};

use super::{gain_unchecked, leaf_weight, Hyperparams};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Nodes with at least this many (row, feature) pairs search features in
/// parallel.
#[cfg(feature = "parallel")]
const PARALLEL_MIN_WORK: usize = 1 << 14;

/// A regression tree. Rows with `x[feature] < threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        weight: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { weight } => return *weight,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if row[*feature] < *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    /// Edges on the longest root-to-leaf path; a lone leaf has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaf_weights(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<f64>) {
        match self {
            TreeNode::Leaf { weight } => out.push(*weight),
            TreeNode::Split { left, right, .. } => {
                left.collect_leaves(out);
                right.collect_leaves(out);
            }
        }
    }

    pub fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split {
                feature,
                left,
                right,
                ..
            } => [Some(*feature), left.max_feature(), right.max_feature()]
                .into_iter()
                .flatten()
                .max(),
        }
    }
}

/// The winning split of a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
    pub left_grad: f64,
    pub left_hess: f64,
    pub right_grad: f64,
    pub right_hess: f64,
}

/// Midpoint between consecutive distinct sorted values `a < b`. For adjacent
/// floats the midpoint can round down to `a`; `b` is used instead so that `a`
/// still routes left and `b` right.
#[inline]
fn threshold_between(a: f64, b: f64) -> f64 {
    let mid = a + (b - a) / 2.0;
    if mid > a && mid <= b {
        mid
    } else {
        b
    }
}

struct Grower<'a> {
    x: &'a Matrix,
    grad: &'a [f64],
    hess: &'a [f64],
    hp: &'a Hyperparams,
    /// Candidate features, ascending.
    cols: &'a [usize],
}

impl Grower<'_> {
    /// `members` holds the node's rows in ascending order; `lists[k]` holds
    /// the same rows sorted by feature `cols[k]` (ties by row index).
    fn grow(&self, members: Vec<usize>, lists: Vec<Vec<usize>>, depth: usize) -> Result<TreeNode> {
        let (g, h) = self.sums(&members);
        let split = if depth < self.hp.max_depth {
            self.find_split(&lists, g, h)
        } else {
            None
        };
        let Some(split) = split else {
            return Ok(TreeNode::Leaf {
                weight: leaf_weight(g, h, self.hp.lambda, self.hp.alpha)?,
            });
        };

        let goes_left = |r: &usize| self.x.get(*r, split.feature) < split.threshold;
        let (left_members, right_members): (Vec<usize>, Vec<usize>) =
            members.into_iter().partition(goes_left);
        let mut left_lists = Vec::with_capacity(lists.len());
        let mut right_lists = Vec::with_capacity(lists.len());
        for list in lists {
            let (l, r): (Vec<usize>, Vec<usize>) = list.into_iter().partition(goes_left);
            left_lists.push(l);
            right_lists.push(r);
        }
        debug_assert!(!left_members.is_empty() && !right_members.is_empty());

        Ok(TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: Box::new(self.grow(left_members, left_lists, depth + 1)?),
            right: Box::new(self.grow(right_members, right_lists, depth + 1)?),
        })
    }

    fn sums(&self, members: &[usize]) -> (f64, f64) {
        members.iter().fold((0.0, 0.0), |(g, h), &r| {
            (g + self.grad[r], h + self.hess[r])
        })
    }

    fn find_split(&self, lists: &[Vec<usize>], g: f64, h: f64) -> Option<SplitCandidate> {
        let per_feature = self.per_feature(lists, g, h);
        // Features are ascending, so a strict comparison keeps the lowest
        // feature index on ties regardless of how the search was scheduled.
        let mut best: Option<SplitCandidate> = None;
        for cand in per_feature.into_iter().flatten() {
            if best.is_none_or(|b| cand.gain > b.gain) {
                best = Some(cand);
            }
        }
        best
    }

    #[cfg(feature = "parallel")]
    fn per_feature(&self, lists: &[Vec<usize>], g: f64, h: f64) -> Vec<Option<SplitCandidate>> {
        use rayon::prelude::*;
        let work = lists.first().map_or(0, Vec::len) * lists.len();
        if work >= PARALLEL_MIN_WORK {
            lists
                .par_iter()
                .enumerate()
                .map(|(k, list)| self.feature_split(self.cols[k], list, g, h))
                .collect()
        } else {
            self.per_feature_serial(lists, g, h)
        }
    }

    #[cfg(not(feature = "parallel"))]
    fn per_feature(&self, lists: &[Vec<usize>], g: f64, h: f64) -> Vec<Option<SplitCandidate>> {
        self.per_feature_serial(lists, g, h)
    }

    fn per_feature_serial(
        &self,
        lists: &[Vec<usize>],
        g: f64,
        h: f64,
    ) -> Vec<Option<SplitCandidate>> {
        lists
            .iter()
            .enumerate()
            .map(|(k, list)| self.feature_split(self.cols[k], list, g, h))
            .collect()
    }

    /// Scans the thresholds of one feature in ascending order and keeps the
    /// first one reaching the highest admissible gain.
    fn feature_split(
        &self,
        feature: usize,
        sorted: &[usize],
        g: f64,
        h: f64,
    ) -> Option<SplitCandidate> {
        let hp = self.hp;
        let mut best: Option<SplitCandidate> = None;
        let (mut gl, mut hl) = (0.0, 0.0);
        for i in 0..sorted.len().saturating_sub(1) {
            let r = sorted[i];
            gl += self.grad[r];
            hl += self.hess[r];
            let a = self.x.get(r, feature);
            let b = self.x.get(sorted[i + 1], feature);
            if a >= b {
                continue;
            }
            let (gr, hr) = (g - gl, h - hl);
            if hl < hp.min_child_weight || hr < hp.min_child_weight {
                continue;
            }
            if !(hl + hp.lambda > 0.0 && hr + hp.lambda > 0.0) {
                continue;
            }
            let gain = gain_unchecked(gl, hl, gr, hr, hp.lambda, hp.alpha, hp.gamma);
            if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
                best = Some(SplitCandidate {
                    feature,
                    threshold: threshold_between(a, b),
                    gain,
                    left_grad: gl,
                    left_hess: hl,
                    right_grad: gr,
                    right_hess: hr,
                });
            }
        }
        best
    }
}

fn sorted_by_feature(x: &Matrix, members: &[usize], feature: usize) -> Vec<usize> {
    let mut list = members.to_vec();
    // Stable on an ascending list, so equal values stay in row order.
    list.sort_by(|&a, &b| x.get(a, feature).total_cmp(&x.get(b, feature)));
    list
}

struct Prepared {
    members: Vec<usize>,
    cols: Vec<usize>,
}

fn prepare(
    x: &Matrix,
    rows: &[usize],
    grad: &[f64],
    hess: &[f64],
    hp: &Hyperparams,
    col_mask: &[usize],
) -> Result<Prepared> {
    hp.validate()?;
    if grad.len() != x.n_rows() || hess.len() != x.n_rows() {
        return Err(Error::DimensionMismatch {
            what: "gradient/hessian entries",
            expected: x.n_rows(),
            got: grad.len().min(hess.len()),
        });
    }
    if rows.is_empty() {
        return Err(Error::Empty("tree node has no rows"));
    }
    let mut members = rows.to_vec();
    members.sort_unstable();
    members.dedup();
    if members.last().is_some_and(|&r| r >= x.n_rows()) {
        return Err(Error::invalid("row index out of range"));
    }
    let mut cols = col_mask.to_vec();
    cols.sort_unstable();
    cols.dedup();
    if cols.last().is_some_and(|&c| c >= x.n_cols()) {
        return Err(Error::invalid("feature index out of range"));
    }
    for &r in &members {
        if !grad[r].is_finite()
            || !hess[r].is_finite()
            || cols.iter().any(|&c| !x.get(r, c).is_finite())
        {
            return Err(Error::invalid(format!("non-finite value in row {r}")));
        }
    }
    Ok(Prepared { members, cols })
}

/// Grows one tree by exact greedy search over the rows `rows` of `x`, using
/// only the features in `col_mask`. `grad` and `hess` are indexed by row of
/// `x`.
pub fn grow_tree(
    x: &Matrix,
    rows: &[usize],
    grad: &[f64],
    hess: &[f64],
    hp: &Hyperparams,
    col_mask: &[usize],
) -> Result<TreeNode> {
    let Prepared { members, cols } = prepare(x, rows, grad, hess, hp, col_mask)?;
    let lists = cols
        .iter()
        .map(|&f| sorted_by_feature(x, &members, f))
        .collect();
    Grower {
        x,
        grad,
        hess,
        hp,
        cols: &cols,
    }
    .grow(members, lists, 0)
}

/// The split [`grow_tree`] would place at the root, if any.
pub fn best_split(
    x: &Matrix,
    rows: &[usize],
    grad: &[f64],
    hess: &[f64],
    hp: &Hyperparams,
    col_mask: &[usize],
) -> Result<Option<SplitCandidate>> {
    let Prepared { members, cols } = prepare(x, rows, grad, hess, hp, col_mask)?;
    let lists: Vec<Vec<usize>> = cols
        .iter()
        .map(|&f| sorted_by_feature(x, &members, f))
        .collect();
    let grower = Grower {
        x,
        grad,
        hess,
        hp,
        cols: &cols,
    };
    let (g, h) = grower.sums(&members);
    Ok(grower.find_split(&lists, g, h))
}

/// Tree growth from per-feature orderings computed once for the whole
/// training matrix. `in_bag` marks the rows of this tree; `presorted[f]`
/// lists every row sorted by feature `f`.
pub(crate) fn grow_presorted(
    x: &Matrix,
    presorted: &[Vec<usize>],
    in_bag: &[bool],
    grad: &[f64],
    hess: &[f64],
    hp: &Hyperparams,
    cols: &[usize],
) -> Result<TreeNode> {
    let members: Vec<usize> = (0..x.n_rows()).filter(|&r| in_bag[r]).collect();
    let lists = cols
        .iter()
        .map(|&f| {
            presorted[f]
                .iter()
                .copied()
                .filter(|&r| in_bag[r])
                .collect()
        })
        .collect();
    Grower {
        x,
        grad,
        hess,
        hp,
        cols,
    }
    .grow(members, lists, 0)
}

pub(crate) fn presort(x: &Matrix) -> Vec<Vec<usize>> {
    let all: Vec<usize> = (0..x.n_rows()).collect();
    (0..x.n_cols())
        .map(|f| sorted_by_feature(x, &all, f))
        .collect()
}
