//! Grid search scored by cross-validated RMSE over chronological folds.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval_report::rmse;
use crate::features::{fit_scaler, transform};
use crate::gbtree::rng::{derive_seed, XorShift64Star};
use crate::gbtree::{self, Hyperparams};
use crate::matrix::Matrix;

/// Candidate values per hyperparameter. Candidates are enumerated
/// lexicographically in field order, the last field varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamGrid {
    pub n_trees: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub max_depth: Vec<usize>,
    pub min_child_weight: Vec<f64>,
    pub subsample: Vec<f64>,
    pub colsample: Vec<f64>,
    pub gamma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// The 768-point reference grid.
pub fn paper_grid() -> ParamGrid {
    ParamGrid {
        n_trees: vec![300, 400],
        learning_rate: vec![0.01, 0.1, 0.2],
        max_depth: vec![3, 4],
        min_child_weight: vec![1.0, 3.0],
        subsample: vec![0.8, 1.0],
        colsample: vec![0.8, 1.0],
        gamma: vec![0.0, 0.1],
        alpha: vec![0.5, 1.0],
        lambda: vec![0.5, 1.0],
    }
}

impl ParamGrid {
    /// A grid holding exactly one candidate.
    pub fn single(hp: &Hyperparams) -> Self {
        ParamGrid {
            n_trees: vec![hp.n_trees],
            learning_rate: vec![hp.learning_rate],
            max_depth: vec![hp.max_depth],
            min_child_weight: vec![hp.min_child_weight],
            subsample: vec![hp.subsample],
            colsample: vec![hp.colsample],
            gamma: vec![hp.gamma],
            alpha: vec![hp.alpha],
            lambda: vec![hp.lambda],
        }
    }

    fn dims(&self) -> [usize; 9] {
        [
            self.n_trees.len(),
            self.learning_rate.len(),
            self.max_depth.len(),
            self.min_child_weight.len(),
            self.subsample.len(),
            self.colsample.len(),
            self.gamma.len(),
            self.alpha.len(),
            self.lambda.len(),
        ]
    }

    pub fn len(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Candidate `index` in canonical order, with the given seed.
    pub fn candidate(&self, index: usize, seed: u64) -> Hyperparams {
        let dims = self.dims();
        let mut digits = [0usize; 9];
        let mut rest = index;
        for k in (0..9).rev() {
            digits[k] = rest % dims[k];
            rest /= dims[k];
        }
        Hyperparams {
            n_trees: self.n_trees[digits[0]],
            learning_rate: self.learning_rate[digits[1]],
            max_depth: self.max_depth[digits[2]],
            min_child_weight: self.min_child_weight[digits[3]],
            subsample: self.subsample[digits[4]],
            colsample: self.colsample[digits[5]],
            gamma: self.gamma[digits[6]],
            alpha: self.alpha[digits[7]],
            lambda: self.lambda[digits[8]],
            seed,
        }
    }

    /// All candidates in canonical order, each seeded from `base_seed` and
    /// its index.
    pub fn candidates(&self, base_seed: u64) -> Vec<Hyperparams> {
        (0..self.len())
            .map(|i| self.candidate(i, derive_seed(base_seed, i as u64)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims().contains(&0) {
            return Err(Error::invalid(
                "every grid dimension needs at least one value",
            ));
        }
        // Each value appears in at least one candidate; checking the
        // per-dimension extremes through full candidates covers them all.
        for i in 0..self.len() {
            self.candidate(i, 0).validate()?;
        }
        Ok(())
    }

    pub fn from_json(raw: &[u8]) -> Result<Self> {
        let grid: ParamGrid = serde_json::from_slice(raw)?;
        grid.validate()?;
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvPlan {
    pub k: usize,
    pub folds: Vec<Fold>,
}

/// Expanding-window plan: `0..m_train` is cut into `k + 1` contiguous blocks
/// of `m_train / (k + 1)` rows, the last block taking the remainder. Fold `i`
/// trains on blocks `1..=i` and validates on block `i + 1`.
pub fn make_cv_plan(m_train: usize, k: usize) -> Result<CvPlan> {
    if k < 2 {
        return Err(Error::invalid(format!(
            "cross-validation needs k >= 2, got {k}"
        )));
    }
    let block = m_train / (k + 1);
    if block == 0 {
        return Err(Error::invalid(format!(
            "{m_train} training rows cannot form {} non-empty blocks",
            k + 1
        )));
    }
    let folds = (1..=k)
        .map(|i| {
            let end = if i == k { m_train } else { (i + 1) * block };
            Fold {
                train: (0..i * block).collect(),
                validation: (i * block..end).collect(),
            }
        })
        .collect();
    Ok(CvPlan { k, folds })
}

/// Shuffled k-fold: rows are permuted with the seeded generator and cut into
/// `k` blocks (remainder to the last). Ignores time order, so validation rows
/// precede training rows; provided only for comparison with tools whose
/// default is shuffled folds.
pub fn make_shuffled_plan(m_train: usize, k: usize, seed: u64) -> Result<CvPlan> {
    if k < 2 {
        return Err(Error::invalid(format!(
            "cross-validation needs k >= 2, got {k}"
        )));
    }
    if m_train < 2 * k {
        return Err(Error::invalid(format!(
            "{m_train} training rows are too few for {k} shuffled folds"
        )));
    }
    let mut rng = XorShift64Star::new(seed);
    let order = {
        let mut idx: Vec<usize> = (0..m_train).collect();
        for i in (1..m_train).rev() {
            idx.swap(i, rng.below(i + 1));
        }
        idx
    };
    let block = m_train / k;
    let folds = (0..k)
        .map(|i| {
            let end = if i + 1 == k { m_train } else { (i + 1) * block };
            let mut validation = order[i * block..end].to_vec();
            validation.sort_unstable();
            let mut train: Vec<usize> = order[..i * block]
                .iter()
                .chain(&order[end..])
                .copied()
                .collect();
            train.sort_unstable();
            Fold { train, validation }
        })
        .collect();
    Ok(CvPlan { k, folds })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    /// Position in canonical grid order.
    pub index: usize,
    pub params: Hyperparams,
    pub mean_cv_rmse: f64,
    pub fold_rmse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFailure {
    pub index: usize,
    pub params: Hyperparams,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub best_params: Hyperparams,
    pub best_rmse: f64,
    /// Ascending by mean CV RMSE, ties by grid index.
    pub leaderboard: Vec<LeaderboardEntry>,
    pub failures: Vec<CandidateFailure>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchOptions {
    pub base_seed: u64,
    /// Worker threads for candidate evaluation; `None` uses the global pool.
    /// Results do not depend on this value.
    pub jobs: Option<usize>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            base_seed: 42,
            jobs: None,
        }
    }
}

/// Per-fold RMSE of one candidate. The scaler is refitted on each fold's
/// training rows; `x` holds unscaled features.
pub fn cross_validate(x: &Matrix, y: &[f64], hp: &Hyperparams, plan: &CvPlan) -> Result<Vec<f64>> {
    plan.folds
        .iter()
        .map(|fold| {
            let raw_train = x.select_rows(&fold.train);
            let scaler = fit_scaler(&raw_train)?;
            let x_train = transform(&raw_train, &scaler)?;
            let x_val = transform(&x.select_rows(&fold.validation), &scaler)?;
            let y_train: Vec<f64> = fold.train.iter().map(|&i| y[i]).collect();
            let y_val: Vec<f64> = fold.validation.iter().map(|&i| y[i]).collect();
            let ensemble = gbtree::fit(&x_train, &y_train, hp)?;
            let pred = gbtree::predict(&ensemble, &x_val)?;
            let score = rmse(&y_val, &pred)?;
            if !score.is_finite() {
                return Err(Error::invalid("non-finite validation RMSE"));
            }
            Ok(score)
        })
        .collect()
}

fn check_plan(plan: &CvPlan, m: usize) -> Result<()> {
    for (i, fold) in plan.folds.iter().enumerate() {
        if fold.train.len() < 2 || fold.validation.is_empty() {
            return Err(Error::invalid(format!(
                "fold {} needs at least 2 training rows and 1 validation row",
                i + 1
            )));
        }
        if fold.train.iter().chain(&fold.validation).any(|&r| r >= m) {
            return Err(Error::invalid(format!(
                "fold {} indexes past row {m}",
                i + 1
            )));
        }
    }
    Ok(())
}

pub fn grid_search(
    x: &Matrix,
    y: &[f64],
    grid: &ParamGrid,
    plan: &CvPlan,
    options: &SearchOptions,
) -> Result<TuneResult> {
    if x.n_rows() != y.len() {
        return Err(Error::DimensionMismatch {
            what: "targets",
            expected: x.n_rows(),
            got: y.len(),
        });
    }
    grid.validate()?;
    check_plan(plan, x.n_rows())?;

    let candidates = grid.candidates(options.base_seed);
    let outcomes = evaluate_all(x, y, &candidates, plan, options.jobs)?;

    let mut leaderboard = Vec::new();
    let mut failures = Vec::new();
    for (index, (params, outcome)) in candidates.into_iter().zip(outcomes).enumerate() {
        match outcome {
            Ok(fold_rmse) => {
                let mean_cv_rmse = fold_rmse.iter().sum::<f64>() / fold_rmse.len() as f64;
                leaderboard.push(LeaderboardEntry {
                    index,
                    params,
                    mean_cv_rmse,
                    fold_rmse,
                });
            }
            Err(e) => failures.push(CandidateFailure {
                index,
                params,
                error: e.to_string(),
            }),
        }
    }
    leaderboard.sort_by(|a, b| {
        a.mean_cv_rmse
            .total_cmp(&b.mean_cv_rmse)
            .then(a.index.cmp(&b.index))
    });
    let best = leaderboard.first().ok_or_else(|| {
        Error::invalid(format!(
            "every grid candidate failed; first error: {}",
            failures.first().map_or("none", |f| f.error.as_str())
        ))
    })?;
    Ok(TuneResult {
        best_params: best.params,
        best_rmse: best.mean_cv_rmse,
        leaderboard,
        failures,
    })
}

#[cfg(feature = "parallel")]
fn evaluate_all(
    x: &Matrix,
    y: &[f64],
    candidates: &[Hyperparams],
    plan: &CvPlan,
    jobs: Option<usize>,
) -> Result<Vec<Result<Vec<f64>>>> {
    use rayon::prelude::*;
    let run = || {
        candidates
            .par_iter()
            .map(|hp| cross_validate(x, y, hp, plan))
            .collect::<Vec<_>>()
    };
    match jobs {
        None => Ok(run()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::invalid(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(run))
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn evaluate_all(
    x: &Matrix,
    y: &[f64],
    candidates: &[Hyperparams],
    plan: &CvPlan,
    _jobs: Option<usize>,
) -> Result<Vec<Result<Vec<f64>>>> {
    Ok(candidates
        .iter()
        .map(|hp| cross_validate(x, y, hp, plan))
        .collect())
}

pub const LEADERBOARD_HEADER: [&str; 11] = [
    "rank",
    "N",
    "eta",
    "D_max",
    "W_min",
    "S",
    "C",
    "gamma",
    "alpha",
    "lambda",
    "mean_cv_rmse",
];

pub fn write_leaderboard_csv<W: Write>(result: &TuneResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LEADERBOARD_HEADER)?;
    for (rank, e) in result.leaderboard.iter().enumerate() {
        let p = &e.params;
        w.write_record([
            (rank + 1).to_string(),
            p.n_trees.to_string(),
            p.learning_rate.to_string(),
            p.max_depth.to_string(),
            p.min_child_weight.to_string(),
            p.subsample.to_string(),
            p.colsample.to_string(),
            p.gamma.to_string(),
            p.alpha.to_string(),
            p.lambda.to_string(),
            e.mean_cv_rmse.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_grid_size_and_chosen_point() {
        let g = paper_grid();
        assert_eq!(g.len(), 2 * 3 * 2 * 2 * 2 * 2 * 2 * 2 * 2);
        assert_eq!(g.len(), 768);
        g.validate().unwrap();
        let chosen = Hyperparams::paper_best();
        let hits = g
            .candidates(0)
            .iter()
            .filter(|c| {
                Hyperparams {
                    seed: chosen.seed,
                    ..**c
                } == chosen
            })
            .count();
        assert_eq!(hits, 1);
    }

    #[test]
    fn enumeration_is_lexicographic() {
        let g = paper_grid();
        let c = g.candidates(0);
        assert_eq!(
            (c[0].n_trees, c[0].learning_rate, c[0].lambda),
            (300, 0.01, 0.5)
        );
        assert_eq!(c[1].lambda, 1.0);
        assert_eq!(c[2].alpha, 1.0);
        assert_eq!(c[384].n_trees, 400);
        assert_eq!(c[767].learning_rate, 0.2);
        assert_eq!(c[767].lambda, 1.0);
    }

    #[test]
    fn candidate_seeds_are_distinct_and_reproducible() {
        let g = paper_grid();
        let a = g.candidates(9);
        let b = g.candidates(9);
        assert_eq!(a, b);
        let mut seeds: Vec<u64> = a.iter().map(|c| c.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 768);
    }

    #[test]
    fn grid_rejects_empty_and_out_of_bounds() {
        let mut g = paper_grid();
        g.gamma.clear();
        assert!(g.validate().is_err());
        let mut g = paper_grid();
        g.learning_rate.push(0.0);
        assert!(g.validate().is_err());
    }

    #[test]
    fn grid_json_round_trip() {
        let g = paper_grid();
        let json = serde_json::to_string(&g).unwrap();
        assert_eq!(ParamGrid::from_json(json.as_bytes()).unwrap(), g);
        assert!(ParamGrid::from_json(br#"{"n_trees":[1]}"#).is_err());
    }

    #[test]
    fn expanding_plan_examples() {
        let p = make_cv_plan(12, 3).unwrap();
        let ranges: Vec<_> = p
            .folds
            .iter()
            .map(|f| {
                (
                    f.train.first().copied(),
                    f.train.len(),
                    f.validation[0],
                    f.validation.len(),
                )
            })
            .collect();
        assert_eq!(
            ranges,
            vec![(Some(0), 3, 3, 3), (Some(0), 6, 6, 3), (Some(0), 9, 9, 3)]
        );

        let p = make_cv_plan(7, 3).unwrap();
        let sizes: Vec<_> = p
            .folds
            .iter()
            .map(|f| (f.train.len(), f.validation.len()))
            .collect();
        assert_eq!(sizes, vec![(1, 1), (2, 1), (3, 4)]);
        assert_eq!(p.folds[2].validation, vec![3, 4, 5, 6]);

        assert!(make_cv_plan(12, 1).is_err());
        assert!(make_cv_plan(3, 3).is_err());
    }

    #[test]
    fn shuffled_plan_partitions_rows() {
        let p = make_shuffled_plan(23, 4, 5).unwrap();
        let mut all: Vec<usize> = p.folds.iter().flat_map(|f| f.validation.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        for f in &p.folds {
            assert_eq!(f.train.len() + f.validation.len(), 23);
        }
        assert!(make_shuffled_plan(5, 3, 0).is_err());
    }

    #[test]
    fn tiny_plans_are_rejected_by_search() {
        let x = Matrix::from_rows(1, (0..7).map(|i| [i as f64])).unwrap();
        let y: Vec<f64> = (0..7).map(f64::from).collect();
        let plan = make_cv_plan(7, 3).unwrap();
        let grid = ParamGrid::single(&Hyperparams::paper_best());
        assert!(grid_search(&x, &y, &grid, &plan, &SearchOptions::default()).is_err());
    }
}
