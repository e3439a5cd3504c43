//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tickforge::eval_report::{mae, r2, rmse, Metrics};
use tickforge::features::{assemble, fit_scaler, transform};
use tickforge::gbtree::{self, grow_tree, leaf_weight, Hyperparams, TreeNode};
use tickforge::indicators;
use tickforge::market_data::Candle;
use tickforge::pipeline::{evaluate_rows, train_model, RowSelection};
use tickforge::synthetic::{generate, SyntheticConfig};
use tickforge::tuning::{self, grid_search, make_cv_plan, ParamGrid, SearchOptions};
use tickforge::Matrix;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let held: bool = $cond;
        if !held {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("thread pool")
        .install(f)
}

fn pipeline_fidelity() -> Outcome {
    let start = Instant::now();
    let (m0, m1) = single_threaded(|| -> Result<(Metrics, Metrics), String> {
        let series = ok(generate(&SyntheticConfig::default()))?;
        ensure!(series.len() >= 5000, "fixture has {} candles", series.len());
        let hp = Hyperparams::paper_best();
        let mut metrics = Vec::new();
        for h in [0, 1] {
            let f = ok(assemble(&series, h))?;
            let out = ok(train_model(&f, &hp, 0.8))?;
            metrics.push(ok(evaluate_rows(&out.model, &f, RowSelection::Test))?.metrics);
        }
        Ok((metrics[0], metrics[1]))
    })?;
    let elapsed = start.elapsed();
    ensure!(m0.r2 >= 0.999, "h=0 test R^2 {} < 0.999", m0.r2);
    ensure!(
        [m1.mae, m1.rmse, m1.r2].iter().all(|v| v.is_finite()),
        "h=1 metrics not finite: {m1:?}"
    );
    ensure!(m1.rmse >= m1.mae, "h=1 rmse {} < mae {}", m1.rmse, m1.mae);
    ensure!(elapsed <= Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!(
        "h=0 R^2={:.5}; h=1 RMSE={:.2} MAE={:.2} R^2={:.4}; {:.1}s single-threaded",
        m0.r2,
        m1.rmse,
        m1.mae,
        m1.r2,
        elapsed.as_secs_f64()
    ))
}

/// Minimises `G*w + 0.5*(H+lambda)*w^2 + alpha*|w|` by bisection on the sign
/// of its (sub)derivative.
fn brute_leaf(g: f64, h: f64, lambda: f64, alpha: f64) -> f64 {
    let slope = |w: f64| g + (h + lambda) * w + alpha * w.signum();
    let bound = (g.abs() + alpha) / (h + lambda) + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn leaf_weight_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cases = 5000;
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let g = rng.random_range(-50.0..50.0);
        let lambda = rng.random_range(0.0..5.0);
        let h = rng.random_range((0.1f64 - lambda).max(0.0)..20.0);
        let alpha = if rng.random_bool(0.2) {
            0.0
        } else {
            rng.random_range(0.0..10.0)
        };
        let w = ok(leaf_weight(g, h, lambda, alpha))?;
        let diff = (w - brute_leaf(g, h, lambda, alpha)).abs();
        ensure!(
            diff <= 1e-6,
            "G={g} H={h} lambda={lambda} alpha={alpha}: off by {diff}"
        );
        worst = worst.max(diff);
    }
    Ok(format!("{cases} cases, max |diff| {worst:.1e}"))
}

fn score(g: f64, h: f64, lambda: f64, alpha: f64) -> f64 {
    let t = (g.abs() - alpha).max(0.0);
    t * t / (h + lambda)
}

/// Best admissible root split by enumerating every feature and every
/// midpoint between consecutive distinct values.
fn brute_split(
    x: &Matrix,
    grad: &[f64],
    hess: &[f64],
    hp: &Hyperparams,
) -> Option<(usize, f64, f64)> {
    let (lambda, alpha) = (hp.lambda, hp.alpha);
    let g: f64 = grad.iter().sum();
    let h: f64 = hess.iter().sum();
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..x.n_cols() {
        let mut values: Vec<f64> = x.column(f).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for pair in values.windows(2) {
            let t = pair[0] + (pair[1] - pair[0]) / 2.0;
            let (mut gl, mut hl) = (0.0, 0.0);
            for r in 0..x.n_rows() {
                if x.get(r, f) < t {
                    gl += grad[r];
                    hl += hess[r];
                }
            }
            let (gr, hr) = (g - gl, h - hl);
            if hl < hp.min_child_weight || hr < hp.min_child_weight {
                continue;
            }
            let gain = 0.5
                * (score(gl, hl, lambda, alpha) + score(gr, hr, lambda, alpha)
                    - score(g, h, lambda, alpha))
                - hp.gamma;
            if gain > 0.0 && best.is_none_or(|b| gain > b.2) {
                best = Some((f, t, gain));
            }
        }
    }
    best
}

fn split_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let instances = 500;
    let mut splits = 0;
    for case in 0..instances {
        let m = rng.random_range(2..=50);
        let n = rng.random_range(1..=5);
        // Few distinct quarter-integer values force ties across thresholds.
        let levels = rng.random_range(2..=8);
        let data: Vec<f64> = (0..m * n)
            .map(|_| rng.random_range(0..levels) as f64 * 0.25 - 1.0)
            .collect();
        let x = ok(Matrix::from_vec(m, n, data))?;
        // Dyadic gradients keep every partial sum exact in any order.
        let grad: Vec<f64> = (0..m)
            .map(|_| rng.random_range(-16..=16) as f64 / 8.0)
            .collect();
        let hess: Vec<f64> = (0..m)
            .map(|_| rng.random_range(1..=4) as f64 / 2.0)
            .collect();
        let hp = Hyperparams {
            max_depth: 1,
            min_child_weight: [0.0, 1.0, 3.0][rng.random_range(0..3)],
            lambda: [0.0, 0.5, 1.0][rng.random_range(0..3)],
            alpha: [0.0, 0.5, 1.0][rng.random_range(0..3)],
            gamma: [0.0, 0.1][rng.random_range(0..2)],
            ..Hyperparams::paper_best()
        };
        let rows: Vec<usize> = (0..m).collect();
        let cols: Vec<usize> = (0..n).collect();
        let tree = ok(grow_tree(&x, &rows, &grad, &hess, &hp, &cols))?;
        let got = match tree {
            TreeNode::Split {
                feature, threshold, ..
            } => Some((feature, threshold)),
            TreeNode::Leaf { .. } => None,
        };
        let want = brute_split(&x, &grad, &hess, &hp).map(|(f, t, _)| (f, t));
        ensure!(
            got == want,
            "instance {case}: tree root {got:?}, enumeration {want:?}"
        );
        splits += usize::from(want.is_some());
    }
    Ok(format!(
        "{instances} instances ({splits} with a split) match exactly"
    ))
}

fn exact_fit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let m = 300;
    // Column 0 is a permutation, so every row has a distinct value.
    let mut perm: Vec<f64> = (0..m).map(|i| i as f64).collect();
    for i in (1..m).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let x = ok(Matrix::from_rows(
        3,
        perm.iter()
            .map(|&p| [p, rng.random_range(-1.0..1.0), rng.random_range(0.0..5.0)]),
    ))?;
    let y: Vec<f64> = (0..m)
        .map(|_| rng.random_range(30_000.0..40_000.0))
        .collect();
    let hp = Hyperparams {
        n_trees: 1,
        learning_rate: 1.0,
        max_depth: 32,
        min_child_weight: 0.0,
        subsample: 1.0,
        colsample: 1.0,
        gamma: 0.0,
        alpha: 0.0,
        lambda: 0.0,
        seed: 1,
    };
    let e = ok(gbtree::fit(&x, &y, &hp))?;
    let fitted = ok(gbtree::predict(&e, &x))?;
    let score = ok(r2(&y, &fitted))?;
    ensure!((score - 1.0).abs() <= 1e-9, "training R^2 = {score}");
    Ok(format!("training R^2 = {score}"))
}

fn metric_identities() -> Outcome {
    let y = [1.0, 2.0, 3.0];
    let p = [2.0, 2.0, 2.0];
    let (a, b, c) = (ok(mae(&y, &p))?, ok(rmse(&y, &p))?, ok(r2(&y, &p))?);
    ensure!(a == 2.0 / 3.0, "mae {a}");
    ensure!(b == (2.0f64 / 3.0).sqrt(), "rmse {b}");
    ensure!(c == 0.0, "r2 {c}");
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for i in 0..1000 {
        let n = rng.random_range(1..200);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1e3..1e3)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-1e3..1e3)).collect();
        let (a, b) = (ok(mae(&y, &p))?, ok(rmse(&y, &p))?);
        ensure!(b >= a * (1.0 - 1e-12), "vector {i}: rmse {b} < mae {a}");
    }
    Ok("hand examples exact; rmse >= mae on 1000 random vectors".into())
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-9 * scale.abs().max(1e-300)
}

/// EMA at `t` as an explicit weighted sum of the seed average and the
/// closes after it.
fn brute_ema(p: &[f64], period: usize, t: usize) -> f64 {
    let k = 2.0 / (period as f64 + 1.0);
    let sma = p[..period].iter().sum::<f64>() / period as f64;
    let steps = (t + 1 - period) as i32;
    let mut v = (1.0 - k).powi(steps) * sma;
    for (j, &pj) in p.iter().enumerate().take(t + 1).skip(period) {
        v += k * (1.0 - k).powi((t - j) as i32) * pj;
    }
    v
}

fn brute_wilder(moves: &[f64], period: usize, t: usize) -> f64 {
    let a = period as f64;
    let decay = 1.0 - 1.0 / a;
    let first = moves[..period].iter().sum::<f64>() / a;
    let mut v = decay.powi((t - period) as i32) * first;
    for (j, &d) in moves.iter().enumerate().take(t).skip(period) {
        v += decay.powi((t - 1 - j) as i32) * d / a;
    }
    v
}

fn brute_rsi(p: &[f64], period: usize, t: usize) -> f64 {
    let moves: Vec<f64> = p.windows(2).map(|w| w[1] - w[0]).collect();
    let gains: Vec<f64> = moves.iter().map(|d| d.max(0.0)).collect();
    let losses: Vec<f64> = moves.iter().map(|d| (-d).max(0.0)).collect();
    let g = brute_wilder(&gains, period, t);
    let l = brute_wilder(&losses, period, t);
    if l == 0.0 {
        100.0
    } else {
        100.0 * g / (g + l)
    }
}

fn random_candles(rng: &mut ChaCha8Rng, n: usize) -> Vec<Candle> {
    let mut price: f64 = 100.0;
    (0..n)
        .map(|i| {
            let open = price;
            price *= 1.0 + rng.random_range(-0.02..0.02);
            let close = price;
            let high = open.max(close) * (1.0 + rng.random_range(0.0..0.01));
            let low = open.min(close) * (1.0 - rng.random_range(0.0..0.01));
            Candle {
                open_time: i as i64 * 60_000,
                open,
                high,
                low,
                close,
                volume: 1.0,
                close_time: i as i64 * 60_000 + 59_999,
                quote_asset_volume: close,
                num_trades: 1,
                taker_buy_base_volume: 0.5,
                taker_buy_quote_volume: 0.5 * close,
            }
        })
        .collect()
}

fn indicator_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut checked = 0usize;
    for _ in 0..3 {
        let candles = random_candles(&mut rng, 500);
        let p: Vec<f64> = candles.iter().map(|c| c.close).collect();
        for period in [10, 14, 30, 200] {
            let ema = ok(indicators::ema(&p, period))?;
            let rsi = ok(indicators::rsi(&p, period))?;
            let mom = ok(indicators::momentum(&p, period))?;
            let k = ok(indicators::stoch_k(&candles, period))?;
            for t in 0..p.len() {
                let defined = [
                    ema.get(t).is_some() == (t + 1 >= period),
                    rsi.get(t).is_some() == (t >= period),
                    mom.get(t).is_some() == (t >= period),
                    k.get(t).is_some() == (t + 1 >= period),
                ];
                ensure!(
                    defined.iter().all(|&d| d),
                    "period {period}: definedness at {t}"
                );
                if let Some(v) = ema.get(t) {
                    let want = brute_ema(&p, period, t);
                    ensure!(close(v, want, want), "EMA_{period}[{t}] {v} vs {want}");
                }
                if let Some(v) = rsi.get(t) {
                    let want = brute_rsi(&p, period, t);
                    ensure!((0.0..=100.0).contains(&v), "RSI_{period}[{t}] = {v}");
                    ensure!(close(v, want, 100.0), "RSI_{period}[{t}] {v} vs {want}");
                }
                if let Some(v) = mom.get(t) {
                    let want = p[t] - p[t - period];
                    ensure!(close(v, want, p[t]), "MOM_{period}[{t}] {v} vs {want}");
                }
                if let Some(v) = k.get(t) {
                    let window = &candles[t + 1 - period..=t];
                    let hi = window.iter().map(|c| c.high).fold(f64::MIN, f64::max);
                    let lo = window.iter().map(|c| c.low).fold(f64::MAX, f64::min);
                    let want = 100.0 * (p[t] - lo) / (hi - lo);
                    ensure!((0.0..=100.0).contains(&v), "%K_{period}[{t}] = {v}");
                    ensure!(close(v, want, 100.0), "%K_{period}[{t}] {v} vs {want}");
                }
                checked += 4;
            }
        }
        let macd = ok(indicators::macd(&p, 12, 26))?;
        let proc9 = ok(indicators::proc(&p, 9))?;
        for t in 0..p.len() {
            ensure!(
                macd.get(t).is_some() == (t >= 25),
                "MACD definedness at {t}"
            );
            if let Some(v) = macd.get(t) {
                let fast = brute_ema(&p, 12, t);
                let want = fast - brute_ema(&p, 26, t);
                ensure!(close(v, want, fast), "MACD[{t}] {v} vs {want}");
            }
            ensure!(
                proc9.get(t).is_some() == (t >= 9),
                "PROC definedness at {t}"
            );
            if let Some(v) = proc9.get(t) {
                let want = 100.0 * (p[t] - p[t - 9]) / p[t - 9];
                ensure!(close(v, want, 100.0), "PROC_9[{t}] {v} vs {want}");
            }
            checked += 2;
        }
    }
    Ok(format!("{checked} points across 3 series of length 500"))
}

fn scaler_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for trial in 0..5 {
        let constant = [3usize, 11];
        let data: Vec<f64> = (0..1000 * 18)
            .map(|i| {
                let col = i % 18;
                if constant.contains(&col) {
                    col as f64 * 7.25
                } else {
                    rng.random_range(-1e4..1e4) * (col + 1) as f64 + 1e3 * col as f64
                }
            })
            .collect();
        let raw = ok(Matrix::from_vec(1000, 18, data))?;
        let z = ok(transform(&raw, &ok(fit_scaler(&raw))?))?;
        for j in 0..18 {
            let col: Vec<f64> = z.column(j).collect();
            if constant.contains(&j) {
                ensure!(
                    col.iter().all(|&v| v == 0.0),
                    "trial {trial}: constant column {j} not zero"
                );
                continue;
            }
            let mean = col.iter().sum::<f64>() / 1000.0;
            let std = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 1000.0).sqrt();
            ensure!(mean.abs() <= 1e-9, "trial {trial}: column {j} mean {mean}");
            ensure!(
                (std - 1.0).abs() <= 1e-9,
                "trial {trial}: column {j} std {std}"
            );
        }
    }
    Ok("5 random 1000x18 matrices, 2 constant columns each".into())
}

fn tuning_fixture() -> Result<(Matrix, Vec<f64>), String> {
    let series = ok(generate(&SyntheticConfig {
        n_candles: 600,
        seed: 3,
        ..SyntheticConfig::default()
    }))?;
    let f = ok(assemble(&series, 1))?;
    Ok((f.rows, f.targets))
}

fn tuner_correctness() -> Outcome {
    let (x, y) = tuning_fixture()?;
    let grid = ParamGrid {
        n_trees: vec![20, 40],
        learning_rate: vec![0.1],
        max_depth: vec![2, 4],
        min_child_weight: vec![1.0],
        subsample: vec![0.8],
        colsample: vec![0.8],
        gamma: vec![0.0],
        alpha: vec![0.5],
        lambda: vec![1.0],
    };
    let plan = ok(make_cv_plan(x.n_rows(), 3))?;
    let options = SearchOptions {
        base_seed: 5,
        jobs: None,
    };
    let result = ok(grid_search(&x, &y, &grid, &plan, &options))?;
    ensure!(
        result.leaderboard.len() == 4,
        "leaderboard has {} rows",
        result.leaderboard.len()
    );

    // Recompute every candidate's mean CV RMSE with direct calls.
    let mut external = Vec::new();
    for (index, hp) in grid.candidates(options.base_seed).into_iter().enumerate() {
        let mut total = 0.0;
        for fold in &plan.folds {
            let scaler = ok(fit_scaler(&x.select_rows(&fold.train)))?;
            let xt = ok(transform(&x.select_rows(&fold.train), &scaler))?;
            let xv = ok(transform(&x.select_rows(&fold.validation), &scaler))?;
            let yt: Vec<f64> = fold.train.iter().map(|&i| y[i]).collect();
            let yv: Vec<f64> = fold.validation.iter().map(|&i| y[i]).collect();
            let e = ok(gbtree::fit(&xt, &yt, &hp))?;
            total += ok(rmse(&yv, &ok(gbtree::predict(&e, &xv))?))?;
        }
        external.push((index, total / plan.folds.len() as f64));
    }
    external.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    for (entry, (index, score)) in result.leaderboard.iter().zip(&external) {
        ensure!(
            entry.index == *index,
            "order differs: {} vs {index}",
            entry.index
        );
        ensure!(
            (entry.mean_cv_rmse - score).abs() <= 1e-12,
            "candidate {index}: {} vs {score}",
            entry.mean_cv_rmse
        );
    }
    ensure!(result.best_rmse == external[0].1, "best_rmse mismatch");

    let reference = tuning::paper_grid();
    let count = reference.candidates(0).len();
    ensure!(count == 768, "reference grid has {count} candidates");
    let theta = Hyperparams::paper_best();
    let found = reference.candidates(0).iter().any(|c| {
        Hyperparams {
            seed: theta.seed,
            ..*c
        } == theta
    });
    ensure!(found, "reference grid lacks the chosen configuration");
    Ok("4-candidate leaderboard matches recomputation; reference grid has 768 incl. preset".into())
}

fn determinism() -> Outcome {
    let series = ok(generate(&SyntheticConfig {
        n_candles: 1500,
        ..SyntheticConfig::default()
    }))?;
    let f = ok(assemble(&series, 1))?;
    let hp = Hyperparams {
        n_trees: 60,
        subsample: 0.8,
        ..Hyperparams::paper_best()
    };
    let run = || -> Result<(String, String), String> {
        let out = ok(train_model(&f, &hp, 0.8))?;
        let report = ok(evaluate_rows(&out.model, &f, RowSelection::Test))?;
        Ok((ok(out.model.to_json())?, ok(report.metrics_json())?))
    };
    let first = run()?;
    let second = single_threaded(run)?;
    ensure!(first.0 == second.0, "model JSON differs between runs");
    ensure!(first.1 == second.1, "metrics JSON differs between runs");

    let (x, y) = tuning_fixture()?;
    let grid = ParamGrid {
        n_trees: vec![10, 20],
        learning_rate: vec![0.2],
        max_depth: vec![3],
        min_child_weight: vec![1.0, 3.0],
        subsample: vec![0.8, 1.0],
        colsample: vec![0.8],
        gamma: vec![0.0],
        alpha: vec![1.0],
        lambda: vec![0.5],
    };
    let plan = ok(make_cv_plan(x.n_rows(), 3))?;
    let mut boards = Vec::new();
    for jobs in [1, 2, 5] {
        let r = ok(grid_search(
            &x,
            &y,
            &grid,
            &plan,
            &SearchOptions {
                base_seed: 9,
                jobs: Some(jobs),
            },
        ))?;
        boards.push(r.leaderboard);
    }
    ensure!(
        boards.windows(2).all(|w| w[0] == w[1]),
        "leaderboard depends on the worker count"
    );
    Ok("identical model/metrics JSON across runs; leaderboard equal for 1, 2, 5 workers".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("pipeline fidelity", pipeline_fidelity),
        ("leaf-weight oracle", leaf_weight_oracle),
        ("split-finding oracle", split_oracle),
        ("exact fit", exact_fit),
        ("metric identities", metric_identities),
        ("indicator oracles", indicator_oracles),
        ("scaler", scaler_check),
        ("tuner correctness", tuner_correctness),
        ("determinism", determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
