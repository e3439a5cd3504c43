//! Browser bindings for the demo page in `www/`.
//!
//! Each operation is a plain function returning a serializable struct, so it
//! can be tested natively; the `#[wasm_bindgen]` wrappers hand the same data
//! to JavaScript as JSON strings.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use tickforge::eval_report::Metrics;
use tickforge::features::assemble;
use tickforge::gbtree::leaf_weight;
use tickforge::indicators::{self, IndicatorSeries};
use tickforge::pipeline::{evaluate_rows, train_model, RowSelection};
use tickforge::synthetic::{generate, SyntheticConfig};
use tickforge::{Hyperparams, Result};

/// Largest series the page may request; keeps a fit interactive.
pub const MAX_CANDLES: usize = 20_000;

#[derive(Debug, Serialize)]
pub struct Curve {
    pub name: String,
    /// `None` (JSON `null`) during warm-up.
    pub values: Vec<Option<f64>>,
}

impl From<IndicatorSeries> for Curve {
    fn from(s: IndicatorSeries) -> Self {
        Curve {
            name: s.name,
            values: s.values,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct IndicatorView {
    pub closes: Vec<f64>,
    pub highs: Vec<f64>,
    pub lows: Vec<f64>,
    /// Drawn over the price panel.
    pub overlays: Vec<Curve>,
    /// Bounded to [0, 100].
    pub oscillators: Vec<Curve>,
    pub macd: Curve,
}

fn synthetic(seed: u64, n: usize, volatility: f64) -> Result<tickforge::CandleSeries> {
    if n > MAX_CANDLES {
        return Err(tickforge::Error::InvalidParameter(format!(
            "at most {MAX_CANDLES} candles, got {n}"
        )));
    }
    generate(&SyntheticConfig {
        n_candles: n,
        seed,
        volatility,
        ..SyntheticConfig::default()
    })
}

/// A synthetic series with its EMA, RSI, %K and MACD curves.
pub fn indicator_curves(seed: u64, n: usize, volatility: f64) -> Result<IndicatorView> {
    let series = synthetic(seed, n, volatility)?;
    let closes = series.closes();
    let candles = series.candles();
    Ok(IndicatorView {
        highs: candles.iter().map(|c| c.high).collect(),
        lows: candles.iter().map(|c| c.low).collect(),
        overlays: vec![
            indicators::ema(&closes, 10)?.into(),
            indicators::ema(&closes, 30)?.into(),
        ],
        oscillators: vec![
            indicators::rsi(&closes, 14)?.into(),
            indicators::stoch_k(candles, 14)?.into(),
        ],
        macd: indicators::macd(&closes, indicators::MACD_FAST, indicators::MACD_SLOW)?.into(),
        closes,
    })
}

#[derive(Debug, Serialize)]
pub struct FitView {
    pub train_metrics: Metrics,
    pub test_metrics: Metrics,
    pub m_train: usize,
    pub timestamps: Vec<i64>,
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct FitRequest {
    pub seed: u64,
    pub n_candles: usize,
    pub horizon: usize,
    pub n_trees: usize,
    pub eta: f64,
    pub max_depth: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
}

/// Trains on the first 80% of a synthetic series and scores the rest.
pub fn fit_demo(req: &FitRequest) -> Result<FitView> {
    let series = synthetic(
        req.seed,
        req.n_candles,
        SyntheticConfig::default().volatility,
    )?;
    let features = assemble(&series, req.horizon)?;
    let hp = Hyperparams {
        n_trees: req.n_trees,
        learning_rate: req.eta,
        max_depth: req.max_depth,
        lambda: req.lambda,
        alpha: req.alpha,
        gamma: req.gamma,
        seed: req.seed,
        ..Hyperparams::paper_best()
    };
    let out = train_model(&features, &hp, 0.8)?;
    let report = evaluate_rows(&out.model, &features, RowSelection::Test)?;
    Ok(FitView {
        train_metrics: out.train_metrics,
        test_metrics: report.metrics,
        m_train: out.split.m_train,
        timestamps: report.pairs.iter().map(|p| p.timestamp).collect(),
        actual: report.pairs.iter().map(|p| p.actual).collect(),
        predicted: report.pairs.iter().map(|p| p.predicted).collect(),
        residuals: report.residuals,
    })
}

#[derive(Debug, Serialize)]
pub struct LeafView {
    /// Optimal weight for the requested gradient sum.
    pub weight: f64,
    /// `(w, G*w + (H + lambda)*w^2/2 + alpha*|w|)` around the optimum.
    pub objective: Vec<(f64, f64)>,
    /// `(G, optimal w)` for G across a symmetric range.
    pub weights: Vec<(f64, f64)>,
}

/// The regularized leaf objective and the soft-thresholded weight map.
pub fn leaf_weight_curve(g: f64, h: f64, lambda: f64, alpha: f64) -> Result<LeafView> {
    const POINTS: usize = 201;
    let weight = leaf_weight(g, h, lambda, alpha)?;
    let span = weight.abs().max(1.0) * 2.0;
    let objective = (0..POINTS)
        .map(|i| {
            let w = -span + 2.0 * span * i as f64 / (POINTS - 1) as f64;
            (w, g * w + 0.5 * (h + lambda) * w * w + alpha * w.abs())
        })
        .collect();
    let g_span = (g.abs() * 1.5).max(alpha * 2.0).max(1.0);
    let weights = (0..POINTS)
        .map(|i| {
            let gi = -g_span + 2.0 * g_span * i as f64 / (POINTS - 1) as f64;
            leaf_weight(gi, h, lambda, alpha).map(|w| (gi, w))
        })
        .collect::<Result<_>>()?;
    Ok(LeafView {
        weight,
        objective,
        weights,
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = indicatorCurves)]
pub fn indicator_curves_js(
    seed: u32,
    n: u32,
    volatility: f64,
) -> std::result::Result<String, JsError> {
    to_js(indicator_curves(u64::from(seed), n as usize, volatility))
}

#[wasm_bindgen(js_name = fitDemo)]
#[allow(clippy::too_many_arguments)]
pub fn fit_demo_js(
    seed: u32,
    n_candles: u32,
    horizon: u32,
    n_trees: u32,
    eta: f64,
    max_depth: u32,
    lambda: f64,
    alpha: f64,
    gamma: f64,
) -> std::result::Result<String, JsError> {
    to_js(fit_demo(&FitRequest {
        seed: u64::from(seed),
        n_candles: n_candles as usize,
        horizon: horizon as usize,
        n_trees: n_trees as usize,
        eta,
        max_depth: max_depth as usize,
        lambda,
        alpha,
        gamma,
    }))
}

#[wasm_bindgen(js_name = leafWeightCurve)]
pub fn leaf_weight_curve_js(
    g: f64,
    h: f64,
    lambda: f64,
    alpha: f64,
) -> std::result::Result<String, JsError> {
    to_js(leaf_weight_curve(g, h, lambda, alpha))
}
