//! Technical indicators over close prices (and, for %K, the high/low range).
//!
//! Every indicator returns a series as long as its input. Warm-up positions
//! hold `None`; from `first_valid_index` on every value is finite.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::Candle;

/// MACD fast/slow EMA periods used when none are configured.
pub const MACD_FAST: usize = 12;
pub const MACD_SLOW: usize = 26;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSeries {
    pub name: String,
    pub values: Vec<Option<f64>>,
    pub first_valid_index: usize,
}

impl IndicatorSeries {
    fn from_tail(name: String, len: usize, first_valid_index: usize, tail: Vec<f64>) -> Self {
        debug_assert_eq!(first_valid_index + tail.len(), len);
        let mut values = vec![None; first_valid_index];
        values.extend(tail.into_iter().map(Some));
        IndicatorSeries {
            name,
            values,
            first_valid_index,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<f64> {
        self.values.get(i).copied().flatten()
    }

    /// Defined values only, starting at `first_valid_index`.
    pub fn defined(&self) -> impl Iterator<Item = f64> + '_ {
        self.values[self.first_valid_index..]
            .iter()
            .map(|v| v.unwrap_or(f64::NAN))
    }
}

fn check_period(period: usize) -> Result<()> {
    if period == 0 {
        return Err(Error::invalid("indicator period must be at least 1"));
    }
    Ok(())
}

fn need(len: usize, needed: usize) -> Result<()> {
    if len < needed {
        return Err(Error::InsufficientHistory { needed, got: len });
    }
    Ok(())
}

/// Exponential moving average, seeded with the simple average of the first
/// `period` closes and smoothed with `k = 2 / (period + 1)`.
pub fn ema(closes: &[f64], period: usize) -> Result<IndicatorSeries> {
    check_period(period)?;
    need(closes.len(), period)?;
    let k = 2.0 / (period as f64 + 1.0);
    let seed = closes[..period].iter().sum::<f64>() / period as f64;
    let mut tail = Vec::with_capacity(closes.len() - period + 1);
    tail.push(seed);
    let mut prev = seed;
    for &p in &closes[period..] {
        prev += k * (p - prev);
        tail.push(prev);
    }
    Ok(IndicatorSeries::from_tail(
        format!("EMA_{period}"),
        closes.len(),
        period - 1,
        tail,
    ))
}

/// Relative strength index with Wilder smoothing.
///
/// A zero average loss gives 100 (this includes a perfectly flat window);
/// otherwise a zero average gain gives 0.
pub fn rsi(closes: &[f64], period: usize) -> Result<IndicatorSeries> {
    check_period(period)?;
    need(closes.len(), period + 1)?;
    let alpha = period as f64;
    let moves: Vec<f64> = closes.windows(2).map(|w| w[1] - w[0]).collect();

    let mut avg_gain = moves[..period].iter().map(|d| d.max(0.0)).sum::<f64>() / alpha;
    let mut avg_loss = moves[..period].iter().map(|d| (-d).max(0.0)).sum::<f64>() / alpha;

    let mut tail = Vec::with_capacity(closes.len() - period);
    tail.push(rsi_value(avg_gain, avg_loss));
    for &d in &moves[period..] {
        avg_gain = (avg_gain * (alpha - 1.0) + d.max(0.0)) / alpha;
        avg_loss = (avg_loss * (alpha - 1.0) + (-d).max(0.0)) / alpha;
        tail.push(rsi_value(avg_gain, avg_loss));
    }
    Ok(IndicatorSeries::from_tail(
        format!("RSI_{period}"),
        closes.len(),
        period,
        tail,
    ))
}

#[inline]
pub(crate) fn rsi_value(avg_gain: f64, avg_loss: f64) -> f64 {
    if avg_loss == 0.0 {
        100.0
    } else if avg_gain == 0.0 {
        0.0
    } else {
        100.0 - 100.0 / (1.0 + avg_gain / avg_loss)
    }
}

/// Fast EMA minus slow EMA, defined once the slow EMA is.
pub fn macd(closes: &[f64], fast: usize, slow: usize) -> Result<IndicatorSeries> {
    check_period(fast)?;
    if fast >= slow {
        return Err(Error::invalid(format!(
            "MACD fast period ({fast}) must be shorter than slow period ({slow})"
        )));
    }
    need(closes.len(), slow)?;
    let f = ema(closes, fast)?;
    let s = ema(closes, slow)?;
    let tail = (slow - 1..closes.len())
        .map(|i| f.values[i].unwrap() - s.values[i].unwrap())
        .collect();
    let name = if (fast, slow) == (MACD_FAST, MACD_SLOW) {
        "MACD".to_string()
    } else {
        format!("MACD_{fast}_{slow}")
    };
    Ok(IndicatorSeries::from_tail(
        name,
        closes.len(),
        slow - 1,
        tail,
    ))
}

/// `P[t] - P[t - period]`.
pub fn momentum(closes: &[f64], period: usize) -> Result<IndicatorSeries> {
    check_period(period)?;
    need(closes.len(), period + 1)?;
    let tail = (period..closes.len())
        .map(|t| closes[t] - closes[t - period])
        .collect();
    Ok(IndicatorSeries::from_tail(
        format!("MOM_{period}"),
        closes.len(),
        period,
        tail,
    ))
}

/// Price rate of change in percent: `100 * (P[t] - P[t - period]) / P[t - period]`.
pub fn proc(closes: &[f64], period: usize) -> Result<IndicatorSeries> {
    check_period(period)?;
    need(closes.len(), period + 1)?;
    let mut tail = Vec::with_capacity(closes.len() - period);
    for t in period..closes.len() {
        let reference = closes[t - period];
        if reference == 0.0 {
            return Err(Error::ZeroReference { index: t - period });
        }
        tail.push(100.0 * (closes[t] - reference) / reference);
    }
    Ok(IndicatorSeries::from_tail(
        format!("PROC_{period}"),
        closes.len(),
        period,
        tail,
    ))
}

/// Stochastic oscillator %K: where the close sits inside the high/low range of
/// the last `period` candles, inclusive of the current one. A flat range
/// yields 50.
pub fn stoch_k(candles: &[Candle], period: usize) -> Result<IndicatorSeries> {
    check_period(period)?;
    need(candles.len(), period)?;

    // Monotone deques of indices: highs decreasing, lows increasing.
    let mut highs: VecDeque<usize> = VecDeque::with_capacity(period);
    let mut lows: VecDeque<usize> = VecDeque::with_capacity(period);
    let mut tail = Vec::with_capacity(candles.len() - period + 1);

    for (t, c) in candles.iter().enumerate() {
        while highs.back().is_some_and(|&j| candles[j].high <= c.high) {
            highs.pop_back();
        }
        highs.push_back(t);
        while lows.back().is_some_and(|&j| candles[j].low >= c.low) {
            lows.pop_back();
        }
        lows.push_back(t);

        if t + 1 < period {
            continue;
        }
        let start = t + 1 - period;
        while highs.front().is_some_and(|&j| j < start) {
            highs.pop_front();
        }
        while lows.front().is_some_and(|&j| j < start) {
            lows.pop_front();
        }
        let hi = candles[highs[0]].high;
        let lo = candles[lows[0]].low;
        tail.push(stoch_value(c.close, lo, hi));
    }
    Ok(IndicatorSeries::from_tail(
        format!("%K_{period}"),
        candles.len(),
        period - 1,
        tail,
    ))
}

#[inline]
pub(crate) fn stoch_value(close: f64, low: f64, high: f64) -> f64 {
    if high == low {
        50.0
    } else {
        // The close lies inside the window by the candle invariants.
        (100.0 * (close - low) / (high - low)).clamp(0.0, 100.0)
    }
}
