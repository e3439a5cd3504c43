//! Reproducible synthetic klines for tests, demos and the bundled fixture.
//!
//! The log close follows a discretised Ornstein-Uhlenbeck walk around the log
//! of `start_price`. Mean reversion keeps late prices inside the range seen
//! early on, which a tree ensemble needs: it cannot extrapolate past the
//! targets it was trained on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use crate::error::{Error, Result};
use crate::market_data::{Candle, CandleSeries, IngestOptions, DEFAULT_INTERVAL_MS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub n_candles: usize,
    pub seed: u64,
    pub start_price: f64,
    /// Open time of the first candle, ms since the epoch.
    pub start_time_ms: i64,
    pub interval_ms: i64,
    /// Per-candle standard deviation of the log-return shock.
    pub volatility: f64,
    /// Per-candle pull of the log price back towards its starting level.
    pub reversion: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_candles: 5000,
            seed: 7,
            start_price: 33_500.0,
            start_time_ms: 1_612_137_600_000,
            interval_ms: DEFAULT_INTERVAL_MS,
            volatility: 0.004,
            reversion: 0.002,
        }
    }
}

fn cents(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

pub fn generate(config: &SyntheticConfig) -> Result<CandleSeries> {
    let SyntheticConfig {
        n_candles,
        seed,
        start_price,
        start_time_ms,
        interval_ms,
        volatility,
        reversion,
    } = *config;
    if n_candles == 0 {
        return Err(Error::invalid("n_candles must be at least 1"));
    }
    if !(start_price.is_finite() && start_price >= 1.0) {
        return Err(Error::invalid(format!(
            "start_price must be >= 1, got {start_price}"
        )));
    }
    if !(volatility.is_finite() && volatility > 0.0 && volatility <= 0.1) {
        return Err(Error::invalid(format!(
            "volatility must lie in (0, 0.1], got {volatility}"
        )));
    }
    if !(reversion.is_finite() && (0.0..1.0).contains(&reversion)) {
        return Err(Error::invalid(format!(
            "reversion must lie in [0, 1), got {reversion}"
        )));
    }
    if interval_ms <= 0 {
        return Err(Error::invalid(format!(
            "interval must be positive, got {interval_ms} ms"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shock = Normal::new(0.0, volatility).expect("volatility checked above");
    let wick = Normal::new(0.0, volatility * 0.5).expect("volatility checked above");
    let volume = LogNormal::new(3.0, 0.6).expect("constant parameters");

    let anchor = start_price.ln();
    let mut log_price = anchor;
    let mut open = cents(start_price);
    let mut candles = Vec::with_capacity(n_candles);
    for i in 0..n_candles {
        log_price += -reversion * (log_price - anchor) + shock.sample(&mut rng);
        let close = cents(log_price.exp());
        let top = open.max(close);
        let bottom = open.min(close);
        let high = cents(top * (1.0 + wick.sample(&mut rng).abs())).max(top);
        let low = cents(bottom * (1.0 - wick.sample(&mut rng).abs())).min(bottom);
        let vol: f64 = volume.sample(&mut rng);
        let mid = 0.5 * (high + low);
        let taker_share: f64 = rng.random_range(0.3..0.7);
        let taker_base = vol * taker_share;
        let open_time = start_time_ms + i as i64 * interval_ms;
        candles.push(Candle {
            open_time,
            open,
            high,
            low,
            close,
            volume: vol,
            close_time: open_time + interval_ms - 1,
            quote_asset_volume: vol * mid,
            num_trades: (vol * 30.0).round() as u64 + 1,
            taker_buy_base_volume: taker_base,
            taker_buy_quote_volume: taker_base * mid,
        });
        open = close;
    }
    CandleSeries::new(
        candles,
        &IngestOptions {
            interval_ms,
            ..IngestOptions::default()
        },
    )
}
