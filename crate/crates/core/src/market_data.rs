//! Candle ingestion: Binance kline JSON and a canonical CSV layout, plus the
//! chronological train/test split.

use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// 15 minutes.
pub const DEFAULT_INTERVAL_MS: i64 = 900_000;

/// Column order of the canonical candle CSV.
pub const CANDLE_CSV_HEADER: [&str; 11] = [
    "open_time",
    "open",
    "high",
    "low",
    "close",
    "volume",
    "close_time",
    "quote_asset_volume",
    "num_trades",
    "taker_buy_base_volume",
    "taker_buy_quote_volume",
];

/// Binance klines carry 12 fields; the last one is unused and dropped.
const KLINE_FIELDS: usize = 12;

/// One OHLCV bar with the exchange's extended volume fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candle {
    pub open_time: i64,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
    pub close_time: i64,
    pub quote_asset_volume: f64,
    pub num_trades: u64,
    pub taker_buy_base_volume: f64,
    pub taker_buy_quote_volume: f64,
}

impl Candle {
    /// Checks the per-bar invariants, returning a description of the first
    /// violation.
    pub fn check(&self) -> std::result::Result<(), String> {
        let prices = [
            ("open", self.open),
            ("high", self.high),
            ("low", self.low),
            ("close", self.close),
            ("volume", self.volume),
            ("quote_asset_volume", self.quote_asset_volume),
            ("taker_buy_base_volume", self.taker_buy_base_volume),
            ("taker_buy_quote_volume", self.taker_buy_quote_volume),
        ];
        if let Some((name, v)) = prices.iter().find(|(_, v)| !v.is_finite()) {
            return Err(format!("{name} is not finite ({v})"));
        }
        if self.low > self.high {
            return Err(format!("low {} > high {}", self.low, self.high));
        }
        if !(self.low <= self.open && self.open <= self.high) {
            return Err(format!(
                "open {} outside [{}, {}]",
                self.open, self.low, self.high
            ));
        }
        if !(self.low <= self.close && self.close <= self.high) {
            return Err(format!(
                "close {} outside [{}, {}]",
                self.close, self.low, self.high
            ));
        }
        if self.volume < 0.0 || self.quote_asset_volume < 0.0 {
            return Err("negative volume".to_string());
        }
        if self.close_time <= self.open_time {
            return Err(format!(
                "close_time {} not after open_time {}",
                self.close_time, self.open_time
            ));
        }
        Ok(())
    }
}

/// What to do when consecutive candles are further apart than the interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GapPolicy {
    #[default]
    Reject,
    /// Keep the series and record where each gap occurs.
    Flag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestOptions {
    pub interval_ms: i64,
    pub gap_policy: GapPolicy,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            interval_ms: DEFAULT_INTERVAL_MS,
            gap_policy: GapPolicy::Reject,
        }
    }
}

/// A validated, strictly increasing run of candles at a fixed interval.
#[derive(Debug, Clone, PartialEq)]
pub struct CandleSeries {
    interval_ms: i64,
    candles: Vec<Candle>,
    gaps: Vec<usize>,
}

impl CandleSeries {
    pub fn new(candles: Vec<Candle>, options: &IngestOptions) -> Result<Self> {
        if options.interval_ms <= 0 {
            return Err(Error::invalid(format!(
                "interval must be positive, got {} ms",
                options.interval_ms
            )));
        }
        let mut gaps = Vec::new();
        for (i, c) in candles.iter().enumerate() {
            c.check()
                .map_err(|message| Error::CandleInvariant { record: i, message })?;
            if i == 0 {
                continue;
            }
            let prev = candles[i - 1].open_time;
            let delta = c.open_time - prev;
            if delta <= 0 {
                return Err(Error::NonMonotone {
                    record: i,
                    previous: prev,
                    current: c.open_time,
                });
            }
            if delta != options.interval_ms {
                match options.gap_policy {
                    GapPolicy::Reject => {
                        return Err(Error::Gap {
                            record: i,
                            delta_ms: delta,
                            interval_ms: options.interval_ms,
                        })
                    }
                    GapPolicy::Flag => gaps.push(i),
                }
            }
        }
        Ok(CandleSeries {
            interval_ms: options.interval_ms,
            candles,
            gaps,
        })
    }

    pub fn interval_ms(&self) -> i64 {
        self.interval_ms
    }

    pub fn candles(&self) -> &[Candle] {
        &self.candles
    }

    /// Indices `i` where `candles[i]` does not follow `candles[i - 1]` by
    /// exactly one interval. Always empty under [`GapPolicy::Reject`].
    pub fn gaps(&self) -> &[usize] {
        &self.gaps
    }

    pub fn len(&self) -> usize {
        self.candles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candles.is_empty()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.candles.iter().map(|c| c.close).collect()
    }
}

fn json_f64(v: &Value, record: usize, field: &str) -> Result<f64> {
    let parsed = match v {
        Value::String(s) => s.trim().parse::<f64>().ok(),
        Value::Number(n) => n.as_f64(),
        _ => None,
    };
    match parsed {
        Some(x) if x.is_finite() => Ok(x),
        Some(x) => Err(Error::Parse {
            record,
            message: format!("{field}: non-finite number {x}"),
        }),
        None => Err(Error::Parse {
            record,
            message: format!("{field}: expected a number, got {v}"),
        }),
    }
}

fn json_i64(v: &Value, record: usize, field: &str) -> Result<i64> {
    let parsed = match v {
        Value::Number(n) => n.as_i64(),
        Value::String(s) => s.trim().parse::<i64>().ok(),
        _ => None,
    };
    parsed.ok_or_else(|| Error::Parse {
        record,
        message: format!("{field}: expected an integer, got {v}"),
    })
}

/// Parses the exchange's kline array-of-arrays layout.
pub fn parse_kline_json(raw: &[u8], options: &IngestOptions) -> Result<CandleSeries> {
    let rows: Vec<Value> = serde_json::from_slice(raw)?;
    let mut candles = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let fields = row.as_array().ok_or_else(|| Error::Parse {
            record: i,
            message: "kline is not an array".into(),
        })?;
        if fields.len() != KLINE_FIELDS {
            return Err(Error::Parse {
                record: i,
                message: format!("expected {KLINE_FIELDS} kline fields, got {}", fields.len()),
            });
        }
        let num_trades = json_i64(&fields[8], i, "num_trades")?;
        if num_trades < 0 {
            return Err(Error::CandleInvariant {
                record: i,
                message: format!("negative trade count {num_trades}"),
            });
        }
        candles.push(Candle {
            open_time: json_i64(&fields[0], i, "open_time")?,
            open: json_f64(&fields[1], i, "open")?,
            high: json_f64(&fields[2], i, "high")?,
            low: json_f64(&fields[3], i, "low")?,
            close: json_f64(&fields[4], i, "close")?,
            volume: json_f64(&fields[5], i, "volume")?,
            close_time: json_i64(&fields[6], i, "close_time")?,
            quote_asset_volume: json_f64(&fields[7], i, "quote_asset_volume")?,
            num_trades: num_trades as u64,
            taker_buy_base_volume: json_f64(&fields[9], i, "taker_buy_base_volume")?,
            taker_buy_quote_volume: json_f64(&fields[10], i, "taker_buy_quote_volume")?,
        });
    }
    CandleSeries::new(candles, options)
}

/// Serializes candles back into kline JSON (numeric fields as strings, the
/// trailing unused field as `"0"`).
pub fn to_kline_json(candles: &[Candle]) -> String {
    let rows: Vec<Value> = candles
        .iter()
        .map(|c| {
            serde_json::json!([
                c.open_time,
                c.open.to_string(),
                c.high.to_string(),
                c.low.to_string(),
                c.close.to_string(),
                c.volume.to_string(),
                c.close_time,
                c.quote_asset_volume.to_string(),
                c.num_trades,
                c.taker_buy_base_volume.to_string(),
                c.taker_buy_quote_volume.to_string(),
                "0"
            ])
        })
        .collect();
    Value::Array(rows).to_string()
}

/// Parses the canonical candle CSV. Columns are located by header name;
/// unknown extra columns are ignored.
pub fn parse_candles_csv(raw: &[u8], options: &IngestOptions) -> Result<CandleSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(raw);
    let headers = reader.headers()?.clone();
    let mut positions = [0usize; 11];
    for (slot, name) in positions.iter_mut().zip(CANDLE_CSV_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                record: 0,
                message: format!("missing column {name:?}"),
            })?;
    }

    let mut candles = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let cell = |k: usize| -> Result<&str> {
            record.get(positions[k]).ok_or_else(|| Error::Parse {
                record: i,
                message: format!("missing cell {}", CANDLE_CSV_HEADER[k]),
            })
        };
        let float = |k: usize| -> Result<f64> {
            let s = cell(k)?;
            match s.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(Error::Parse {
                    record: i,
                    message: format!("{}: unparsable number {s:?}", CANDLE_CSV_HEADER[k]),
                }),
            }
        };
        let int = |k: usize| -> Result<i64> {
            let s = cell(k)?;
            s.parse::<i64>().map_err(|_| Error::Parse {
                record: i,
                message: format!("{}: unparsable integer {s:?}", CANDLE_CSV_HEADER[k]),
            })
        };
        let num_trades = cell(8)?.parse::<u64>().map_err(|_| Error::Parse {
            record: i,
            message: format!(
                "num_trades: unparsable count {:?}",
                record.get(positions[8])
            ),
        })?;
        candles.push(Candle {
            open_time: int(0)?,
            open: float(1)?,
            high: float(2)?,
            low: float(3)?,
            close: float(4)?,
            volume: float(5)?,
            close_time: int(6)?,
            quote_asset_volume: float(7)?,
            num_trades,
            taker_buy_base_volume: float(9)?,
            taker_buy_quote_volume: float(10)?,
        });
    }
    CandleSeries::new(candles, options)
}

/// Writes the canonical candle CSV. Floats use shortest round-trip formatting,
/// so re-parsing yields identical values.
pub fn write_candles_csv<W: Write>(candles: &[Candle], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CANDLE_CSV_HEADER)?;
    for c in candles {
        w.write_record([
            c.open_time.to_string(),
            c.open.to_string(),
            c.high.to_string(),
            c.low.to_string(),
            c.close.to_string(),
            c.volume.to_string(),
            c.close_time.to_string(),
            c.quote_asset_volume.to_string(),
            c.num_trades.to_string(),
            c.taker_buy_base_volume.to_string(),
            c.taker_buy_quote_volume.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Sizes of a chronological (unshuffled) train/test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub m: usize,
    pub m_train: usize,
    pub m_test: usize,
}

impl SplitSpec {
    pub fn train_range(&self) -> std::ops::Range<usize> {
        0..self.m_train
    }

    pub fn test_range(&self) -> std::ops::Range<usize> {
        self.m_train..self.m
    }
}

pub fn chronological_split(m: usize, train_fraction: f64) -> Result<SplitSpec> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    // The epsilon keeps products such as 0.29 * 100 from flooring to 28.
    let m_train = (train_fraction * m as f64 + 1e-9).floor() as usize;
    let m_train = m_train.min(m);
    if m < 2 || m_train == 0 || m_train == m {
        return Err(Error::invalid(format!(
            "cannot split {m} rows with train fraction {train_fraction}: both sides need at least one row"
        )));
    }
    Ok(SplitSpec {
        train_fraction,
        m,
        m_train,
        m_test: m - m_train,
    })
}
