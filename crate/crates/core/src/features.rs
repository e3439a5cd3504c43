//! The 18-column feature matrix, its CSV form, and train-fitted
//! standardization.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indicators::{self, IndicatorSeries, MACD_FAST, MACD_SLOW};
use crate::market_data::CandleSeries;
use crate::matrix::Matrix;

/// Column order of the feature vector.
pub const FEATURE_NAMES: [&str; 18] = [
    "Cp", "V", "QAV", "NOT", "TBBV", "RSI_14", "RSI_30", "RSI_200", "MOM_10", "MOM_30", "MACD",
    "PROC_9", "EMA_10", "EMA_30", "EMA_200", "%K_10", "%K_30", "%K_200",
];

pub const N_FEATURES: usize = FEATURE_NAMES.len();

/// Index of the close-price column.
pub const CLOSE_COLUMN: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub macd_fast: usize,
    pub macd_slow: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            macd_fast: MACD_FAST,
            macd_slow: MACD_SLOW,
        }
    }
}

impl FeatureConfig {
    /// First candle index at which every feature is defined.
    pub fn warm_up(&self) -> usize {
        // EMA_200, RSI_200, %K_200, MOM_30, MACD, PROC_9.
        [199, 200, 199, 30, self.macd_slow - 1, 9]
            .into_iter()
            .max()
            .unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub feature_names: Vec<String>,
    pub rows: Matrix,
    pub targets: Vec<f64>,
    pub timestamps: Vec<i64>,
    pub horizon: usize,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Rows `range` of matrix, targets and timestamps together.
    pub fn slice(&self, range: std::ops::Range<usize>) -> FeatureMatrix {
        FeatureMatrix {
            feature_names: self.feature_names.clone(),
            rows: self.rows.slice_rows(range.clone()),
            targets: self.targets[range.clone()].to_vec(),
            timestamps: self.timestamps[range].to_vec(),
            horizon: self.horizon,
        }
    }
}

pub fn assemble(series: &CandleSeries, horizon: usize) -> Result<FeatureMatrix> {
    assemble_with(series, horizon, &FeatureConfig::default())
}

/// Builds one row per candle whose features are all defined and whose
/// target, the close `horizon` candles later, exists.
pub fn assemble_with(
    series: &CandleSeries,
    horizon: usize,
    config: &FeatureConfig,
) -> Result<FeatureMatrix> {
    if config.macd_fast == 0 || config.macd_fast >= config.macd_slow {
        return Err(Error::invalid(format!(
            "MACD periods must satisfy 0 < fast < slow, got {}/{}",
            config.macd_fast, config.macd_slow
        )));
    }
    let first = config.warm_up();
    let len = series.len();
    if len <= first + horizon {
        return Err(Error::InsufficientHistory {
            needed: first + horizon + 1,
            got: len,
        });
    }

    let candles = series.candles();
    let closes = series.closes();
    let derived: Vec<IndicatorSeries> = vec![
        indicators::rsi(&closes, 14)?,
        indicators::rsi(&closes, 30)?,
        indicators::rsi(&closes, 200)?,
        indicators::momentum(&closes, 10)?,
        indicators::momentum(&closes, 30)?,
        indicators::macd(&closes, config.macd_fast, config.macd_slow)?,
        indicators::proc(&closes, 9)?,
        indicators::ema(&closes, 10)?,
        indicators::ema(&closes, 30)?,
        indicators::ema(&closes, 200)?,
        indicators::stoch_k(candles, 10)?,
        indicators::stoch_k(candles, 30)?,
        indicators::stoch_k(candles, 200)?,
    ];
    debug_assert!(derived.iter().all(|s| s.first_valid_index <= first));

    let m = len - first - horizon;
    let mut data = Vec::with_capacity(m * N_FEATURES);
    let mut targets = Vec::with_capacity(m);
    let mut timestamps = Vec::with_capacity(m);
    for t in first..first + m {
        let c = &candles[t];
        data.extend_from_slice(&[
            c.close,
            c.volume,
            c.quote_asset_volume,
            c.num_trades as f64,
            c.taker_buy_base_volume,
        ]);
        data.extend(derived.iter().map(|s| s.values[t].expect("past warm-up")));
        targets.push(candles[t + horizon].close);
        timestamps.push(c.open_time);
    }

    Ok(FeatureMatrix {
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        rows: Matrix::from_vec(m, N_FEATURES, data)?,
        targets,
        timestamps,
        horizon,
    })
}

/// Writes `timestamp,<feature names>,target`.
pub fn write_features_csv<W: Write>(features: &FeatureMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["timestamp".to_string()];
    header.extend(features.feature_names.iter().cloned());
    header.push("target".into());
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for (i, row) in features.rows.rows().enumerate() {
        record.clear();
        record.push(features.timestamps[i].to_string());
        record.extend(row.iter().map(f64::to_string));
        record.push(features.targets[i].to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a feature CSV. The first column must be `timestamp` and the last
/// `target`; everything between is taken as features, in file order. The
/// horizon is not stored in the file and is supplied by the caller.
pub fn read_features_csv(raw: &[u8], horizon: usize) -> Result<FeatureMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(raw);
    let headers = reader.headers()?.clone();
    let n = headers.len();
    if n < 3 || &headers[0] != "timestamp" || &headers[n - 1] != "target" {
        return Err(Error::Parse {
            record: 0,
            message: "feature header must be timestamp,<features...>,target".into(),
        });
    }
    let feature_names: Vec<String> = headers
        .iter()
        .skip(1)
        .take(n - 2)
        .map(String::from)
        .collect();
    let n_features = feature_names.len();

    let mut data = Vec::new();
    let mut targets = Vec::new();
    let mut timestamps = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let ts = record[0].parse::<i64>().map_err(|_| Error::Parse {
            record: i,
            message: format!("timestamp: unparsable integer {:?}", &record[0]),
        })?;
        if timestamps.last().is_some_and(|&prev| prev >= ts) {
            return Err(Error::NonMonotone {
                record: i,
                previous: *timestamps.last().unwrap(),
                current: ts,
            });
        }
        timestamps.push(ts);
        for k in 1..n {
            let v = record[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    record: i,
                    message: format!("{}: unparsable number {:?}", &headers[k], &record[k]),
                })?;
            if k == n - 1 {
                targets.push(v);
            } else {
                data.push(v);
            }
        }
    }
    let m = targets.len();
    Ok(FeatureMatrix {
        feature_names,
        rows: Matrix::from_vec(m, n_features, data)?,
        targets,
        timestamps,
        horizon,
    })
}

/// Per-column mean and population standard deviation of the rows a scaler
/// was fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub fitted_on: usize,
}

pub fn fit_scaler(rows: &Matrix) -> Result<ScalerParams> {
    if rows.is_empty() {
        return Err(Error::Empty("cannot fit a scaler on zero rows"));
    }
    let m = rows.n_rows() as f64;
    let mut means = Vec::with_capacity(rows.n_cols());
    let mut stds = Vec::with_capacity(rows.n_cols());
    for j in 0..rows.n_cols() {
        let mean = rows.column(j).sum::<f64>() / m;
        let var = rows.column(j).map(|x| (x - mean) * (x - mean)).sum::<f64>() / m;
        means.push(mean);
        stds.push(var.sqrt());
    }
    Ok(ScalerParams {
        means,
        stds,
        fitted_on: rows.n_rows(),
    })
}

/// `(x - mean) / std` per column; columns with zero spread map to 0.
pub fn transform(rows: &Matrix, params: &ScalerParams) -> Result<Matrix> {
    if rows.n_cols() != params.means.len() {
        return Err(Error::DimensionMismatch {
            what: "feature columns",
            expected: params.means.len(),
            got: rows.n_cols(),
        });
    }
    let mut out = Matrix::zeros(rows.n_rows(), rows.n_cols());
    for i in 0..rows.n_rows() {
        for j in 0..rows.n_cols() {
            let sd = params.stds[j];
            if sd > 0.0 {
                out.set(i, j, (rows.get(i, j) - params.means[j]) / sd);
            }
        }
    }
    Ok(out)
}
