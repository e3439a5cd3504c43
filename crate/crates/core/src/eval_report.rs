//! Regression metrics and the files behind the residual and
//! predicted-vs-actual plots.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::DimensionMismatch {
            what: "predictions",
            expected: y.len(),
            got: yhat.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::Empty("metrics need at least one sample"));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let sum: f64 = y.iter().zip(yhat).map(|(a, p)| (a - p).abs()).sum();
    Ok(sum / y.len() as f64)
}

/// Root mean squared error.
pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let sum: f64 = y.iter().zip(yhat).map(|(a, p)| (a - p) * (a - p)).sum();
    Ok((sum / y.len() as f64).sqrt())
}

/// Coefficient of determination, `1 - SS_res / SS_tot`. Errors on a constant
/// target rather than returning a non-finite value.
pub fn r2(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    if y.len() < 2 {
        return Err(Error::InsufficientHistory {
            needed: 2,
            got: y.len(),
        });
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|a| (a - mean) * (a - mean)).sum();
    if ss_tot <= 0.0 {
        return Err(Error::UndefinedR2);
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, p)| (a - p) * (a - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
    pub n: usize,
}

impl Metrics {
    pub fn compute(y: &[f64], yhat: &[f64]) -> Result<Self> {
        Ok(Metrics {
            mae: mae(y, yhat)?,
            rmse: rmse(y, yhat)?,
            r2: r2(y, yhat)?,
            n: y.len(),
        })
    }

    /// Plain-text table of the three metrics at 4 decimals.
    pub fn table(&self) -> String {
        let rows = [("RMSE", self.rmse), ("MAE", self.mae), ("R^2", self.r2)];
        let mut out = String::new();
        let _ = writeln!(out, "+--------+--------------+");
        let _ = writeln!(out, "| Metric |        Value |");
        let _ = writeln!(out, "+--------+--------------+");
        for (name, v) in rows {
            let _ = writeln!(out, "| {name:<6} | {v:>12.4} |");
        }
        let _ = writeln!(out, "+--------+--------------+");
        let _ = writeln!(out, "n = {}", self.n);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionPair {
    pub timestamp: i64,
    pub actual: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metrics: Metrics,
    /// `actual - predicted`, in row order.
    pub residuals: Vec<f64>,
    pub pairs: Vec<PredictionPair>,
}

impl EvalReport {
    pub fn new(actual: &[f64], predicted: &[f64], timestamps: &[i64]) -> Result<Self> {
        let metrics = Metrics::compute(actual, predicted)?;
        if timestamps.len() != actual.len() {
            return Err(Error::DimensionMismatch {
                what: "timestamps",
                expected: actual.len(),
                got: timestamps.len(),
            });
        }
        let pairs: Vec<PredictionPair> = timestamps
            .iter()
            .zip(actual.iter().zip(predicted))
            .map(|(&timestamp, (&actual, &predicted))| PredictionPair {
                timestamp,
                actual,
                predicted,
            })
            .collect();
        let residuals = pairs.iter().map(|p| p.actual - p.predicted).collect();
        Ok(EvalReport {
            metrics,
            residuals,
            pairs,
        })
    }

    pub fn metrics_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.metrics)?;
        s.push('\n');
        Ok(s)
    }

    /// `timestamp,predicted,residual`
    pub fn residuals_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["timestamp", "predicted", "residual"])?;
        for (p, r) in self.pairs.iter().zip(&self.residuals) {
            w.write_record([
                p.timestamp.to_string(),
                p.predicted.to_string(),
                r.to_string(),
            ])?;
        }
        into_string(w)
    }

    /// `timestamp,actual,predicted`
    pub fn pred_vs_actual_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["timestamp", "actual", "predicted"])?;
        for p in &self.pairs {
            w.write_record([
                p.timestamp.to_string(),
                p.actual.to_string(),
                p.predicted.to_string(),
            ])?;
        }
        into_string(w)
    }
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub const METRICS_FILE: &str = "metrics.json";
pub const RESIDUALS_FILE: &str = "residuals.csv";
pub const PRED_VS_ACTUAL_FILE: &str = "pred_vs_actual.csv";

/// Writes `metrics.json`, `residuals.csv` and `pred_vs_actual.csv` into
/// `out_dir`, creating it if needed. All contents are rendered before the
/// first file is written.
pub fn export_report(report: &EvalReport, out_dir: &Path) -> Result<()> {
    if report.pairs.is_empty() {
        return Err(Error::Empty("report has no samples"));
    }
    let files = [
        (METRICS_FILE, report.metrics_json()?),
        (RESIDUALS_FILE, report.residuals_csv()?),
        (PRED_VS_ACTUAL_FILE, report.pred_vs_actual_csv()?),
    ];
    fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
    for (name, contents) in files {
        let path = out_dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::file(path, e))?;
    }
    Ok(())
}
