//! Next-candle close forecasting from 15-minute klines: candle ingestion,
//! technical-indicator features, a gradient-boosted tree regressor, grid
//! search over time-ordered folds and regression metrics.

pub mod error;
pub mod eval_report;
pub mod features;
pub mod gbtree;
pub mod indicators;
pub mod market_data;
pub mod matrix;
pub mod pipeline;
pub mod synthetic;
pub mod tuning;

pub use error::{Error, ErrorKind, Result};
pub use eval_report::{EvalReport, Metrics};
pub use features::{FeatureMatrix, ScalerParams, FEATURE_NAMES, N_FEATURES};
pub use gbtree::{GbtModel, Hyperparams};
pub use market_data::{Candle, CandleSeries, GapPolicy, IngestOptions};
pub use matrix::Matrix;
