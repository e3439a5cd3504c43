//! Train and evaluate on a chronologically split feature matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval_report::{EvalReport, Metrics};
use crate::features::{fit_scaler, transform, FeatureMatrix};
use crate::gbtree::{self, GbtModel, Hyperparams};
use crate::market_data::{chronological_split, SplitSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: GbtModel,
    pub split: SplitSpec,
    /// In-sample metrics on the training rows.
    pub train_metrics: Metrics,
}

/// Summary written next to the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub m: usize,
    pub m_train: usize,
    pub m_test: usize,
    pub horizon: usize,
    pub hyperparams: Hyperparams,
    pub train_metrics: Metrics,
}

impl TrainOutcome {
    pub fn report(&self) -> TrainReport {
        TrainReport {
            m: self.split.m,
            m_train: self.split.m_train,
            m_test: self.split.m_test,
            horizon: self.model.horizon,
            hyperparams: self.model.hyperparams,
            train_metrics: self.train_metrics,
        }
    }
}

/// Fits the scaler and the ensemble on the first `train_fraction` of rows.
pub fn train_model(
    features: &FeatureMatrix,
    hp: &Hyperparams,
    train_fraction: f64,
) -> Result<TrainOutcome> {
    hp.validate()?;
    let split = chronological_split(features.len(), train_fraction)?;
    let train = features.slice(split.train_range());
    let scaler = fit_scaler(&train.rows)?;
    let x = transform(&train.rows, &scaler)?;
    let ensemble = gbtree::fit(&x, &train.targets, hp)?;
    let fitted = gbtree::predict(&ensemble, &x)?;
    let train_metrics = Metrics::compute(&train.targets, &fitted)?;
    let model = GbtModel::new(
        ensemble,
        *hp,
        scaler,
        features.feature_names.clone(),
        features.horizon,
        train_fraction,
    );
    Ok(TrainOutcome {
        model,
        split,
        train_metrics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RowSelection {
    #[default]
    Test,
    Train,
    All,
}

impl std::str::FromStr for RowSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test" => Ok(RowSelection::Test),
            "train" => Ok(RowSelection::Train),
            "all" => Ok(RowSelection::All),
            other => Err(Error::invalid(format!(
                "row selection must be test, train or all, got {other:?}"
            ))),
        }
    }
}

/// Scores the selected rows, using the split recorded in the model.
pub fn evaluate_rows(
    model: &GbtModel,
    features: &FeatureMatrix,
    rows: RowSelection,
) -> Result<EvalReport> {
    check_compatible(model, features)?;
    let split = chronological_split(features.len(), model.train_fraction)?;
    let range = match rows {
        RowSelection::Test => split.test_range(),
        RowSelection::Train => split.train_range(),
        RowSelection::All => 0..split.m,
    };
    let part = features.slice(range);
    let predicted = model.predict_raw(&part.rows)?;
    EvalReport::new(&part.targets, &predicted, &part.timestamps)
}

/// Errors if the model was trained on different columns or another horizon.
pub fn check_compatible(model: &GbtModel, features: &FeatureMatrix) -> Result<()> {
    if model.feature_names != features.feature_names {
        return Err(Error::invalid(
            "feature columns differ from those the model was trained on",
        ));
    }
    if model.horizon != features.horizon {
        return Err(Error::invalid(format!(
            "model was trained for horizon {} but the features use {}",
            model.horizon, features.horizon
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::assemble;
    use crate::synthetic::{generate, SyntheticConfig};

    fn small_features(horizon: usize) -> FeatureMatrix {
        let s = generate(&SyntheticConfig {
            n_candles: 400,
            ..SyntheticConfig::default()
        })
        .unwrap();
        assemble(&s, horizon).unwrap()
    }

    #[test]
    fn train_then_evaluate() {
        let f = small_features(1);
        let hp = Hyperparams {
            n_trees: 20,
            ..Hyperparams::paper_best()
        };
        let out = train_model(&f, &hp, 0.8).unwrap();
        assert_eq!(out.split.m, f.len());
        assert_eq!(out.split.m_train + out.split.m_test, f.len());
        let test = evaluate_rows(&out.model, &f, RowSelection::Test).unwrap();
        assert_eq!(test.metrics.n, out.split.m_test);
        let train = evaluate_rows(&out.model, &f, RowSelection::Train).unwrap();
        assert!((train.metrics.rmse - out.train_metrics.rmse).abs() < 1e-9);
        let all = evaluate_rows(&out.model, &f, RowSelection::All).unwrap();
        assert_eq!(all.metrics.n, f.len());
    }

    #[test]
    fn horizon_mismatch_is_rejected() {
        let f = small_features(1);
        let hp = Hyperparams {
            n_trees: 2,
            ..Hyperparams::paper_best()
        };
        let out = train_model(&f, &hp, 0.8).unwrap();
        let other = small_features(0);
        assert!(evaluate_rows(&out.model, &other, RowSelection::Test).is_err());
        assert!("validation".parse::<RowSelection>().is_err());
    }
}
