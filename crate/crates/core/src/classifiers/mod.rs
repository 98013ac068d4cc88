//! The four classifiers, hyperparameter search and learning curves.

pub mod boosting;
pub mod forest;
pub mod logistic;
pub mod naive_bayes;
pub mod search;
pub mod tree;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::preprocess::Dataset;
pub use boosting::{fit_boosting, fit_boosting_traced, BoostedModel, BoostingParams};
pub use forest::{fit_decision_tree, fit_forest, ForestModel, ForestParams, MaxFeatures};
pub use logistic::{fit_logistic, LogisticModel, LogisticParams};
pub use naive_bayes::{fit_naive_bayes, NaiveBayesModel, NaiveBayesParams};
pub use search::{grid_search_cv, learning_curve, CurvePoint, CvPoint, Lattice, SearchResult};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    NaiveBayes,
    RandomForest,
    BoostedTrees,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Logistic,
        ModelKind::NaiveBayes,
        ModelKind::RandomForest,
        ModelKind::BoostedTrees,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Logistic => "logistic",
            ModelKind::NaiveBayes => "naive_bayes",
            ModelKind::RandomForest => "random_forest",
            ModelKind::BoostedTrees => "boosted_trees",
        }
    }

    /// Short label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Logistic => "LR",
            ModelKind::NaiveBayes => "NB",
            ModelKind::RandomForest => "RF",
            ModelKind::BoostedTrees => "XGB",
        }
    }

    pub fn default_spec(self) -> ModelSpec {
        match self {
            ModelKind::Logistic => ModelSpec::Logistic(LogisticParams::default()),
            ModelKind::NaiveBayes => ModelSpec::NaiveBayes(NaiveBayesParams::default()),
            ModelKind::RandomForest => ModelSpec::RandomForest(ForestParams::default()),
            ModelKind::BoostedTrees => ModelSpec::BoostedTrees(BoostingParams::default()),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model kind {s:?}")))
    }
}

/// A classifier kind with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Logistic(LogisticParams),
    NaiveBayes(NaiveBayesParams),
    RandomForest(ForestParams),
    BoostedTrees(BoostingParams),
}

fn param_value(name: &str, v: f64) -> Result<Value> {
    if !v.is_finite() {
        return Err(Error::InvalidHyperparameter(format!("{name} = {v} is not finite")));
    }
    Ok(match name {
        "bootstrap" => Value::Bool(v != 0.0),
        "max_features" => {
            if v.fract() != 0.0 || v < 1.0 {
                return Err(Error::InvalidHyperparameter(format!("max_features = {v} must be a positive integer")));
            }
            serde_json::json!({ "count": v as u64 })
        }
        _ if v.fract() == 0.0 && v.abs() < 9.0e15 => {
            if v >= 0.0 {
                Value::from(v as u64)
            } else {
                Value::from(v as i64)
            }
        }
        _ => Value::from(v),
    })
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Logistic(_) => ModelKind::Logistic,
            ModelSpec::NaiveBayes(_) => ModelKind::NaiveBayes,
            ModelSpec::RandomForest(_) => ModelKind::RandomForest,
            ModelSpec::BoostedTrees(_) => ModelKind::BoostedTrees,
        }
    }

    /// Builds a spec from a name to value map over the kind's defaults.
    /// Unknown names are rejected.
    pub fn from_map(kind: ModelKind, params: &BTreeMap<String, f64>) -> Result<ModelSpec> {
        kind.default_spec().with_params(params)
    }

    /// Returns a copy with the named hyperparameters replaced.
    pub fn with_params(&self, params: &BTreeMap<String, f64>) -> Result<ModelSpec> {
        let mut obj: Map<String, Value> = match serde_json::to_value(self)? {
            Value::Object(m) => m,
            _ => unreachable!("specs serialize to objects"),
        };
        for (name, &v) in params {
            if name == "kind" || !obj.contains_key(name) {
                return Err(Error::InvalidHyperparameter(format!(
                    "{name:?} is not a hyperparameter of {}",
                    self.kind()
                )));
            }
            obj.insert(name.clone(), param_value(name, v)?);
        }
        let spec: ModelSpec = serde_json::from_value(Value::Object(obj))
            .map_err(|e| Error::InvalidHyperparameter(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Numeric hyperparameters as a name to value map.
    pub fn to_map(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        if let Ok(Value::Object(m)) = serde_json::to_value(self) {
            for (k, v) in m {
                match v {
                    Value::Number(n) => {
                        out.insert(k, n.as_f64().unwrap_or(f64::NAN));
                    }
                    Value::Bool(b) => {
                        out.insert(k, b as u8 as f64);
                    }
                    _ => {}
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Logistic(p) => p.validate(),
            ModelSpec::NaiveBayes(p) => {
                if p.var_floor > 0.0 && p.alpha >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidHyperparameter("var_floor must be > 0 and alpha >= 0".into()))
                }
            }
            ModelSpec::RandomForest(p) => p.validate(),
            ModelSpec::BoostedTrees(p) => p.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    Logistic(LogisticModel),
    NaiveBayes(NaiveBayesModel),
    RandomForest(ForestModel),
    BoostedTrees(BoostedModel),
}

/// A fitted classifier bound to the feature layout it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub version: u32,
    pub spec: ModelSpec,
    pub fingerprint: String,
    pub fitted: FittedModel,
}

pub fn train(spec: &ModelSpec, data: &Dataset) -> Result<TrainedModel> {
    spec.validate()?;
    let pos = data.positives();
    if pos == 0 || pos == data.n_rows() {
        return Err(Error::DegenerateTarget);
    }
    let fitted = match spec {
        ModelSpec::Logistic(p) => FittedModel::Logistic(fit_logistic(data, p)?),
        ModelSpec::NaiveBayes(p) => FittedModel::NaiveBayes(fit_naive_bayes(data, p)?),
        ModelSpec::RandomForest(p) => FittedModel::RandomForest(fit_forest(data, p)?),
        ModelSpec::BoostedTrees(p) => FittedModel::BoostedTrees(fit_boosting(data, p)?),
    };
    Ok(TrainedModel {
        version: MODEL_FORMAT_VERSION,
        spec: *spec,
        fingerprint: data.fingerprint(),
        fitted,
    })
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        self.spec.kind()
    }

    /// Probability of class 1 for one encoded row.
    pub fn score_row(&self, row: &[f32]) -> f64 {
        let s = match &self.fitted {
            FittedModel::Logistic(m) => m.score(row),
            FittedModel::NaiveBayes(m) => m.score(row),
            FittedModel::RandomForest(m) => m.score(row),
            FittedModel::BoostedTrees(m) => m.score(row),
        };
        s.clamp(0.0, 1.0)
    }

    pub fn predict_scores(&self, data: &Dataset) -> Result<Vec<f64>> {
        let found = data.fingerprint();
        if found != self.fingerprint {
            return Err(Error::FeatureSchemaMismatch {
                expected: self.fingerprint.clone(),
                found,
            });
        }
        Ok((0..data.n_rows())
            .into_par_iter()
            .map(|k| self.score_row(data.row(k)))
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<TrainedModel> {
        let m: TrainedModel = serde_json::from_str(s)?;
        if m.version != MODEL_FORMAT_VERSION {
            return Err(Error::Serde(format!(
                "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                m.version
            )));
        }
        Ok(m)
    }
}

/// Labels from scores: 1 when `score >= threshold`.
pub fn predict_labels(scores: &[f64], threshold: f64) -> Vec<u8> {
    scores.iter().map(|&s| (s >= threshold) as u8).collect()
}

/// Share of rows whose thresholded score equals the label.
pub fn accuracy(labels: &[u8], scores: &[f64], threshold: f64) -> f64 {
    let hits = labels
        .iter()
        .zip(scores)
        .filter(|(&y, &s)| (s >= threshold) as u8 == y)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let rows: Vec<Vec<f64>> = (0..120).map(|k| vec![(k % 10) as f64, (k % 3) as f64]).collect();
        let y: Vec<u8> = rows.iter().map(|r| (r[0] > 4.0) as u8).collect();
        Dataset::from_rows(&rows, &y).unwrap()
    }

    #[test]
    fn map_round_trip_and_unknown_names() {
        let mut m = BTreeMap::new();
        m.insert("max_depth".to_string(), 3.0);
        m.insert("learning_rate".to_string(), 0.05);
        let spec = ModelSpec::from_map(ModelKind::BoostedTrees, &m).unwrap();
        let back = spec.to_map();
        assert_eq!(back["max_depth"], 3.0);
        assert_eq!(back["learning_rate"], 0.05);
        m.insert("epochs".to_string(), 3.0);
        assert!(matches!(
            ModelSpec::from_map(ModelKind::BoostedTrees, &m),
            Err(Error::InvalidHyperparameter(_))
        ));
        let mut rf = BTreeMap::new();
        rf.insert("bootstrap".to_string(), 0.0);
        rf.insert("max_features".to_string(), 2.0);
        let spec = ModelSpec::from_map(ModelKind::RandomForest, &rf).unwrap();
        match spec {
            ModelSpec::RandomForest(p) => {
                assert!(!p.bootstrap);
                assert_eq!(p.max_features, MaxFeatures::Count(2));
            }
            _ => panic!(),
        }
        let mut bad = BTreeMap::new();
        bad.insert("max_depth".to_string(), 2.5);
        assert!(ModelSpec::from_map(ModelKind::BoostedTrees, &bad).is_err());
    }

    #[test]
    fn spec_json_is_tagged() {
        let s = serde_json::to_string(&ModelKind::Logistic.default_spec()).unwrap();
        assert!(s.contains("\"kind\":\"logistic\""));
        let back: ModelSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, ModelKind::Logistic.default_spec());
    }

    #[test]
    fn single_class_is_degenerate() {
        let ds = Dataset::from_rows(&[vec![1.0], vec![2.0]], &[1, 1]).unwrap();
        assert!(matches!(
            train(&ModelKind::Logistic.default_spec(), &ds),
            Err(Error::DegenerateTarget)
        ));
    }

    #[test]
    fn every_model_round_trips_and_checks_schema() {
        let ds = toy();
        for kind in ModelKind::ALL {
            let m = train(&kind.default_spec(), &ds).unwrap();
            let scores = m.predict_scores(&ds).unwrap();
            assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
            let back = TrainedModel::from_json(&m.to_json().unwrap()).unwrap();
            assert_eq!(back.predict_scores(&ds).unwrap(), scores, "{kind}");
            let mut other = ds.clone();
            other.columns[0] = "renamed".into();
            assert!(matches!(
                m.predict_scores(&other),
                Err(Error::FeatureSchemaMismatch { .. })
            ));
        }
    }

    #[test]
    fn duplicated_rows_score_identically() {
        let ds = toy();
        let dup = ds.subset(&[3, 3, 7, 7]);
        for kind in ModelKind::ALL {
            let m = train(&kind.default_spec(), &ds).unwrap();
            let s = m.predict_scores(&dup).unwrap();
            assert_eq!(s[0], s[1]);
            assert_eq!(s[2], s[3]);
        }
    }
}
