//! Gradient-boosted regression trees on logistic loss with second-order
//! split gain and leaf weights.

use serde::{Deserialize, Serialize};

use crate::classifiers::logistic::{sigmoid, softplus};
use crate::classifiers::tree::{fit_tree, Criterion, Tree, TreeParams};
use crate::error::{Error, Result};
use crate::preprocess::Dataset;
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostingParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub min_child_weight: f64,
}

impl Default for BoostingParams {
    fn default() -> Self {
        BoostingParams {
            n_estimators: 100,
            max_depth: 6,
            learning_rate: 0.1,
            lambda: 1.0,
            min_child_weight: 1.0,
        }
    }
}

impl BoostingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidHyperparameter("learning_rate must be in (0, 1]".into()));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 || self.min_child_weight.is_nan() || self.min_child_weight < 0.0 {
            return Err(Error::InvalidHyperparameter("lambda and min_child_weight must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub base_margin: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl BoostedModel {
    pub fn margin(&self, row: &[f32]) -> f64 {
        self.base_margin + self.learning_rate * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    pub fn score(&self, row: &[f32]) -> f64 {
        sigmoid(self.margin(row))
    }
}

/// Fitted model plus mean training log-loss before the first tree and
/// after each tree.
pub struct BoostingTrace {
    pub model: BoostedModel,
    pub train_loss: Vec<f64>,
}

fn mean_log_loss(margins: &[f64], y: &[u8]) -> f64 {
    margins
        .iter()
        .zip(y)
        .map(|(&z, &t)| softplus(z) - t as f64 * z)
        .sum::<f64>()
        / margins.len().max(1) as f64
}

pub fn fit_boosting(data: &Dataset, params: &BoostingParams) -> Result<BoostedModel> {
    Ok(fit_boosting_traced(data, params)?.model)
}

pub fn fit_boosting_traced(data: &Dataset, params: &BoostingParams) -> Result<BoostingTrace> {
    params.validate()?;
    let n = data.n_rows();
    let p = data.base_rate().clamp(1e-12, 1.0 - 1e-12);
    let base_margin = (p / (1.0 - p)).ln();
    let mut margins = vec![base_margin; n];
    let mut train_loss = vec![mean_log_loss(&margins, &data.y)];
    let mut trees = Vec::with_capacity(params.n_estimators);
    if params.n_estimators > 0 {
        let ranked = data.ranked();
        let tp = TreeParams {
            max_depth: params.max_depth,
            min_child: params.min_child_weight,
            max_features: None,
            min_gain: 1e-12,
        };
        let criterion = Criterion::Newton { lambda: params.lambda };
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n];
        // Only used for feature sampling, which boosting does not do.
        let mut rng = stream(0, &[0xb005]);
        for _ in 0..params.n_estimators {
            for k in 0..n {
                let q = sigmoid(margins[k]);
                g[k] = q - data.y[k] as f64;
                h[k] = q * (1.0 - q);
            }
            let fitted = fit_tree(&ranked, (0..n as u32).collect(), &g, &h, criterion, &tp, &mut rng);
            for (r, v) in fitted.assignments {
                margins[r as usize] += params.learning_rate * v;
            }
            trees.push(fitted.tree);
            train_loss.push(mean_log_loss(&margins, &data.y));
        }
    }
    Ok(BoostingTrace {
        model: BoostedModel {
            base_margin,
            learning_rate: params.learning_rate,
            trees,
        },
        train_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let rows: Vec<Vec<f64>> = (0..300)
            .map(|k| vec![(k % 11) as f64, ((k * 7) % 5) as f64])
            .collect();
        let y: Vec<u8> = rows
            .iter()
            .enumerate()
            .map(|(k, r)| ((r[0] * 0.5 + r[1] > 4.0) ^ (k % 17 == 0)) as u8)
            .collect();
        Dataset::from_rows(&rows, &y).unwrap()
    }

    #[test]
    fn empty_ensemble_scores_base_rate() {
        let ds = toy();
        let m = fit_boosting(
            &ds,
            &BoostingParams {
                n_estimators: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((m.score(ds.row(0)) - ds.base_rate()).abs() < 1e-12);
    }

    #[test]
    fn single_stump_gives_two_scores() {
        let ds = toy();
        let m = fit_boosting(
            &ds,
            &BoostingParams {
                n_estimators: 1,
                max_depth: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let mut scores: Vec<f64> = (0..ds.n_rows()).map(|k| m.score(ds.row(k))).collect();
        scores.sort_by(f64::total_cmp);
        scores.dedup();
        assert_eq!(scores.len(), 2);
    }

    #[test]
    fn training_loss_never_increases() {
        let ds = toy();
        let trace = fit_boosting_traced(
            &ds,
            &BoostingParams {
                n_estimators: 30,
                max_depth: 3,
                learning_rate: 0.3,
                ..Default::default()
            },
        )
        .unwrap();
        for w in trace.train_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{w:?}");
        }
    }

    #[test]
    fn leaf_updates_match_prediction() {
        let ds = toy();
        let m = fit_boosting(
            &ds,
            &BoostingParams {
                n_estimators: 3,
                max_depth: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let trace = fit_boosting_traced(
            &ds,
            &BoostingParams {
                n_estimators: 3,
                max_depth: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let margins: Vec<f64> = (0..ds.n_rows()).map(|k| m.margin(ds.row(k))).collect();
        assert!((mean_log_loss(&margins, &ds.y) - trace.train_loss[3]).abs() < 1e-12);
    }
}
