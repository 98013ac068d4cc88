//! Naive Bayes with Gaussian likelihoods on continuous columns and
//! Bernoulli likelihoods on indicator columns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{ColumnKind, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NaiveBayesParams {
    pub var_floor: f64,
    /// Laplace pseudo-count for Bernoulli columns.
    pub alpha: f64,
}

impl Default for NaiveBayesParams {
    fn default() -> Self {
        NaiveBayesParams {
            var_floor: 1e-9,
            alpha: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureStats {
    Gaussian { mean: [f64; 2], var: [f64; 2] },
    /// Probability of a 1 per class.
    Bernoulli { p: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    pub log_prior: [f64; 2],
    pub features: Vec<FeatureStats>,
}

const LN_2PI: f64 = 1.837_877_066_409_345_3;

impl NaiveBayesModel {
    /// Log-likelihood of value `x` of feature `f` under class `c`.
    pub fn feature_log_likelihood(&self, f: usize, c: usize, x: f64) -> f64 {
        match &self.features[f] {
            FeatureStats::Gaussian { mean, var } => {
                let d = x - mean[c];
                -0.5 * (LN_2PI + var[c].ln() + d * d / var[c])
            }
            FeatureStats::Bernoulli { p } => {
                if x >= 0.5 {
                    p[c].ln()
                } else {
                    (1.0 - p[c]).ln()
                }
            }
        }
    }

    /// Unnormalized log-posterior of both classes.
    pub fn log_joint(&self, row: &[f32]) -> [f64; 2] {
        let mut out = self.log_prior;
        for (f, &x) in row.iter().enumerate() {
            for (c, o) in out.iter_mut().enumerate() {
                *o += self.feature_log_likelihood(f, c, x as f64);
            }
        }
        out
    }

    pub fn score(&self, row: &[f32]) -> f64 {
        let [l0, l1] = self.log_joint(row);
        super::logistic::sigmoid(l1 - l0)
    }
}

pub fn fit_naive_bayes(data: &Dataset, params: &NaiveBayesParams) -> Result<NaiveBayesModel> {
    if params.var_floor.is_nan() || params.var_floor <= 0.0 || params.alpha.is_nan() || params.alpha < 0.0 {
        return Err(Error::InvalidHyperparameter("var_floor must be > 0 and alpha >= 0".into()));
    }
    let n = data.n_rows();
    let d = data.n_cols();
    let counts = [(n - data.positives()) as f64, data.positives() as f64];
    let mut sum = vec![[0.0f64; 2]; d];
    for k in 0..n {
        let c = data.y[k] as usize;
        for (s, &x) in sum.iter_mut().zip(data.row(k)) {
            s[c] += x as f64;
        }
    }
    let mean: Vec<[f64; 2]> = sum.iter().map(|s| [s[0] / counts[0], s[1] / counts[1]]).collect();
    let mut sq = vec![[0.0f64; 2]; d];
    for k in 0..n {
        let c = data.y[k] as usize;
        for ((s, &x), m) in sq.iter_mut().zip(data.row(k)).zip(&mean) {
            let dx = x as f64 - m[c];
            s[c] += dx * dx;
        }
    }
    let features = (0..d)
        .map(|f| match data.kinds[f] {
            ColumnKind::Continuous => FeatureStats::Gaussian {
                mean: mean[f],
                var: [
                    (sq[f][0] / counts[0]).max(params.var_floor),
                    (sq[f][1] / counts[1]).max(params.var_floor),
                ],
            },
            ColumnKind::Binary => FeatureStats::Bernoulli {
                p: [
                    (sum[f][0] + params.alpha) / (counts[0] + 2.0 * params.alpha),
                    (sum[f][1] + params.alpha) / (counts[1] + 2.0 * params.alpha),
                ],
            },
        })
        .collect();
    Ok(NaiveBayesModel {
        log_prior: [(counts[0] / n as f64).ln(), (counts[1] / n as f64).ln()],
        features,
    })
}
