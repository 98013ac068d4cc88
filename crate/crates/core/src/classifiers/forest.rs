//! Random forest: Gini trees on bootstrap samples with per-node feature
//! subsampling; the score is the mean of the trees' leaf probabilities.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::tree::{fit_tree, Criterion, Tree, TreeParams};
use crate::error::{Error, Result};
use crate::preprocess::Dataset;
use crate::rng::stream;

/// Features tried at each node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> Option<usize> {
        match self {
            MaxFeatures::All => None,
            MaxFeatures::Sqrt => Some(((n_features as f64).sqrt().round() as usize).max(1)),
            MaxFeatures::Count(k) => Some(k.max(1)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 60,
            max_depth: 24,
            min_leaf: 1,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            seed: 7,
        }
    }
}

impl ForestParams {
    /// A single unbagged tree over all features.
    pub fn single_tree(max_depth: usize, min_leaf: usize) -> ForestParams {
        ForestParams {
            n_trees: 1,
            max_depth,
            min_leaf,
            max_features: MaxFeatures::All,
            bootstrap: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.min_leaf == 0 {
            return Err(Error::InvalidHyperparameter("n_trees and min_leaf must be >= 1".into()));
        }
        Ok(())
    }

    fn tree_params(&self, n_features: usize) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_child: self.min_leaf as f64,
            max_features: self.max_features.resolve(n_features),
            min_gain: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
}

impl ForestModel {
    pub fn score(&self, row: &[f32]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Plain CART classification tree on all rows and features.
pub fn fit_decision_tree(data: &Dataset, max_depth: usize, min_leaf: usize) -> Result<Tree> {
    if min_leaf == 0 {
        return Err(Error::InvalidHyperparameter("min_leaf must be >= 1".into()));
    }
    let params = TreeParams {
        max_depth,
        min_child: min_leaf as f64,
        max_features: None,
        min_gain: 1e-12,
    };
    let a: Vec<f64> = data.y.iter().map(|&y| y as f64).collect();
    let b = vec![1.0; data.n_rows()];
    let rows = (0..data.n_rows() as u32).collect();
    let mut rng = stream(0, &[]);
    Ok(fit_tree(&data.ranked(), rows, &a, &b, Criterion::Gini, &params, &mut rng).tree)
}

pub fn fit_forest(data: &Dataset, params: &ForestParams) -> Result<ForestModel> {
    params.validate()?;
    let ranked = data.ranked();
    let n = data.n_rows();
    let tp = params.tree_params(data.n_cols());
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(params.seed, &[0xf0e5, t as u64]);
            let mut w = vec![0u32; n];
            if params.bootstrap {
                for _ in 0..n {
                    w[rng.random_range(0..n)] += 1;
                }
            } else {
                w.fill(1);
            }
            let rows: Vec<u32> = (0..n as u32).filter(|&r| w[r as usize] > 0).collect();
            let b: Vec<f64> = w.iter().map(|&c| c as f64).collect();
            let a: Vec<f64> = b.iter().zip(&data.y).map(|(c, &y)| c * y as f64).collect();
            fit_tree(&ranked, rows, &a, &b, Criterion::Gini, &tp, &mut rng).tree
        })
        .collect();
    Ok(ForestModel { trees })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|k| vec![(k % 13) as f64, (k % 7) as f64, ((k * 31) % 17) as f64])
            .collect();
        let y: Vec<u8> = rows.iter().map(|r| (r[0] + r[1] > 9.0) as u8).collect();
        Dataset::from_rows(&rows, &y).unwrap()
    }

    #[test]
    fn single_tree_forest_is_the_decision_tree() {
        let ds = toy();
        let tree = fit_decision_tree(&ds, 6, 1).unwrap();
        let forest = fit_forest(
            &ds,
            &ForestParams {
                seed: 99,
                ..ForestParams::single_tree(6, 1)
            },
        )
        .unwrap();
        assert_eq!(forest.trees[0], tree);
    }

    #[test]
    fn forest_fits_toy_rule() {
        let ds = toy();
        let f = fit_forest(&ds, &ForestParams::default()).unwrap();
        let acc = (0..ds.n_rows())
            .filter(|&k| (f.score(ds.row(k)) >= 0.5) as u8 == ds.y[k])
            .count();
        assert!(acc >= 195, "{acc}");
    }

    #[test]
    fn seeded_forest_is_deterministic() {
        let ds = toy();
        let p = ForestParams {
            n_trees: 5,
            ..Default::default()
        };
        assert_eq!(fit_forest(&ds, &p).unwrap(), fit_forest(&ds, &p).unwrap());
    }
}
