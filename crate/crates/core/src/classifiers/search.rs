//! Exhaustive lattice search with stratified k-fold cross-validation, and
//! learning curves.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{accuracy, train, ModelSpec};
use crate::error::{Error, Result};
use crate::preprocess::Dataset;
use crate::rng::stream;

/// Hyperparameter axes; the lattice is their cartesian product.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lattice {
    pub axes: BTreeMap<String, Vec<f64>>,
}

/// Axes compared first when breaking ties, smaller values preferred.
const TIE_ORDER: [&str; 4] = ["max_depth", "n_estimators", "n_trees", "learning_rate"];

impl Lattice {
    pub fn new() -> Lattice {
        Lattice::default()
    }

    pub fn axis(mut self, name: &str, values: impl IntoIterator<Item = f64>) -> Lattice {
        self.axes.insert(name.to_string(), values.into_iter().collect());
        self
    }

    /// Depth 2..=9, estimators 60..=180 step 40, rates {0.05, 0.01, 0.1}.
    pub fn reference_coarse() -> Lattice {
        Lattice::new()
            .axis("max_depth", (2..10).map(f64::from))
            .axis("n_estimators", (60..220).step_by(40).map(f64::from))
            .axis("learning_rate", [0.05, 0.01, 0.1])
    }

    /// Estimators 10..=50 step 10 at a fixed depth and rate.
    pub fn reference_refinement(max_depth: usize, learning_rate: f64) -> Lattice {
        Lattice::new()
            .axis("max_depth", [max_depth as f64])
            .axis("n_estimators", (10..=50).step_by(10).map(f64::from))
            .axis("learning_rate", [learning_rate])
    }

    pub fn len(&self) -> usize {
        if self.axes.is_empty() {
            0
        } else {
            self.axes.values().map(Vec::len).product()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All points, last axis varying fastest.
    pub fn points(&self) -> Vec<BTreeMap<String, f64>> {
        let mut out = vec![BTreeMap::new()];
        if self.is_empty() {
            return Vec::new();
        }
        for (name, values) in &self.axes {
            out = out
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.insert(name.clone(), v);
                        q
                    })
                })
                .collect();
        }
        out
    }
}

fn tie_key(p: &BTreeMap<String, f64>) -> Vec<f64> {
    let mut key: Vec<f64> = TIE_ORDER.iter().filter_map(|n| p.get(*n).copied()).collect();
    key.extend(p.iter().filter(|(n, _)| !TIE_ORDER.contains(&n.as_str())).map(|(_, &v)| v));
    key
}

fn tie_cmp(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> Ordering {
    let (ka, kb) = (tie_key(a), tie_key(b));
    for (x, y) in ka.iter().zip(&kb) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub params: BTreeMap<String, f64>,
    pub fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: ModelSpec,
    pub best_params: BTreeMap<String, f64>,
    pub best_score: f64,
    pub table: Vec<CvPoint>,
}

/// Fold id per row; each class is shuffled and dealt round-robin.
pub fn stratified_folds(y: &[u8], folds: usize, seed: u64) -> Vec<usize> {
    let mut out = vec![0; y.len()];
    let mut rng = stream(seed, &[0xf01d]);
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&k| y[k] == class).collect();
        idx.shuffle(&mut rng);
        for (j, k) in idx.into_iter().enumerate() {
            out[k] = j % folds;
        }
    }
    out
}

/// Scores every lattice point by mean accuracy over `folds` stratified
/// folds. Ties go to the point with smaller (depth, estimators, rate).
pub fn grid_search_cv(
    base: &ModelSpec,
    train_set: &Dataset,
    lattice: &Lattice,
    folds: usize,
    seed: u64,
) -> Result<SearchResult> {
    if folds < 2 {
        return Err(Error::InvalidConfig(format!("cross-validation needs >= 2 folds, got {folds}")));
    }
    if lattice.is_empty() {
        return Err(Error::InvalidConfig("hyperparameter lattice is empty".into()));
    }
    let points = lattice.points();
    let specs: Vec<ModelSpec> = points.iter().map(|p| base.with_params(p)).collect::<Result<_>>()?;

    let fold_of = stratified_folds(&train_set.y, folds, seed);
    let parts: Vec<(Dataset, Dataset)> = (0..folds)
        .map(|f| {
            let (fit, hold): (Vec<usize>, Vec<usize>) = (0..train_set.n_rows()).partition(|&k| fold_of[k] != f);
            (train_set.subset(&fit), train_set.subset(&hold))
        })
        .collect();

    let jobs: Vec<(usize, usize)> = (0..specs.len()).flat_map(|p| (0..folds).map(move |f| (p, f))).collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(p, f)| {
            let (fit, hold) = &parts[f];
            let m = train(&specs[p], fit)?;
            Ok(accuracy(&hold.y, &m.predict_scores(hold)?, 0.5))
        })
        .collect::<Result<_>>()?;

    let table: Vec<CvPoint> = points
        .into_iter()
        .enumerate()
        .map(|(p, params)| {
            let fold_accuracy = scores[p * folds..(p + 1) * folds].to_vec();
            let mean_accuracy = fold_accuracy.iter().sum::<f64>() / folds as f64;
            CvPoint {
                params,
                fold_accuracy,
                mean_accuracy,
            }
        })
        .collect();
    let best = (0..table.len())
        .reduce(|b, k| {
            let (x, y) = (&table[k], &table[b]);
            match x.mean_accuracy.total_cmp(&y.mean_accuracy) {
                Ordering::Greater => k,
                Ordering::Equal if tie_cmp(&x.params, &y.params) == Ordering::Less => k,
                _ => b,
            }
        })
        .expect("lattice nonempty");
    Ok(SearchResult {
        best: specs[best],
        best_params: table[best].params.clone(),
        best_score: table[best].mean_accuracy,
        table,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub size: usize,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
}

/// Class-stratified subsample of `size` rows in original order; the full
/// set when `size` equals its length.
pub fn stratified_subsample(y: &[u8], size: usize, seed: u64) -> Vec<usize> {
    if size >= y.len() {
        return (0..y.len()).collect();
    }
    let mut rng = stream(seed, &[0x1c, size as u64]);
    let pos: Vec<usize> = (0..y.len()).filter(|&k| y[k] == 1).collect();
    let neg: Vec<usize> = (0..y.len()).filter(|&k| y[k] == 0).collect();
    let n_pos = ((size as f64 * pos.len() as f64 / y.len() as f64).round() as usize)
        .clamp(1.min(pos.len()), pos.len().min(size));
    let n_neg = (size - n_pos).min(neg.len());
    let mut out: Vec<usize> = pos.choose_multiple(&mut rng, n_pos).copied().collect();
    out.extend(neg.choose_multiple(&mut rng, n_neg).copied());
    out.sort_unstable();
    out
}

/// Train and validation accuracy of `spec` fitted on growing subsamples.
pub fn learning_curve(
    spec: &ModelSpec,
    train_set: &Dataset,
    validation: &Dataset,
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    if let Some(&s) = sizes.iter().find(|&&s| s > train_set.n_rows() || s == 0) {
        return Err(Error::InvalidConfig(format!(
            "learning-curve size {s} outside 1..={}",
            train_set.n_rows()
        )));
    }
    sizes
        .iter()
        .map(|&size| {
            let idx = stratified_subsample(&train_set.y, size, seed);
            let sub = if idx.len() == train_set.n_rows() {
                None
            } else {
                Some(train_set.subset(&idx))
            };
            let fit = sub.as_ref().unwrap_or(train_set);
            let m = train(spec, fit)?;
            Ok(CurvePoint {
                size,
                train_accuracy: accuracy(&fit.y, &m.predict_scores(fit)?, 0.5),
                validation_accuracy: accuracy(&validation.y, &m.predict_scores(validation)?, 0.5),
            })
        })
        .collect()
}
