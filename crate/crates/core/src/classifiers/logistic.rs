//! L2-regularized logistic regression trained by mini-batch gradient descent.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::Dataset;
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticParams {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial step; epoch t (from 1) uses `learning_rate / sqrt(t)`.
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            epochs: 50,
            batch_size: 512,
            learning_rate: 0.1,
            l2: 1e-4,
            seed: 7,
        }
    }
}

impl LogisticParams {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidHyperparameter("epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidHyperparameter("learning_rate must be > 0".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::InvalidHyperparameter("l2 must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LogisticModel {
    pub fn zeros(d: usize) -> LogisticModel {
        LogisticModel {
            weights: vec![0.0; d],
            bias: 0.0,
        }
    }

    #[inline]
    pub fn margin(&self, row: &[f32]) -> f64 {
        self.bias + self.weights.iter().zip(row).map(|(w, &x)| w * x as f64).sum::<f64>()
    }

    pub fn score(&self, row: &[f32]) -> f64 {
        sigmoid(self.margin(row))
    }
}

/// Mean log-loss over `rows` plus `l2 / 2 * |w|^2` (bias unpenalized).
pub fn loss(model: &LogisticModel, data: &Dataset, l2: f64) -> f64 {
    let n = data.n_rows().max(1) as f64;
    let ll: f64 = (0..data.n_rows())
        .map(|k| {
            let z = model.margin(data.row(k));
            softplus(z) - data.y[k] as f64 * z
        })
        .sum();
    ll / n + 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>()
}

/// Gradient of [`loss`]: (d/dw, d/db).
pub fn gradient(model: &LogisticModel, data: &Dataset, l2: f64) -> (Vec<f64>, f64) {
    let idx: Vec<usize> = (0..data.n_rows()).collect();
    batch_gradient(model, data, &idx, l2)
}

fn batch_gradient(model: &LogisticModel, data: &Dataset, idx: &[usize], l2: f64) -> (Vec<f64>, f64) {
    let mut gw = vec![0.0; model.weights.len()];
    let mut gb = 0.0;
    for &k in idx {
        let row = data.row(k);
        let r = sigmoid(model.margin(row)) - data.y[k] as f64;
        gb += r;
        for (g, &x) in gw.iter_mut().zip(row) {
            *g += r * x as f64;
        }
    }
    let n = idx.len().max(1) as f64;
    for (g, w) in gw.iter_mut().zip(&model.weights) {
        *g = *g / n + l2 * w;
    }
    (gw, gb / n)
}

pub fn fit_logistic(data: &Dataset, params: &LogisticParams) -> Result<LogisticModel> {
    params.validate()?;
    let mut model = LogisticModel::zeros(data.n_cols());
    let mut order: Vec<usize> = (0..data.n_rows()).collect();
    let mut rng = stream(params.seed, &[0x1061]);
    for epoch in 1..=params.epochs {
        order.shuffle(&mut rng);
        let step = params.learning_rate / (epoch as f64).sqrt();
        for batch in order.chunks(params.batch_size) {
            let (gw, gb) = batch_gradient(&model, data, batch, params.l2);
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                *w -= step * g;
            }
            model.bias -= step * gb;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn separable_toy_is_fit_exactly() {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for k in 0..40 {
            let t = k as f64 / 10.0;
            rows.push(vec![t, 1.0 + t]);
            y.push(0);
            rows.push(vec![t + 0.5, -1.0 + t]);
            y.push(1);
        }
        let ds = Dataset::from_rows(&rows, &y).unwrap();
        let params = LogisticParams {
            batch_size: 8,
            learning_rate: 1.0,
            ..Default::default()
        };
        let m = fit_logistic(&ds, &params).unwrap();
        let correct = (0..ds.n_rows())
            .filter(|&k| (m.score(ds.row(k)) >= 0.5) as u8 == y[k])
            .count();
        assert_eq!(correct, ds.n_rows());
    }

    #[test]
    fn zero_weights_score_half() {
        assert_eq!(LogisticModel::zeros(3).score(&[1.0, -2.0, 5.0]), 0.5);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = stream(3, &[]);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let y: Vec<u8> = rows.iter().map(|r| (r[0] - r[2] > 0.1) as u8).collect();
        let ds = Dataset::from_rows(&rows, &y).unwrap();
        let m = LogisticModel {
            weights: vec![0.3, -0.2, 0.5, 0.1],
            bias: -0.4,
        };
        let (gw, gb) = gradient(&m, &ds, 0.01);
        let h = 1e-6;
        for (j, &g) in gw.iter().enumerate() {
            let mut p = m.clone();
            p.weights[j] += h;
            let mut q = m.clone();
            q.weights[j] -= h;
            let fd = (loss(&p, &ds, 0.01) - loss(&q, &ds, 0.01)) / (2.0 * h);
            assert!((fd - g).abs() < 1e-6, "{j}: {fd} vs {g}");
        }
        let mut p = m.clone();
        p.bias += h;
        let mut q = m.clone();
        q.bias -= h;
        let fd = (loss(&p, &ds, 0.01) - loss(&q, &ds, 0.01)) / (2.0 * h);
        assert!((fd - gb).abs() < 1e-6);
    }

    #[test]
    fn sigmoid_and_softplus_are_stable() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((softplus(1000.0) - 1000.0).abs() < 1e-9);
        assert!(softplus(-1000.0) >= 0.0);
    }
}
