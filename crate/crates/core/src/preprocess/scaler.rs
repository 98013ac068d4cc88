use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named `f64` columns, column-major.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NumericFrame {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl NumericFrame {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> NumericFrame {
        assert_eq!(names.len(), columns.len());
        NumericFrame { names, columns }
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|k| self.columns[k].as_slice())
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }
}

/// Per-column standardization with population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardScaler {
    pub columns: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn column_moments(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn fit_standard_scaler(train: &NumericFrame, columns: &[String]) -> Result<StandardScaler> {
    let mut mean = Vec::with_capacity(columns.len());
    let mut std = Vec::with_capacity(columns.len());
    for c in columns {
        let (m, s) = column_moments(train.column(c)?);
        mean.push(m);
        std.push(s);
    }
    Ok(StandardScaler {
        columns: columns.to_vec(),
        mean,
        std,
    })
}

impl StandardScaler {
    /// Scales one value of fitted column `k`; zero-variance columns map to 0.
    #[inline]
    pub fn scale(&self, k: usize, x: f64) -> f64 {
        if self.std[k] > 0.0 {
            (x - self.mean[k]) / self.std[k]
        } else {
            0.0
        }
    }

    /// Returns `frame` with every fitted column scaled; other columns pass through.
    pub fn apply(&self, frame: &NumericFrame) -> Result<NumericFrame> {
        let mut out = frame.clone();
        for (k, c) in self.columns.iter().enumerate() {
            let pos = frame
                .names
                .iter()
                .position(|n| n == c)
                .ok_or_else(|| Error::UnknownColumn(c.clone()))?;
            for v in &mut out.columns[pos] {
                *v = self.scale(k, *v);
            }
        }
        Ok(out)
    }
}
