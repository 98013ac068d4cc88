use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::classifiers::tree::RankedColumns;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    /// 0/1 indicator or missing flag.
    Binary,
}

/// Encoded, model-ready matrix (row-major `f32`) with a binary target.
/// Do not mutate `x` or `y` after calling [`Dataset::ranked`].
#[derive(Default)]
pub struct Dataset {
    pub columns: Vec<String>,
    pub kinds: Vec<ColumnKind>,
    pub x: Vec<f32>,
    pub y: Vec<u8>,
    ranked: OnceLock<Arc<RankedColumns>>,
}

impl Clone for Dataset {
    /// Clones the data; the rank cache is rebuilt lazily on the copy.
    fn clone(&self) -> Self {
        Dataset {
            columns: self.columns.clone(),
            kinds: self.kinds.clone(),
            x: self.x.clone(),
            y: self.y.clone(),
            ranked: OnceLock::new(),
        }
    }
}

impl fmt::Debug for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dataset")
            .field("rows", &self.n_rows())
            .field("cols", &self.n_cols())
            .field("positives", &self.positives())
            .finish()
    }
}

impl Dataset {
    pub fn new(columns: Vec<String>, kinds: Vec<ColumnKind>, x: Vec<f32>, y: Vec<u8>) -> Result<Dataset> {
        if columns.len() != kinds.len() {
            return Err(Error::Validation("column names and kinds differ in length".into()));
        }
        if columns.is_empty() && !y.is_empty() {
            return Err(Error::Validation("rows without columns".into()));
        }
        if x.len() != y.len() * columns.len() {
            return Err(Error::Validation(format!(
                "matrix has {} values, expected {} rows x {} columns",
                x.len(),
                y.len(),
                columns.len()
            )));
        }
        if y.iter().any(|&v| v > 1) {
            return Err(Error::Validation("target must be 0 or 1".into()));
        }
        Ok(Dataset {
            columns,
            kinds,
            x,
            y,
            ranked: OnceLock::new(),
        })
    }

    /// Builds a dataset of continuous columns named `x0..`.
    pub fn from_rows(rows: &[Vec<f64>], y: &[u8]) -> Result<Dataset> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Validation("ragged rows".into()));
        }
        Dataset::new(
            (0..d).map(|k| format!("x{k}")).collect(),
            vec![ColumnKind::Continuous; d],
            rows.iter().flatten().map(|&v| v as f32).collect(),
            y.to_vec(),
        )
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, k: usize) -> &[f32] {
        let d = self.n_cols();
        &self.x[k * d..(k + 1) * d]
    }

    pub fn value(&self, row: usize, col: usize) -> f32 {
        self.x[row * self.n_cols() + col]
    }

    pub fn positives(&self) -> usize {
        self.y.iter().filter(|&&v| v == 1).count()
    }

    pub fn base_rate(&self) -> f64 {
        self.positives() as f64 / self.n_rows().max(1) as f64
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let d = self.n_cols();
        let mut x = Vec::with_capacity(idx.len() * d);
        let mut y = Vec::with_capacity(idx.len());
        for &k in idx {
            x.extend_from_slice(self.row(k));
            y.push(self.y[k]);
        }
        Dataset {
            columns: self.columns.clone(),
            kinds: self.kinds.clone(),
            x,
            y,
            ranked: OnceLock::new(),
        }
    }

    /// Stable identifier of the column layout.
    pub fn fingerprint(&self) -> String {
        schema_fingerprint(&self.columns)
    }

    /// Per-column sorted unique values and row ranks, built once and shared.
    pub fn ranked(&self) -> Arc<RankedColumns> {
        self.ranked
            .get_or_init(|| Arc::new(RankedColumns::build(self)))
            .clone()
    }
}

/// FNV-1a over the column names.
pub fn schema_fingerprint(columns: &[String]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for c in columns {
        for b in c.bytes().chain(std::iter::once(0u8)) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("{}:{h:016x}", columns.len())
}
