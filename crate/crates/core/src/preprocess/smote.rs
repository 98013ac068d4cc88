//! Synthetic minority oversampling with exact Euclidean k-nearest neighbours.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::dataset::{ColumnKind, Dataset};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoteConfig {
    pub k: usize,
    /// Minority share of the output.
    pub ratio: f64,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        SmoteConfig {
            k: 5,
            ratio: 0.5,
            seed: 7,
        }
    }
}

/// Origin of one synthetic row: base row, chosen neighbour, gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Synthetic {
    pub base: usize,
    pub neighbor: usize,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct SmoteOutput {
    /// Input rows followed by the synthetic rows.
    pub data: Dataset,
    pub synthetic: Vec<Synthetic>,
}

/// Synthetic rows needed so that the minority reaches `ratio` of all rows.
pub fn synthetic_count(n_total: usize, n_minority: usize, ratio: f64) -> usize {
    let need = (ratio * n_total as f64 - n_minority as f64) / (1.0 - ratio);
    if need <= 0.0 {
        0
    } else {
        need.round() as usize
    }
}

/// Indices of the `k` nearest rows (excluding self) of every row of `points`
/// (row-major, `d` columns), using blocked matrix products.
pub fn knn(points: &[f32], d: usize, k: usize) -> Vec<Vec<usize>> {
    let n = points.len().checked_div(d).unwrap_or(0);
    let norms: Vec<f32> = (0..n)
        .map(|r| points[r * d..(r + 1) * d].iter().map(|v| v * v).sum())
        .collect();
    const BLOCK: usize = 256;
    let mut out = Vec::with_capacity(n);
    let mut dots = vec![0f32; BLOCK * n];
    let mut cand: Vec<(f32, usize)> = Vec::with_capacity(n);
    for start in (0..n).step_by(BLOCK) {
        let rows = BLOCK.min(n - start);
        // dots[rows x n] = Q[rows x d] * P^T[d x n]
        unsafe {
            matrixmultiply::sgemm(
                rows,
                d,
                n,
                1.0,
                points[start * d..].as_ptr(),
                d as isize,
                1,
                points.as_ptr(),
                1,
                d as isize,
                0.0,
                dots.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        for r in 0..rows {
            let q = start + r;
            cand.clear();
            for j in 0..n {
                if j != q {
                    let dist = (norms[q] + norms[j] - 2.0 * dots[r * n + j]).max(0.0);
                    cand.push((dist, j));
                }
            }
            let kk = k.min(cand.len());
            if kk == 0 {
                out.push(Vec::new());
                continue;
            }
            let by_dist = |a: &(f32, usize), b: &(f32, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            cand.select_nth_unstable_by(kk - 1, by_dist);
            let mut top = cand[..kk].to_vec();
            top.sort_by(by_dist);
            out.push(top.into_iter().map(|(_, j)| j).collect());
        }
    }
    out
}

/// Appends synthetic minority rows `x + g (x_nn - x)` until the minority
/// class makes up `ratio` of the data. Binary columns take the value of the
/// interpolated point rounded to {0, 1}.
pub fn smote_oversample(data: &Dataset, cfg: &SmoteConfig) -> Result<SmoteOutput> {
    if !(cfg.ratio > 0.0 && cfg.ratio < 1.0) {
        return Err(Error::InvalidConfig(format!("SMOTE ratio {} must be in (0, 1)", cfg.ratio)));
    }
    if cfg.k == 0 {
        return Err(Error::InvalidConfig("SMOTE needs k >= 1".into()));
    }
    let positives = data.positives();
    let negatives = data.n_rows() - positives;
    let minority_label = u8::from(positives <= negatives);
    let minority: Vec<usize> = (0..data.n_rows()).filter(|&r| data.y[r] == minority_label).collect();
    if minority.len() < cfg.k + 1 {
        return Err(Error::TooFewMinority {
            needed: cfg.k + 1,
            found: minority.len(),
        });
    }
    let count = synthetic_count(data.n_rows(), minority.len(), cfg.ratio);
    let d = data.n_cols();
    let mut out = data.clone();
    if count == 0 {
        return Ok(SmoteOutput {
            data: out,
            synthetic: Vec::new(),
        });
    }
    let mut pts = Vec::with_capacity(minority.len() * d);
    for &r in &minority {
        pts.extend_from_slice(data.row(r));
    }
    let neighbours = knn(&pts, d, cfg.k);

    let mut rng = stream(cfg.seed, &[0x5307e]);
    let mut synthetic = Vec::with_capacity(count);
    out.x.reserve(count * d);
    out.y.reserve(count);
    let mut row = vec![0f32; d];
    for _ in 0..count {
        let b = rng.random_range(0..minority.len());
        let nb = neighbours[b][rng.random_range(0..neighbours[b].len())];
        let gap: f64 = rng.random_range(0.0..=1.0);
        let (xb, xn) = (data.row(minority[b]), data.row(minority[nb]));
        for c in 0..d {
            row[c] = match data.kinds[c] {
                ColumnKind::Continuous => {
                    let (a, z) = (xb[c] as f64, xn[c] as f64);
                    (a + gap * (z - a)) as f32
                }
                ColumnKind::Binary => {
                    if gap > 0.5 {
                        xn[c]
                    } else {
                        xb[c]
                    }
                }
            };
        }
        out.x.extend_from_slice(&row);
        out.y.push(minority_label);
        synthetic.push(Synthetic {
            base: minority[b],
            neighbor: minority[nb],
            gap,
        });
    }
    Ok(SmoteOutput { data: out, synthetic })
}
