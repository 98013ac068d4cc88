//! Dummy (one-hot) and smoothed target encoding of the categorical columns.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureTable, CATEGORICAL_COLUMNS};

fn column_position(name: &str) -> Result<usize> {
    CATEGORICAL_COLUMNS
        .iter()
        .position(|c| *c == name)
        .ok_or_else(|| Error::UnknownColumn(name.to_string()))
}

/// Distinct levels of each categorical column present in `rows`.
pub fn observed_levels(rows: &FeatureTable, col: usize) -> BTreeSet<String> {
    let used: BTreeSet<u32> = (0..rows.len()).map(|k| rows.category_code(k, col)).collect();
    used.into_iter()
        .map(|c| rows.levels[col][c as usize].clone())
        .collect()
}

/// Categorical columns with at least `min_levels` levels in `train`.
pub fn target_eligible(train: &FeatureTable, min_levels: usize) -> Vec<String> {
    CATEGORICAL_COLUMNS
        .iter()
        .enumerate()
        .filter(|(k, _)| observed_levels(train, *k).len() >= min_levels)
        .map(|(_, c)| c.to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DummyEncoder {
    pub columns: Vec<String>,
    /// Sorted training levels per column.
    pub levels: Vec<Vec<String>>,
}

pub fn fit_dummy_encoder(train: &FeatureTable, columns: &[String]) -> Result<DummyEncoder> {
    let mut levels = Vec::with_capacity(columns.len());
    for c in columns {
        let pos = column_position(c)?;
        levels.push(observed_levels(train, pos).into_iter().collect());
    }
    Ok(DummyEncoder {
        columns: columns.to_vec(),
        levels,
    })
}

impl DummyEncoder {
    pub fn output_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .zip(&self.levels)
            .flat_map(|(c, ls)| ls.iter().map(move |l| format!("{c}={l}")))
            .collect()
    }

    pub fn width(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    /// For each encoded column, maps the table's dictionary codes to the
    /// output offset of the indicator (None for unseen levels).
    pub fn code_maps(&self, rows: &FeatureTable) -> Result<Vec<(usize, Vec<Option<usize>>)>> {
        let mut offset = 0;
        let mut out = Vec::with_capacity(self.columns.len());
        for (c, levels) in self.columns.iter().zip(&self.levels) {
            let pos = column_position(c)?;
            let map = rows.levels[pos]
                .iter()
                .map(|l| levels.binary_search(l).ok().map(|k| offset + k))
                .collect();
            out.push((pos, map));
            offset += levels.len();
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEncoder {
    pub columns: Vec<String>,
    pub smoothing: f64,
    pub global_mean: f64,
    pub encodings: Vec<BTreeMap<String, f64>>,
}

/// Smoothed level mean: (n * level_mean + m * global_mean) / (n + m).
pub fn blend(n: f64, level_mean: f64, m: f64, global_mean: f64) -> f64 {
    if n + m == 0.0 {
        return global_mean;
    }
    (n * level_mean + m * global_mean) / (n + m)
}

pub fn fit_target_encoder(train: &FeatureTable, columns: &[String], smoothing: f64) -> Result<TargetEncoder> {
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::InvalidConfig(format!("smoothing {smoothing} must be >= 0")));
    }
    let n = train.len();
    let global_mean = train.positive_count() as f64 / n.max(1) as f64;
    let mut encodings = Vec::with_capacity(columns.len());
    for c in columns {
        let pos = column_position(c)?;
        let mut stats = vec![(0usize, 0usize); train.levels[pos].len()];
        for k in 0..n {
            let s = &mut stats[train.category_code(k, pos) as usize];
            s.0 += 1;
            s.1 += train.target[k] as usize;
        }
        let map = stats
            .iter()
            .enumerate()
            .filter(|(_, (cnt, _))| *cnt > 0)
            .map(|(code, &(cnt, pos_cnt))| {
                let mean = pos_cnt as f64 / cnt as f64;
                (
                    train.levels[pos][code].clone(),
                    blend(cnt as f64, mean, smoothing, global_mean),
                )
            })
            .collect();
        encodings.push(map);
    }
    Ok(TargetEncoder {
        columns: columns.to_vec(),
        smoothing,
        global_mean,
        encodings,
    })
}

impl TargetEncoder {
    pub fn output_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| format!("{c}_target")).collect()
    }

    pub fn encode(&self, k: usize, level: &str) -> f64 {
        self.encodings[k].get(level).copied().unwrap_or(self.global_mean)
    }

    /// Per encoded column: (categorical position, encoding per table code).
    pub fn code_maps(&self, rows: &FeatureTable) -> Result<Vec<(usize, Vec<f64>)>> {
        self.columns
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let pos = column_position(c)?;
                Ok((pos, rows.levels[pos].iter().map(|l| self.encode(k, l)).collect()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureRow, N_CONTINUOUS, N_FLAGS};

    fn table(rows: &[(&str, u8)]) -> FeatureTable {
        let mut t = FeatureTable::new();
        for (level, y) in rows {
            let mut cats: Vec<String> = CATEGORICAL_COLUMNS.iter().map(|_| "x".to_string()).collect();
            cats[6] = level.to_string();
            t.push(&FeatureRow {
                season: "193".parse().unwrap(),
                continuous: vec![0.0; N_CONTINUOUS],
                flags: vec![0; N_FLAGS],
                categorical: cats,
                target: *y,
            });
        }
        t
    }

    #[test]
    fn blend_example() {
        assert!((blend(20.0, 1.0, 20.0, 0.25) - 0.625).abs() < 1e-12);
    }

    #[test]
    fn unseen_level_gets_global_mean() {
        let t = table(&[("a", 1), ("a", 0), ("b", 0), ("b", 0)]);
        let enc = fit_target_encoder(&t, &["affiliate".into()], 20.0).unwrap();
        assert_eq!(enc.encode(0, "zzz"), 0.25);
        assert!(enc.encode(0, "a") > enc.encode(0, "b"));
    }

    #[test]
    fn dummy_unseen_is_all_zero() {
        let train = table(&[("a", 1), ("b", 0)]);
        let enc = fit_dummy_encoder(&train, &["affiliate".into(), "channel".into()]).unwrap();
        assert_eq!(enc.output_names(), vec!["affiliate=a", "affiliate=b", "channel=x"]);
        let apply = table(&[("c", 0), ("b", 0)]);
        let maps = enc.code_maps(&apply).unwrap();
        let (pos, map) = &maps[0];
        assert_eq!(map[apply.category_code(0, *pos) as usize], None);
        assert_eq!(map[apply.category_code(1, *pos) as usize], Some(1));
    }

    #[test]
    fn eligibility_counts_levels() {
        let rows: Vec<(String, u8)> = (0..12).map(|k| (format!("l{k}"), (k % 2) as u8)).collect();
        let refs: Vec<(&str, u8)> = rows.iter().map(|(l, y)| (l.as_str(), *y)).collect();
        let t = table(&refs);
        assert_eq!(target_eligible(&t, 10), vec!["affiliate".to_string()]);
        assert!(target_eligible(&t, 13).is_empty());
    }

    #[test]
    fn equal_counts_order_by_level_mean() {
        let t = table(&[("a", 1), ("a", 1), ("a", 0), ("b", 1), ("b", 0), ("b", 0)]);
        let enc = fit_target_encoder(&t, &["affiliate".into()], 5.0).unwrap();
        assert!(enc.encode(0, "a") > enc.encode(0, "b"));
    }
}
