//! Train-fitted transformations from the model table to a numeric dataset.

pub mod dataset;
pub mod encoding;
pub mod scaler;
pub mod smote;
pub mod split;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    continuous_columns, flag_columns, FeatureTable, CATEGORICAL_COLUMNS, N_CONTINUOUS, N_FLAGS,
};
pub use dataset::{ColumnKind, Dataset};
pub use encoding::{fit_dummy_encoder, fit_target_encoder, target_eligible, DummyEncoder, TargetEncoder};
pub use scaler::{fit_standard_scaler, NumericFrame, StandardScaler};
pub use smote::{smote_oversample, SmoteConfig, SmoteOutput};
pub use split::{season_split, split_indices, SplitIndices, SplitSpec};

pub const TRANSFORM_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingMode {
    DummyOnly,
    TargetPlusDummy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodingConfig {
    pub mode: EncodingMode,
    /// Smoothing weight m of the target-encoding blend.
    pub smoothing: f64,
    /// Minimum training levels for a column to be target encoded.
    pub min_target_levels: usize,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig {
            mode: EncodingMode::TargetPlusDummy,
            smoothing: 20.0,
            min_target_levels: 10,
        }
    }
}

/// All fitted transforms of one stage, replayable on any table with the
/// same feature layout. Output column order: scaled continuous KPIs, scaled
/// target encodings, missing flags, indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub version: u32,
    pub config: EncodingConfig,
    pub target: Option<TargetEncoder>,
    pub dummy: DummyEncoder,
    pub scaler: StandardScaler,
    pub columns: Vec<String>,
    pub kinds: Vec<ColumnKind>,
}

impl Preprocessor {
    pub fn fit(train: &FeatureTable, config: &EncodingConfig) -> Result<Preprocessor> {
        if train.is_empty() {
            return Err(Error::EmptyPartition("train"));
        }
        let (target_cols, dummy_cols): (Vec<String>, Vec<String>) = match config.mode {
            EncodingMode::DummyOnly => (Vec::new(), CATEGORICAL_COLUMNS.iter().map(|c| c.to_string()).collect()),
            EncodingMode::TargetPlusDummy => {
                let eligible = target_eligible(train, config.min_target_levels);
                let rest = CATEGORICAL_COLUMNS
                    .iter()
                    .map(|c| c.to_string())
                    .filter(|c| !eligible.contains(c))
                    .collect();
                (eligible, rest)
            }
        };
        let target = if target_cols.is_empty() {
            None
        } else {
            Some(fit_target_encoder(train, &target_cols, config.smoothing)?)
        };
        let dummy = fit_dummy_encoder(train, &dummy_cols)?;

        let frame = numeric_frame(train, target.as_ref())?;
        let scaler = fit_standard_scaler(&frame, &frame.names)?;

        let mut columns = frame.names.clone();
        let mut kinds = vec![ColumnKind::Continuous; columns.len()];
        columns.extend(flag_columns());
        columns.extend(dummy.output_names());
        kinds.resize(columns.len(), ColumnKind::Binary);
        Ok(Preprocessor {
            version: TRANSFORM_FORMAT_VERSION,
            config: *config,
            target,
            dummy,
            scaler,
            columns,
            kinds,
        })
    }

    /// Categorical feature columns produced (encodings plus indicators).
    pub fn categorical_width(&self) -> usize {
        self.target.as_ref().map_or(0, |t| t.columns.len()) + self.dummy.width()
    }

    pub fn transform(&self, rows: &FeatureTable) -> Result<Dataset> {
        let d = self.columns.len();
        let n = rows.len();
        let target_maps = match &self.target {
            Some(t) => t.code_maps(rows)?,
            None => Vec::new(),
        };
        let dummy_maps = self.dummy.code_maps(rows)?;
        let n_scaled = N_CONTINUOUS + target_maps.len();
        let dummy_base = n_scaled + N_FLAGS;
        let mut x = vec![0f32; n * d];
        x.par_chunks_mut(d.max(1)).enumerate().for_each(|(k, out)| {
            if d == 0 {
                return;
            }
            for (c, &v) in rows.continuous_row(k).iter().enumerate() {
                out[c] = self.scaler.scale(c, v) as f32;
            }
            for (t, (pos, enc)) in target_maps.iter().enumerate() {
                let v = enc[rows.category_code(k, *pos) as usize];
                out[N_CONTINUOUS + t] = self.scaler.scale(N_CONTINUOUS + t, v) as f32;
            }
            for (f, &v) in rows.flag_row(k).iter().enumerate() {
                out[n_scaled + f] = v as f32;
            }
            for (pos, map) in &dummy_maps {
                if let Some(off) = map[rows.category_code(k, *pos) as usize] {
                    out[dummy_base + off] = 1.0;
                }
            }
        });
        Dataset::new(self.columns.clone(), self.kinds.clone(), x, rows.target.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Preprocessor> {
        let p: Preprocessor = serde_json::from_str(s)?;
        if p.version != TRANSFORM_FORMAT_VERSION {
            return Err(Error::Serde(format!(
                "transform format version {} is not supported (expected {TRANSFORM_FORMAT_VERSION})",
                p.version
            )));
        }
        Ok(p)
    }
}

/// Continuous KPI columns plus target encodings as `f64` columns.
fn numeric_frame(rows: &FeatureTable, target: Option<&TargetEncoder>) -> Result<NumericFrame> {
    let n = rows.len();
    let mut names = continuous_columns();
    let mut columns: Vec<Vec<f64>> = (0..N_CONTINUOUS)
        .map(|c| (0..n).map(|k| rows.continuous[k * N_CONTINUOUS + c]).collect())
        .collect();
    if let Some(t) = target {
        names.extend(t.output_names());
        for (pos, enc) in t.code_maps(rows)? {
            columns.push((0..n).map(|k| enc[rows.category_code(k, pos) as usize]).collect());
        }
    }
    Ok(NumericFrame::new(names, columns))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureRow, N_CATEGORICAL};

    /// Table whose categorical columns have the given level counts.
    fn table_with_levels(levels: &[usize; N_CATEGORICAL], n: usize) -> FeatureTable {
        let mut t = FeatureTable::new();
        for k in 0..n {
            t.push(&FeatureRow {
                season: "193".parse().unwrap(),
                continuous: (0..N_CONTINUOUS).map(|c| ((k * 31 + c) % 17) as f64).collect(),
                flags: (0..N_FLAGS).map(|c| ((k + c) % 2) as u8).collect(),
                categorical: levels.iter().enumerate().map(|(c, &l)| format!("c{c}l{}", k % l)).collect(),
                target: (k % 3 == 0) as u8,
            });
        }
        t
    }

    #[test]
    fn reference_cardinalities() {
        let levels = [464, 79, 26, 38, 3, 2, 10, 2, 2];
        let t = table_with_levels(&levels, 1000);
        let dummy = Preprocessor::fit(
            &t,
            &EncodingConfig {
                mode: EncodingMode::DummyOnly,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(dummy.categorical_width(), 626);
        let target = Preprocessor::fit(&t, &EncodingConfig::default()).unwrap();
        assert_eq!(target.categorical_width(), 14);
        assert_eq!(target.columns.len(), 75 + 5 + 50 + 9);
    }

    #[test]
    fn json_replay_is_exact() {
        let t = table_with_levels(&[12, 5, 3, 11, 3, 2, 10, 2, 2], 200);
        let p = Preprocessor::fit(&t, &EncodingConfig::default()).unwrap();
        let back = Preprocessor::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.transform(&t).unwrap().x, p.transform(&t).unwrap().x);
    }

    #[test]
    fn fit_ignores_non_train_rows() {
        let t = table_with_levels(&[12, 5, 3, 11, 3, 2, 10, 2, 2], 300);
        let train_idx: Vec<usize> = (0..200).collect();
        let train = t.select(&train_idx);
        let before = Preprocessor::fit(&train, &EncodingConfig::default()).unwrap();
        let mut mutated = t.clone();
        for v in &mut mutated.continuous[200 * N_CONTINUOUS..] {
            *v += 1000.0;
        }
        for y in &mut mutated.target[200..] {
            *y = 1 - *y;
        }
        let after = Preprocessor::fit(&mutated.select(&train_idx), &EncodingConfig::default()).unwrap();
        assert_eq!(before, after);
    }
}
