use serde::{Deserialize, Serialize};

use crate::domain::SeasonCode;
use crate::error::{Error, Result};
use crate::features::FeatureTable;

/// Chronological train / validation / test split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_max_season: SeasonCode,
    pub validation_season: SeasonCode,
    pub test_season: SeasonCode,
}

impl SplitSpec {
    pub fn new(train_max: SeasonCode, validation: SeasonCode, test: SeasonCode) -> Result<SplitSpec> {
        let s = SplitSpec {
            train_max_season: train_max,
            validation_season: validation,
            test_season: test,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_max_season < self.validation_season && self.validation_season < self.test_season {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "split seasons must increase: train <= {}, validation {}, test {}",
                self.train_max_season, self.validation_season, self.test_season
            )))
        }
    }
}

/// Row positions of each partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_indices(seasons: &[SeasonCode], spec: &SplitSpec) -> Result<SplitIndices> {
    spec.validate()?;
    let mut out = SplitIndices {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    let mut skipped = 0usize;
    for (k, &s) in seasons.iter().enumerate() {
        if s <= spec.train_max_season {
            out.train.push(k);
        } else if s == spec.validation_season {
            out.validation.push(k);
        } else if s == spec.test_season {
            out.test.push(k);
        } else {
            skipped += 1;
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} rows fall outside the split seasons and are left out");
    }
    for (name, part) in [("train", &out.train), ("validation", &out.validation), ("test", &out.test)] {
        if part.is_empty() {
            return Err(Error::EmptyPartition(name));
        }
    }
    Ok(out)
}

/// Partitions the model table by season.
pub fn season_split(rows: &FeatureTable, spec: &SplitSpec) -> Result<(FeatureTable, FeatureTable, FeatureTable)> {
    let idx = split_indices(&rows.seasons, spec)?;
    Ok((rows.select(&idx.train), rows.select(&idx.validation), rows.select(&idx.test)))
}
