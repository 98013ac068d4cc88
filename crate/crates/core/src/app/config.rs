//! Declarative pipeline configuration, loadable from one TOML file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifiers::{BoostingParams, Lattice, ModelKind, ModelSpec};
use crate::domain::parse_season;
use crate::error::{Error, Result};
use crate::ingest::IngestOptions;
use crate::preprocess::{EncodingConfig, EncodingMode, SmoteConfig, SplitSpec};
use crate::synth::CorpusConfig;

/// Where the raw tables come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CorpusSource {
    Synthetic(CorpusConfig),
    Csv { dir: PathBuf },
}

/// One pass of preprocess, train and evaluate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub name: String,
    pub encoding: EncodingMode,
    pub oversample: bool,
    /// Tune boosted trees by cross-validation before training.
    #[serde(default)]
    pub tune: bool,
}

impl StageConfig {
    fn new(name: &str, encoding: EncodingMode, oversample: bool, tune: bool) -> StageConfig {
        StageConfig {
            name: name.to_string(),
            encoding,
            oversample,
            tune,
        }
    }

    /// Stages I to IV: dummy encoding; target encoding; plus oversampling;
    /// plus tuning.
    pub fn reference() -> Vec<StageConfig> {
        vec![
            StageConfig::new("I", EncodingMode::DummyOnly, false, false),
            StageConfig::new("II", EncodingMode::TargetPlusDummy, false, false),
            StageConfig::new("III", EncodingMode::TargetPlusDummy, true, false),
            StageConfig::new("IV", EncodingMode::TargetPlusDummy, true, true),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningConfig {
    pub lattice: Lattice,
    pub folds: usize,
    /// Stratified subsample of the training rows used for cross-validation;
    /// 0 uses all rows.
    pub cv_rows: usize,
    pub seed: u64,
}

impl Default for TuningConfig {
    fn default() -> Self {
        TuningConfig {
            lattice: Lattice::new()
                .axis("max_depth", [4.0, 6.0])
                .axis("n_estimators", [40.0, 80.0])
                .axis("learning_rate", [0.1, 0.3]),
            folds: 3,
            cv_rows: 20_000,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: CorpusSource,
    pub ingest: IngestOptions,
    pub window: usize,
    pub split: SplitSpec,
    /// Smoothing and eligibility of target encoding; the mode is per stage.
    pub encoding: EncodingConfig,
    pub smote: SmoteConfig,
    /// Model grid trained in every stage.
    pub models: Vec<ModelSpec>,
    pub stages: Vec<StageConfig>,
    pub tuning: TuningConfig,
    /// Learning-curve subsample sizes; the full training size is appended.
    pub learning_curve: Vec<usize>,
    pub threshold: f64,
    /// Maximum selected sizes on high (H) grids in the decision layer.
    pub retail_cap: usize,
    pub output_dir: PathBuf,
    /// Also write every stage's fitted models.
    pub save_models: bool,
    /// Also write the assembled model table.
    pub save_features: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let s = |c| parse_season(c).expect("valid season");
        PipelineConfig {
            corpus: CorpusSource::Synthetic(CorpusConfig::default()),
            ingest: IngestOptions::default(),
            window: 4,
            split: SplitSpec::new(s(193), s(201), s(203)).expect("increasing seasons"),
            encoding: EncodingConfig::default(),
            smote: SmoteConfig::default(),
            models: vec![
                ModelKind::Logistic.default_spec(),
                ModelKind::NaiveBayes.default_spec(),
                ModelKind::RandomForest.default_spec(),
                ModelSpec::BoostedTrees(BoostingParams {
                    n_estimators: 40,
                    learning_rate: 0.3,
                    ..BoostingParams::default()
                }),
            ],
            stages: StageConfig::reference(),
            tuning: TuningConfig::default(),
            learning_curve: vec![250, 500, 1000, 2000, 5000, 10_000, 20_000, 50_000],
            threshold: 0.5,
            retail_cap: 24,
            output_dir: PathBuf::from("run"),
            save_models: true,
            save_features: false,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<PipelineConfig> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML file; a relative `output_dir` stays relative to the
    /// working directory.
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PipelineConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if let CorpusSource::Synthetic(c) = &self.corpus {
            c.validate()?;
        }
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        self.split.validate()?;
        if self.stages.is_empty() {
            return bad("no stages configured".into());
        }
        if self.models.is_empty() {
            return bad("no models configured".into());
        }
        for m in &self.models {
            m.validate()?;
        }
        let mut names: Vec<&str> = self.stages.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.stages.len() {
            return bad("stage names must be unique".into());
        }
        if self.stages.iter().any(|s| s.name.is_empty() || s.name.contains(['/', '\\'])) {
            return bad("stage names must be nonempty and free of path separators".into());
        }
        if self.stages.iter().any(|s| s.tune) {
            if !self.models.iter().any(|m| m.kind() == ModelKind::BoostedTrees) {
                return bad("a tuning stage needs a boosted_trees entry in models".into());
            }
            if self.tuning.folds < 2 {
                return bad(format!("tuning needs >= 2 folds, got {}", self.tuning.folds));
            }
            if self.tuning.lattice.is_empty() {
                return bad("tuning lattice is empty".into());
            }
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold {} is outside [0, 1]", self.threshold));
        }
        if self.retail_cap == 0 {
            return bad("retail_cap must be positive".into());
        }
        if !(self.smote.ratio > 0.0 && self.smote.ratio < 1.0) || self.smote.k == 0 {
            return bad("smote needs k >= 1 and ratio in (0, 1)".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = PipelineConfig::from_toml(
            r#"
            output_dir = "out"
            [corpus]
            source = "synthetic"
            seed = 3
            n_grid_names = 5

            [[stages]]
            name = "I"
            encoding = "dummy_only"
            oversample = false

            [[models]]
            kind = "naive_bayes"
            "#,
        )
        .unwrap();
        match &cfg.corpus {
            CorpusSource::Synthetic(c) => {
                assert_eq!((c.seed, c.n_grid_names), (3, 5));
                assert_eq!(c.n_planning_groups, CorpusConfig::default().n_planning_groups);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(cfg.stages.len(), 1);
        assert!(!cfg.stages[0].tune);
        assert_eq!(cfg.models, vec![ModelKind::NaiveBayes.default_spec()]);
        assert_eq!(cfg.window, 4);
    }

    #[test]
    fn csv_source_parses() {
        let cfg = PipelineConfig::from_toml("[corpus]\nsource = \"csv\"\ndir = \"raw\"\n").unwrap();
        assert_eq!(cfg.corpus, CorpusSource::Csv { dir: "raw".into() });
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(PipelineConfig::from_toml("windw = 4").is_err());
        assert!(PipelineConfig::from_toml("threshold = 1.5").is_err());
        assert!(PipelineConfig::from_toml("[split]\ntrain_max_season = 201\nvalidation_season = 193\ntest_season = 203").is_err());
        let no_boost = "[[models]]\nkind = \"logistic\"\n";
        assert!(PipelineConfig::from_toml(no_boost).is_err());
    }
}
