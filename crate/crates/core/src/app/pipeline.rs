//! Staged training pipeline: ingest, features, per-stage preprocessing,
//! training and validation, tuning, the final test evaluation and the
//! scored grid decisions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::app::config::{CorpusSource, PipelineConfig, StageConfig};
use crate::app::decision::{build_decisions, export_table, GridDecision};
use crate::classifiers::search::stratified_subsample;
use crate::classifiers::{
    accuracy, grid_search_cv, learning_curve, predict_labels, train, CurvePoint, ModelKind, ModelSpec, SearchResult,
    TrainedModel,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    comparison_csv, impact_report, render_comparison, roc_auc, roc_csv, EvaluationReport, RowOutcome,
};
use crate::features::kpi::CellKey;
use crate::features::{assemble_feature_table, FeatureTable, CATEGORICAL_COLUMNS};
use crate::ingest::CleanCorpus;
use crate::preprocess::{season_split, smote_oversample, Dataset, EncodingConfig, Preprocessor};
use crate::synth::generate_corpus;
use crate::table::RawCorpus;

/// Reads or generates the raw tables and cleans them.
pub fn load_corpus(cfg: &PipelineConfig) -> Result<CleanCorpus> {
    let raw = match &cfg.corpus {
        CorpusSource::Synthetic(c) => generate_corpus(c)?.tables,
        CorpusSource::Csv { dir } => RawCorpus::read_dir(dir)?,
    };
    CleanCorpus::from_raw(&raw, &cfg.ingest)
}

/// Train, validation and test partitions of the model table.
pub struct Partitions {
    pub train: FeatureTable,
    pub validation: FeatureTable,
    pub test: FeatureTable,
}

pub fn build_partitions(cfg: &PipelineConfig, corpus: &CleanCorpus) -> Result<Partitions> {
    let table = assemble_feature_table(corpus, cfg.window).map_err(|e| e.in_stage("features"))?;
    let (train, validation, test) = season_split(&table, &cfg.split).map_err(|e| e.in_stage("split"))?;
    Ok(Partitions {
        train,
        validation,
        test,
    })
}

/// Encoded data of one stage.
pub struct StageData {
    pub preprocessor: Preprocessor,
    pub train: Dataset,
    pub validation: Dataset,
    pub synthetic_rows: usize,
}

pub fn prepare_stage(cfg: &PipelineConfig, stage: &StageConfig, parts: &Partitions) -> Result<StageData> {
    let ctx = |e: Error| e.in_stage(format!("stage {} preprocess", stage.name));
    let enc = EncodingConfig {
        mode: stage.encoding,
        ..cfg.encoding
    };
    let preprocessor = Preprocessor::fit(&parts.train, &enc).map_err(ctx)?;
    let mut train_set = preprocessor.transform(&parts.train).map_err(ctx)?;
    let mut synthetic_rows = 0;
    if stage.oversample {
        let out = smote_oversample(&train_set, &cfg.smote).map_err(ctx)?;
        synthetic_rows = out.synthetic.len();
        train_set = out.data;
    }
    let validation = preprocessor.transform(&parts.validation).map_err(ctx)?;
    Ok(StageData {
        preprocessor,
        train: train_set,
        validation,
        synthetic_rows,
    })
}

/// Cross-validated search for the boosted-trees spec on a stratified
/// subsample of the training rows.
pub fn tune_boosting(cfg: &PipelineConfig, train_set: &Dataset) -> Result<SearchResult> {
    let base = cfg
        .models
        .iter()
        .find(|m| m.kind() == ModelKind::BoostedTrees)
        .copied()
        .unwrap_or_else(|| ModelKind::BoostedTrees.default_spec());
    let t = &cfg.tuning;
    let sub;
    let data = if t.cv_rows > 0 && t.cv_rows < train_set.n_rows() {
        sub = train_set.subset(&stratified_subsample(&train_set.y, t.cv_rows, t.seed));
        &sub
    } else {
        train_set
    };
    grid_search_cv(&base, data, &t.lattice, t.folds, t.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub name: String,
    pub config: StageConfig,
    pub train_rows: usize,
    pub train_positives: usize,
    pub synthetic_rows: usize,
    pub feature_columns: usize,
    pub categorical_columns: usize,
    pub validation_rows: usize,
    pub reports: Vec<EvaluationReport>,
    pub tuning: Option<SearchResult>,
    pub learning_curve: Vec<CurvePoint>,
}

/// Everything a run produces, as also written under the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    #[serde(skip)]
    pub output_dir: PathBuf,
    pub stages: Vec<StageOutcome>,
    pub final_stage: String,
    pub final_model: ModelSpec,
    pub test: EvaluationReport,
    pub decisions: Vec<GridDecision>,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn tuning_csv(result: &SearchResult) -> String {
    let names: Vec<&String> = result.table.first().map(|p| p.params.keys().collect()).unwrap_or_default();
    let folds = result.table.first().map_or(0, |p| p.fold_accuracy.len());
    let mut out = String::new();
    let mut header: Vec<String> = names.iter().map(|n| n.to_string()).collect();
    header.extend((1..=folds).map(|f| format!("fold_{f}")));
    header.push("mean_accuracy".into());
    out.push_str(&header.join(","));
    out.push('\n');
    for p in &result.table {
        let mut row: Vec<String> = p.params.values().map(|v| v.to_string()).collect();
        row.extend(p.fold_accuracy.iter().map(|a| format!("{a:.6}")));
        row.push(format!("{:.6}", p.mean_accuracy));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("size,train_accuracy,validation_accuracy,gap\n");
    for p in curve {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6}",
            p.size,
            p.train_accuracy,
            p.validation_accuracy,
            p.train_accuracy - p.validation_accuracy
        );
    }
    out
}

fn stage_title(s: &StageOutcome) -> String {
    format!(
        "Stage {}: {} encoding, {}; {} training rows ({} positive, {} synthetic), {} features",
        s.name,
        match s.config.encoding {
            crate::preprocess::EncodingMode::DummyOnly => "dummy",
            crate::preprocess::EncodingMode::TargetPlusDummy => "target plus dummy",
        },
        if s.config.oversample { "oversampled" } else { "no oversampling" },
        s.train_rows,
        s.train_positives,
        s.synthetic_rows,
        s.feature_columns,
    )
}

struct StageRun {
    outcome: StageOutcome,
    preprocessor: Preprocessor,
    models: Vec<TrainedModel>,
}

fn run_stage(cfg: &PipelineConfig, stage: &StageConfig, parts: &Partitions, dir: &Path) -> Result<StageRun> {
    let t0 = Instant::now();
    let data = prepare_stage(cfg, stage, parts)?;
    log::info!(
        "stage {}: {} x {} training matrix ready in {:.1?}",
        stage.name,
        data.train.n_rows(),
        data.train.n_cols(),
        t0.elapsed()
    );
    let ctx = |what: String| move |e: Error| e.in_stage(format!("stage {} {what}", stage.name));

    let mut specs = cfg.models.clone();
    let mut tuning = None;
    if stage.tune {
        let t = Instant::now();
        let result = tune_boosting(cfg, &data.train).map_err(ctx("tuning".into()))?;
        log::info!(
            "stage {}: tuned boosted trees to {:?} (cv accuracy {:.4}) in {:.1?}",
            stage.name,
            result.best_params,
            result.best_score,
            t.elapsed()
        );
        for s in specs.iter_mut().filter(|s| s.kind() == ModelKind::BoostedTrees) {
            *s = result.best;
        }
        tuning = Some(result);
    }

    let mut models = Vec::with_capacity(specs.len());
    let mut reports = Vec::with_capacity(specs.len());
    let mut curves = Vec::with_capacity(specs.len());
    for spec in &specs {
        let t = Instant::now();
        let kind = spec.kind();
        let m = train(spec, &data.train).map_err(ctx(format!("training {kind}")))?;
        let scores = m.predict_scores(&data.validation).map_err(ctx(format!("scoring {kind}")))?;
        let report = EvaluationReport::new(kind.label(), &data.validation.y, &scores, cfg.threshold)
            .map_err(ctx(format!("evaluating {kind}")))?;
        log::info!(
            "stage {}: {} validation accuracy {:.4}, auc {:.4} in {:.1?}",
            stage.name,
            kind.label(),
            report.metrics.accuracy.unwrap_or(f64::NAN),
            report.auc,
            t.elapsed()
        );
        curves.push((kind.label().to_string(), roc_auc(&data.validation.y, &scores)?));
        reports.push(report);
        models.push(m);
    }

    let mut curve = Vec::new();
    if stage.tune {
        let t = Instant::now();
        let n = data.train.n_rows();
        let k = specs
            .iter()
            .position(|s| s.kind() == ModelKind::BoostedTrees)
            .expect("validated: boosted trees configured");
        let mut sizes: Vec<usize> = cfg.learning_curve.iter().copied().filter(|&s| s > 0 && s < n).collect();
        sizes.sort_unstable();
        sizes.dedup();
        curve = learning_curve(&specs[k], &data.train, &data.validation, &sizes, cfg.tuning.seed)
            .map_err(ctx("learning curve".into()))?;
        // The full-size point is the model already trained above.
        let full = &models[k];
        curve.push(CurvePoint {
            size: n,
            train_accuracy: accuracy(&data.train.y, &full.predict_scores(&data.train)?, cfg.threshold),
            validation_accuracy: reports[k].metrics.accuracy.unwrap_or(0.0),
        });
        log::info!("stage {}: learning curve in {:.1?}", stage.name, t.elapsed());
    }

    let outcome = StageOutcome {
        name: stage.name.clone(),
        config: stage.clone(),
        train_rows: data.train.n_rows(),
        train_positives: data.train.positives(),
        synthetic_rows: data.synthetic_rows,
        feature_columns: data.train.n_cols(),
        categorical_columns: data.preprocessor.categorical_width(),
        validation_rows: data.validation.n_rows(),
        reports,
        tuning,
        learning_curve: curve,
    };

    let sdir = dir.join("stages").join(&stage.name);
    write_file(&sdir.join("report.txt"), render_comparison(&stage_title(&outcome), &outcome.reports))?;
    write_file(&sdir.join("metrics.csv"), comparison_csv(&stage.name, &outcome.reports))?;
    write_file(&sdir.join("roc.csv"), roc_csv(&curves))?;
    write_file(&sdir.join("preprocessor.json"), data.preprocessor.to_json()?)?;
    if let Some(t) = &outcome.tuning {
        write_file(&sdir.join("tuning.csv"), tuning_csv(t))?;
    }
    if !outcome.learning_curve.is_empty() {
        write_file(&sdir.join("learning_curve.csv"), curve_csv(&outcome.learning_curve))?;
    }
    if cfg.save_models {
        for m in &models {
            write_file(&sdir.join("models").join(format!("{}.json", m.kind())), m.to_json()?)?;
        }
    }
    log::info!("stage {} done in {:.1?}", stage.name, t0.elapsed());
    Ok(StageRun {
        outcome,
        preprocessor: data.preprocessor,
        models,
    })
}

/// The model carried to the test season: tuned boosted trees when the last
/// stage tunes, else the last stage's best validation AUC.
fn pick_final(run: &StageRun) -> usize {
    if run.outcome.config.tune {
        if let Some(k) = run.models.iter().position(|m| m.kind() == ModelKind::BoostedTrees) {
            return k;
        }
    }
    let mut best = 0;
    for (k, r) in run.outcome.reports.iter().enumerate() {
        if r.auc > run.outcome.reports[best].auc {
            best = k;
        }
    }
    best
}

/// Joins each scored row to its own season's adjusted demand.
pub fn row_outcomes(
    rows: &FeatureTable,
    predicted: &[u8],
    corpus: &CleanCorpus,
) -> Result<Vec<RowOutcome>> {
    let col = |name: &str| CATEGORICAL_COLUMNS.iter().position(|c| *c == name).expect("categorical column");
    let (c_grid, c_dim1, c_dim2, c_pg) = (col("grid_name"), col("dim1"), col("dim2"), col("planning_group"));
    (0..rows.len())
        .map(|k| {
            let grid_name = rows.category(k, c_grid);
            let g = corpus
                .grid_index(grid_name)
                .ok_or_else(|| Error::NotFound(format!("grid {grid_name}")))?;
            let pg_name = rows.category(k, c_pg);
            let p = corpus
                .planning_group_index(pg_name)
                .ok_or_else(|| Error::NotFound(format!("planning group {pg_name}")))?;
            let grid = &corpus.grids[g as usize];
            let dim2 = rows.category(k, c_dim2);
            let cell = grid
                .find(rows.category(k, c_dim1), (!dim2.is_empty()).then_some(dim2))
                .and_then(|c| grid.index_of(c.i, c.j))
                .ok_or_else(|| Error::NotFound(format!("cell of row {k} in grid {grid_name}")))?;
            let key = CellKey {
                season: rows.seasons[k],
                planning_group: p,
                grid: g,
                cell: cell as u16,
            };
            let units = corpus.kpis.get(&key).and_then(|v| v.adjusted_demand).unwrap_or(0.0);
            Ok(RowOutcome {
                label: rows.target[k],
                predicted: predicted[k],
                units,
                grid: grid_name.to_string(),
            })
        })
        .collect()
}

/// Unit price per grid name, for grids that have one.
pub fn grid_prices(corpus: &CleanCorpus) -> BTreeMap<String, f64> {
    corpus
        .grids
        .iter()
        .zip(&corpus.grid_attributes)
        .filter_map(|(g, a)| a.unit_price.map(|p| (g.raw_name().to_string(), p)))
        .collect()
}

fn predictions_csv(rows: &[RowOutcome], table: &FeatureTable, scores: &[f64]) -> Vec<u8> {
    let col = |name: &str| CATEGORICAL_COLUMNS.iter().position(|c| *c == name).expect("categorical column");
    let cols = [col("planning_group"), col("grid_name"), col("dim1"), col("dim2")];
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let _ = w.write_record([
        "season",
        "planning_group",
        "grid_name",
        "dim1",
        "dim2",
        "label",
        "score",
        "predicted",
        "units",
    ]);
    for (k, r) in rows.iter().enumerate() {
        let mut rec = vec![table.seasons[k].to_string()];
        rec.extend(cols.iter().map(|&c| table.category(k, c).to_string()));
        rec.extend([
            r.label.to_string(),
            scores[k].to_string(),
            r.predicted.to_string(),
            r.units.to_string(),
        ]);
        let _ = w.write_record(&rec);
    }
    w.into_inner().unwrap_or_default()
}

/// Runs every configured stage, evaluates the final model on the test
/// season and writes all artifacts to the output directory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    let t0 = Instant::now();
    let corpus = load_corpus(cfg).map_err(|e| e.in_stage("ingest"))?;
    log::info!("ingest: {} grids, {} planning groups in {:.1?}", corpus.grids.len(), corpus.planning_groups.len(), t0.elapsed());
    let parts = build_partitions(cfg, &corpus)?;
    log::info!(
        "features: {} train, {} validation, {} test rows in {:.1?}",
        parts.train.len(),
        parts.validation.len(),
        parts.test.len(),
        t0.elapsed()
    );
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    // Echoed relative to the run directory so equal runs compare equal.
    let echo = PipelineConfig {
        output_dir: PathBuf::from("."),
        ..cfg.clone()
    };
    write_file(&dir.join("config.toml"), echo.to_toml()?)?;
    if cfg.save_features {
        let mut all = parts.train.clone();
        for t in [&parts.validation, &parts.test] {
            for r in t.rows() {
                all.push(&r);
            }
        }
        all.save(&dir.join("features.csv"))?;
    }

    let mut last = None;
    let mut outcomes = Vec::with_capacity(cfg.stages.len());
    for stage in &cfg.stages {
        let run = run_stage(cfg, stage, &parts, &dir)?;
        outcomes.push(run.outcome.clone());
        last = Some(run);
    }
    let last = last.expect("validated: at least one stage");

    let ctx = |e: Error| e.in_stage("test");
    let k = pick_final(&last);
    let model = &last.models[k];
    let test_set = last.preprocessor.transform(&parts.test).map_err(ctx)?;
    let scores = model.predict_scores(&test_set).map_err(ctx)?;
    let label = format!("{} (stage {})", model.kind().label(), last.outcome.name);
    let mut test = EvaluationReport::new(&label, &test_set.y, &scores, cfg.threshold).map_err(ctx)?;
    let predicted = predict_labels(&scores, cfg.threshold);
    let rows = row_outcomes(&parts.test, &predicted, &corpus).map_err(ctx)?;
    test.impact = Some(impact_report(&rows, &grid_prices(&corpus)).map_err(ctx)?);
    log::info!(
        "test: {} accuracy {:.4}, auc {:.4}",
        label,
        test.metrics.accuracy.unwrap_or(f64::NAN),
        test.auc
    );

    let decisions = build_decisions(&parts.test, &scores, &corpus, cfg.threshold, cfg.retail_cap)
        .map_err(|e| e.in_stage("decisions"))?;

    let tdir = dir.join("test");
    write_file(&tdir.join("report.txt"), render_comparison("Final model on the test season", std::slice::from_ref(&test)))?;
    write_file(&tdir.join("metrics.csv"), comparison_csv("test", std::slice::from_ref(&test)))?;
    write_file(&tdir.join("predictions.csv"), predictions_csv(&rows, &parts.test, &scores))?;
    write_file(&dir.join("final_model.json"), model.to_json()?)?;
    write_file(&dir.join("final_preprocessor.json"), last.preprocessor.to_json()?)?;
    write_file(&dir.join("decisions.json"), serde_json::to_string(&decisions)?)?;
    write_file(&dir.join("selections.csv"), export_table(&decisions).to_csv_bytes())?;

    let mut report = String::new();
    for s in &outcomes {
        report.push_str(&render_comparison(&stage_title(s), &s.reports));
        if let Some(t) = &s.tuning {
            let _ = writeln!(
                report,
                "Tuned boosted trees: {:?}, cross-validated accuracy {:.4}",
                t.best_params, t.best_score
            );
        }
        if let Some(p) = s.learning_curve.last() {
            let _ = writeln!(
                report,
                "Learning curve at {} rows: train {:.4}, validation {:.4}",
                p.size, p.train_accuracy, p.validation_accuracy
            );
        }
        report.push('\n');
    }
    report.push_str(&render_comparison(&format!("Test season: {label}"), std::slice::from_ref(&test)));
    write_file(&dir.join("report.txt"), report)?;

    let artifacts = RunArtifacts {
        output_dir: dir.clone(),
        stages: outcomes,
        final_stage: last.outcome.name.clone(),
        final_model: model.spec,
        test,
        decisions,
    };
    let mut summary = artifacts.clone();
    summary.decisions.clear();
    write_file(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    log::info!("run finished in {:.1?}", t0.elapsed());
    Ok(artifacts)
}
