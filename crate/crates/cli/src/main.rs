use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use sizegrid_core::app::pipeline::{build_partitions, grid_prices, load_corpus, prepare_stage, row_outcomes, tune_boosting};
use sizegrid_core::app::{run_pipeline, CorpusSource, DecisionStore, PipelineConfig};
use sizegrid_core::classifiers::{predict_labels, TrainedModel};
use sizegrid_core::evaluation::{comparison_csv, impact_report, render_comparison, EvaluationReport};
use sizegrid_core::features::{assemble_feature_table, FeatureTable};
use sizegrid_core::ingest::{CleanCorpus, IngestOptions};
use sizegrid_core::preprocess::Preprocessor;
use sizegrid_core::synth::{generate_corpus, CorpusConfig};
use sizegrid_core::table::RawCorpus;
use sizegrid_core::SeasonCode;
use sizegrid_cli::service;

#[derive(Parser)]
#[command(name = "sizegrid", version, about = "Size-grid selection pipeline and planner service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic raw corpus as CSV tables.
    Gen {
        /// Pipeline config whose synthetic corpus section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Clean a raw CSV directory into grid-level tables.
    Ingest {
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assemble the model table from a cleaned directory.
    Features {
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        window: usize,
    },
    /// Train and validate every model of the selected stages, without tuning.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Stage names to run; all when omitted.
        #[arg(long = "stage")]
        stages: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validate the boosted-trees lattice of one stage.
    Tune {
        #[arg(long)]
        config: PathBuf,
        /// Stage whose encoding is used; the first tuning stage by default.
        #[arg(long)]
        stage: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a saved model on one season of a model table.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        preprocessor: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        season: SeasonCode,
        /// Cleaned directory for the false-negative demand and revenue.
        #[arg(long)]
        clean: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Write the metrics CSV here as well.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every configured stage and write all artifacts.
    RunAll {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the grid decisions of a completed run.
    Serve {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Gen { config, seed, out } => {
            let mut corpus = match load_config(config.as_deref())?.corpus {
                CorpusSource::Synthetic(c) => c,
                CorpusSource::Csv { .. } => bail!("the config reads a CSV corpus; nothing to generate"),
            };
            if let Some(s) = seed {
                corpus = CorpusConfig { seed: s, ..corpus };
            }
            let c = generate_corpus(&corpus)?;
            c.tables.write_dir(&out)?;
            fs::write(out.join("planted_rule.json"), serde_json::to_string_pretty(&c.planted_rule)?)?;
            println!(
                "wrote {} tables to {} (positive share {:.4})",
                c.tables.tables().len(),
                out.display(),
                c.planted_rule.positive_fraction()
            );
        }
        Command::Ingest { raw, out } => {
            let tables = RawCorpus::read_dir(&raw)?;
            let clean = CleanCorpus::from_raw(&tables, &IngestOptions::default())?;
            clean.save(&out)?;
            println!(
                "{} grids, {} planning groups, {} KPI cells; {} rows dropped",
                clean.grids.len(),
                clean.planning_groups.len(),
                clean.kpis.len(),
                clean.report.total_dropped()
            );
        }
        Command::Features { clean, out, window } => {
            let corpus = CleanCorpus::load(&clean)?;
            let table = assemble_feature_table(&corpus, window)?;
            table.save(&out)?;
            println!("{} rows ({} positive) to {}", table.len(), table.positive_count(), out.display());
        }
        Command::Train { config, stages, out } => {
            let mut cfg = load_config(Some(&config))?;
            if !stages.is_empty() {
                if let Some(s) = stages.iter().find(|s| !cfg.stages.iter().any(|c| &c.name == *s)) {
                    bail!("unknown stage {s:?}");
                }
                cfg.stages.retain(|s| stages.contains(&s.name));
            }
            for s in &mut cfg.stages {
                s.tune = false;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let a = run_pipeline(&cfg)?;
            for s in &a.stages {
                print!("{}", render_comparison(&format!("Stage {}", s.name), &s.reports));
            }
        }
        Command::Tune { config, stage, out } => {
            let cfg = load_config(Some(&config))?;
            let st = match &stage {
                Some(n) => cfg.stages.iter().find(|s| &s.name == n),
                None => cfg.stages.iter().find(|s| s.tune).or(cfg.stages.last()),
            }
            .with_context(|| format!("no stage {:?}", stage.as_deref().unwrap_or("to tune")))?;
            let corpus = load_corpus(&cfg)?;
            let parts = build_partitions(&cfg, &corpus)?;
            let data = prepare_stage(&cfg, st, &parts)?;
            let result = tune_boosting(&cfg, &data.train)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("tuning.json"), serde_json::to_string_pretty(&result)?)?;
            println!(
                "best {:?}: cross-validated accuracy {:.4}",
                result.best_params, result.best_score
            );
        }
        Command::Evaluate {
            model,
            preprocessor,
            features,
            season,
            clean,
            threshold,
            out,
        } => {
            let m = TrainedModel::from_json(&fs::read_to_string(&model)?)?;
            let p = Preprocessor::from_json(&fs::read_to_string(&preprocessor)?)?;
            let table = FeatureTable::load(&features)?;
            let idx: Vec<usize> = (0..table.len()).filter(|&k| table.seasons[k] == season).collect();
            if idx.is_empty() {
                bail!("no rows of season {season} in {}", features.display());
            }
            let rows = table.select(&idx);
            let data = p.transform(&rows)?;
            let scores = m.predict_scores(&data)?;
            let mut report = EvaluationReport::new(m.kind().label(), &data.y, &scores, threshold)?;
            if let Some(dir) = clean {
                let corpus = CleanCorpus::load(&dir)?;
                let outcomes = row_outcomes(&rows, &predict_labels(&scores, threshold), &corpus)?;
                report.impact = Some(impact_report(&outcomes, &grid_prices(&corpus))?);
            }
            let reports = [report];
            print!("{}", render_comparison(&format!("Season {season}"), &reports));
            if let Some(o) = out {
                fs::write(o, comparison_csv(&season.to_string(), &reports))?;
            }
        }
        Command::RunAll { config, out } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let a = run_pipeline(&cfg)?;
            println!("wrote run artifacts to {}", a.output_dir.display());
            print!("{}", fs::read_to_string(a.output_dir.join("report.txt"))?);
        }
        Command::Serve { run, bind } => {
            let store = DecisionStore::open(&run.join("decisions.json"), &run.join("overrides.jsonl"))
                .with_context(|| format!("opening run {}", run.display()))?;
            log::info!("serving {} grid decisions on http://{bind}", store.len());
            let app = service::router(Arc::new(RwLock::new(store)));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(bind).await?;
                axum::serve(listener, app).await
            })?;
        }
    }
    Ok(())
}
