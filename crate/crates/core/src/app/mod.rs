//! Pipeline orchestration and the planner decision layer.

pub mod config;
pub mod decision;
pub mod pipeline;

pub use config::{CorpusSource, PipelineConfig, StageConfig, TuningConfig};
pub use decision::{
    build_decisions, export_table, Action, CellDecision, CellKpis, CellOverride, DecisionStore, GridDecision, GridKey,
    JournalEntry, WhatIf,
};
pub use pipeline::{run_pipeline, RunArtifacts, StageOutcome};
