//! Size-grid selection engine: synthetic corpus generation, ingestion and
//! cleaning, grid-neighbour feature engineering, preprocessing, classifiers,
//! evaluation and the planner-facing decision layer.

pub mod app;
pub mod classifiers;
pub mod domain;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod ingest;
pub mod preprocess;
pub mod rng;
pub mod synth;
pub mod table;

pub use domain::{
    parse_grid_name, parse_season, previous_seasons, Category, Channel, Extension, Gender, Half,
    PlanningGroup, SeasonCode, SizeCell, SizeGrid, SizeGridName,
};
pub use error::{Error, Result};
