//! HTTP+JSON service over the grid decisions of one completed run.

use std::sync::{Arc, RwLock};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sizegrid_core::app::{Action, CellOverride, DecisionStore, GridDecision, GridKey, JournalEntry, WhatIf};
use sizegrid_core::Error;

pub type SharedStore = Arc<RwLock<DecisionStore>>;

pub fn router(store: SharedStore) -> Router {
    Router::new()
        .route("/grids", get(list_grids))
        .route("/grids/{season}/{planning_group}/{grid}", get(get_grid))
        .route("/grids/{season}/{planning_group}/{grid}/overrides", post(post_overrides))
        .route("/grids/{season}/{planning_group}/{grid}/cap", put(put_cap))
        .route("/grids/{season}/{planning_group}/{grid}/what-if", post(post_what_if))
        .route("/export", get(export))
        .with_state(store)
}

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, error) = match &self.0 {
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::CapViolation { .. } => (StatusCode::CONFLICT, "cap_violation"),
            Error::CapBelowOverrides { .. } => (StatusCode::CONFLICT, "cap_below_overrides"),
            Error::Validation(_) | Error::MalformedSeason(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation_error"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let body = ErrorBody {
            error,
            message: self.0.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn key(season: &str, planning_group: String, grid: String) -> ApiResult<GridKey> {
    let season = season
        .parse()
        .map_err(|_| Error::Validation(format!("{season:?} is not a season code")))?;
    Ok(GridKey {
        season,
        planning_group,
        grid,
    })
}

fn read(store: &SharedStore) -> std::sync::RwLockReadGuard<'_, DecisionStore> {
    store.read().unwrap_or_else(|e| e.into_inner())
}

fn write(store: &SharedStore) -> std::sync::RwLockWriteGuard<'_, DecisionStore> {
    store.write().unwrap_or_else(|e| e.into_inner())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub season: String,
    pub planning_group: String,
    pub grid: String,
    pub n_cells: usize,
    pub selected: usize,
    pub cap: Option<usize>,
}

async fn list_grids(State(store): State<SharedStore>) -> Json<Vec<GridSummary>> {
    let s = read(&store);
    Json(
        s.decisions()
            .map(|d| GridSummary {
                season: d.season.to_string(),
                planning_group: d.planning_group.clone(),
                grid: d.grid.clone(),
                n_cells: d.cells.len(),
                selected: d.selected_count(),
                cap: d.cap,
            })
            .collect(),
    )
}

async fn get_grid(
    State(store): State<SharedStore>,
    Path((season, pg, grid)): Path<(String, String, String)>,
) -> ApiResult<Json<GridDecision>> {
    let k = key(&season, pg, grid)?;
    Ok(Json(read(&store).get(&k)?.clone()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverridesRequest {
    pub changes: Vec<CellOverride>,
}

async fn post_overrides(
    State(store): State<SharedStore>,
    Path((season, pg, grid)): Path<(String, String, String)>,
    Json(req): Json<OverridesRequest>,
) -> ApiResult<Json<GridDecision>> {
    let k = key(&season, pg, grid)?;
    let entry = JournalEntry {
        key: k,
        action: Action::Overrides { changes: req.changes },
    };
    Ok(Json(write(&store).apply(entry)?.clone()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapRequest {
    pub cap: Option<usize>,
}

async fn put_cap(
    State(store): State<SharedStore>,
    Path((season, pg, grid)): Path<(String, String, String)>,
    Json(req): Json<CapRequest>,
) -> ApiResult<Json<GridDecision>> {
    let k = key(&season, pg, grid)?;
    let entry = JournalEntry {
        key: k,
        action: Action::Cap { cap: req.cap },
    };
    Ok(Json(write(&store).apply(entry)?.clone()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    pub cap: Option<usize>,
    pub threshold: Option<f64>,
    /// Keep the result instead of only previewing it.
    #[serde(default)]
    pub commit: bool,
}

async fn post_what_if(
    State(store): State<SharedStore>,
    Path((season, pg, grid)): Path<(String, String, String)>,
    Json(req): Json<WhatIfRequest>,
) -> ApiResult<Json<GridDecision>> {
    let k = key(&season, pg, grid)?;
    let w = match (req.cap, req.threshold) {
        (Some(c), None) => WhatIf::Cap(c),
        (None, Some(t)) => WhatIf::Threshold(t),
        _ => return Err(Error::Validation("give exactly one of cap or threshold".into()).into()),
    };
    if req.commit {
        let entry = JournalEntry {
            key: k,
            action: Action::WhatIf { what_if: w },
        };
        Ok(Json(write(&store).apply(entry)?.clone()))
    } else {
        Ok(Json(read(&store).get(&k)?.what_if(w)?))
    }
}

async fn export(State(store): State<SharedStore>) -> impl IntoResponse {
    let bytes = read(&store).export().to_csv_bytes();
    ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], bytes)
}
