use std::sync::{Arc, RwLock};

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use sizegrid_cli::service::router;
use sizegrid_core::app::{CellDecision, CellKpis, DecisionStore, GridDecision};
use tower::ServiceExt;

/// A 40-cell (8 x 5) H grid with distinct scores, 20 of them at least 0.5.
fn forty_cell_grid() -> GridDecision {
    let (w, h) = (8, 5);
    let mut d = GridDecision {
        season: "203".parse().unwrap(),
        planning_group: "Retail North".into(),
        grid: "MB-511-H".into(),
        dim1_values: (0..w).map(|i| (28 + 2 * i).to_string()).collect(),
        dim2_values: (0..h).map(|j| (30 + 2 * j).to_string()).collect(),
        cap: Some(24),
        threshold: Some(0.5),
        cells: (0..w * h)
            .map(|k| CellDecision {
                i: k % w,
                j: k / w,
                size: format!("{}{}", 28 + 2 * (k % w), 30 + 2 * (k / w)),
                dim1: (28 + 2 * (k % w)).to_string(),
                dim2: Some((30 + 2 * (k / w)).to_string()),
                score: ((k * 17) % 40) as f64 / 40.0 + 0.01,
                weighted_demand: k as f64,
                kpis: CellKpis {
                    adjusted_demand: 10.0 * k as f64,
                    sell_out: None,
                    sell_through: None,
                },
                model_selected: false,
                planner_override: None,
                final_: false,
            })
            .collect(),
    };
    d.reselect().unwrap();
    d
}

fn store_in(dir: &std::path::Path) -> Router {
    let dpath = dir.join("decisions.json");
    std::fs::write(&dpath, serde_json::to_string(&vec![forty_cell_grid()]).unwrap()).unwrap();
    let store = DecisionStore::open(&dpath, &dir.join("overrides.jsonl")).unwrap();
    router(Arc::new(RwLock::new(store)))
}

const GRID: &str = "/grids/203/Retail%20North/MB-511-H";

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
}

async fn json_call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap())
}

fn finals(v: &Value) -> Vec<bool> {
    v["cells"].as_array().unwrap().iter().map(|c| c["final"].as_bool().unwrap()).collect()
}

#[tokio::test]
async fn list_and_fetch_expose_stable_fields() {
    let dir = tempfile::tempdir().unwrap();
    let app = store_in(dir.path());
    let (s, list) = json_call(&app, Method::GET, "/grids", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(list[0]["grid"], "MB-511-H");
    assert_eq!(list[0]["n_cells"], 40);

    let (s, g) = json_call(&app, Method::GET, GRID, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(g["grid"], "MB-511-H");
    assert_eq!(g["cap"], 24);
    assert_eq!(g["cells"].as_array().unwrap().len(), 40);
    for f in ["score", "final", "model_selected", "planner_override", "kpis"] {
        assert!(g["cells"][0].get(f).is_some(), "{f}");
    }
}

#[tokio::test]
async fn gets_have_no_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    let app = store_in(dir.path());
    let (_, a) = call(&app, Method::GET, GRID, None).await;
    let _ = call(&app, Method::POST, &format!("{GRID}/what-if"), Some(json!({ "cap": 3 }))).await;
    let _ = call(&app, Method::GET, "/export", None).await;
    let (_, b) = call(&app, Method::GET, GRID, None).await;
    assert_eq!(a, b);
    assert!(!dir.path().join("overrides.jsonl").exists());
}

#[tokio::test]
async fn override_round_trips_and_export_follows() {
    let dir = tempfile::tempdir().unwrap();
    let app = store_in(dir.path());
    let (_, g) = json_call(&app, Method::GET, GRID, None).await;
    let off = g["cells"].as_array().unwrap().iter().position(|c| c["final"] == false).unwrap();
    let (i, j) = (off % 8, off / 8);
    let (s, posted) = json_call(
        &app,
        Method::POST,
        &format!("{GRID}/overrides"),
        Some(json!({ "changes": [{ "i": i, "j": j, "value": true }] })),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let (_, fetched) = json_call(&app, Method::GET, GRID, None).await;
    assert_eq!(posted, fetched);
    assert_eq!(fetched["cells"][off]["planner_override"], true);
    assert_eq!(fetched["cells"][off]["final"], true);

    let (s, csv) = call(&app, Method::GET, "/export", None).await;
    assert_eq!(s, StatusCode::OK);
    let text = String::from_utf8(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "season,planning_group,grid_name,size");
    assert_eq!(lines.len() - 1, finals(&fetched).iter().filter(|&&f| f).count());
    let size = fetched["cells"][off]["size"].as_str().unwrap();
    assert!(lines.contains(&format!("203,Retail North,MB-511-H,{size}").as_str()));
}

#[tokio::test]
async fn adding_beyond_cap_24_is_a_cap_violation() {
    let dir = tempfile::tempdir().unwrap();
    let app = store_in(dir.path());
    let (s, g) = json_call(&app, Method::POST, &format!("{GRID}/what-if"), Some(json!({ "cap": 24, "commit": true }))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(finals(&g).iter().filter(|&&f| f).count(), 24);
    let off = finals(&g).iter().position(|f| !f).unwrap();
    let (s, err) = json_call(
        &app,
        Method::POST,
        &format!("{GRID}/overrides"),
        Some(json!({ "changes": [{ "i": off % 8, "j": off / 8, "value": true }] })),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(err["error"], "cap_violation");
    let (_, after) = json_call(&app, Method::GET, GRID, None).await;
    assert_eq!(finals(&after), finals(&g));
}

#[tokio::test]
async fn what_if_previews_and_commits() {
    let dir = tempfile::tempdir().unwrap();
    let app = store_in(dir.path());
    let (_, base) = json_call(&app, Method::GET, GRID, None).await;
    let (s, all) = json_call(&app, Method::POST, &format!("{GRID}/what-if"), Some(json!({ "cap": 40 }))).await;
    assert_eq!(s, StatusCode::OK);
    assert!(finals(&all).iter().all(|&f| f));
    let (_, half) = json_call(&app, Method::POST, &format!("{GRID}/what-if"), Some(json!({ "threshold": 0.5 }))).await;
    assert_eq!(finals(&half), finals(&base));

    let (s, _) = json_call(&app, Method::PUT, &format!("{GRID}/cap"), Some(json!({ "cap": 5 }))).await;
    assert_eq!(s, StatusCode::OK);
    let (_, capped) = json_call(&app, Method::GET, GRID, None).await;
    assert_eq!(capped["cap"], 5);
    assert_eq!(finals(&capped).iter().filter(|&&f| f).count(), 5);
    let journal = std::fs::read_to_string(dir.path().join("overrides.jsonl")).unwrap();
    assert_eq!(journal.lines().count(), 1);
}

#[tokio::test]
async fn errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let app = store_in(dir.path());
    let (s, e) = json_call(&app, Method::GET, "/grids/203/Nobody/MB-511-H", None).await;
    assert_eq!((s, e["error"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
    let (s, _) = json_call(&app, Method::GET, "/grids/205/Retail%20North/MB-511-H", None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = json_call(&app, Method::POST, &format!("{GRID}/what-if"), Some(json!({ "cap": 3, "threshold": 0.2 }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = json_call(
        &app,
        Method::POST,
        &format!("{GRID}/overrides"),
        Some(json!({ "changes": [{ "i": 8, "j": 0, "value": true }] })),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let pins: Vec<Value> = (0..3).map(|i| json!({ "i": i, "j": 4, "value": true })).collect();
    let _ = call(&app, Method::PUT, &format!("{GRID}/cap"), Some(json!({ "cap": null }))).await;
    let (s, _) = json_call(&app, Method::POST, &format!("{GRID}/overrides"), Some(json!({ "changes": pins }))).await;
    assert_eq!(s, StatusCode::OK);
    let (s, e) = json_call(&app, Method::PUT, &format!("{GRID}/cap"), Some(json!({ "cap": 2 }))).await;
    assert_eq!((s, e["error"].as_str()), (StatusCode::CONFLICT, Some("cap_below_overrides")));
}
