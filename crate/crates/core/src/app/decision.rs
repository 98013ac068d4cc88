//! Planner-facing grid decisions: model picks under a cap or threshold,
//! planner overrides, what-if re-selection, the override journal and the
//! selection export.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{Extension, SeasonCode};
use crate::error::{Error, Result};
use crate::features::{FeatureTable, KPI_FEATURES, POSITIONS};
use crate::features::neighbors::{ring_offsets, Circle};
use crate::ingest::CleanCorpus;
use crate::table::{schema, RawTable};

/// Address of one grid decision.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridKey {
    pub season: SeasonCode,
    pub planning_group: String,
    pub grid: String,
}

impl std::fmt::Display for GridKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.season, self.planning_group, self.grid)
    }
}

/// Rolled KPI layers of a cell as shown on the grid heat map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellKpis {
    pub adjusted_demand: f64,
    pub sell_out: Option<f64>,
    pub sell_through: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDecision {
    pub i: usize,
    pub j: usize,
    pub size: String,
    pub dim1: String,
    pub dim2: Option<String>,
    pub score: f64,
    /// Distance-weighted adjusted demand of the circle-1 neighbours.
    pub weighted_demand: f64,
    pub kpis: CellKpis,
    pub model_selected: bool,
    pub planner_override: Option<bool>,
    #[serde(rename = "final")]
    pub final_: bool,
}

/// Per-cell scores and selections of one (season, planning group, grid).
/// Cells are in grid order (second dimension outer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDecision {
    pub season: SeasonCode,
    pub planning_group: String,
    pub grid: String,
    pub dim1_values: Vec<String>,
    pub dim2_values: Vec<String>,
    pub cap: Option<usize>,
    /// Minimum score for a model pick; `None` ranks by score alone.
    pub threshold: Option<f64>,
    pub cells: Vec<CellDecision>,
}

/// A hypothetical re-selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WhatIf {
    /// The `k` best cells, overrides included.
    Cap(usize),
    /// Cells scoring at least `t`, within the current cap.
    Threshold(f64),
}

/// One planner change of a single cell; `value = None` clears it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellOverride {
    pub i: usize,
    pub j: usize,
    pub value: Option<bool>,
}

impl GridDecision {
    pub fn key(&self) -> GridKey {
        GridKey {
            season: self.season,
            planning_group: self.planning_group.clone(),
            grid: self.grid.clone(),
        }
    }

    pub fn width(&self) -> usize {
        self.dim1_values.len()
    }

    pub fn height(&self) -> usize {
        self.dim2_values.len().max(1)
    }

    pub fn selected_count(&self) -> usize {
        self.cells.iter().filter(|c| c.final_).count()
    }

    /// Cells forced on by an override.
    pub fn pinned(&self) -> usize {
        self.cells.iter().filter(|c| c.planner_override == Some(true)).count()
    }

    pub fn cell_index(&self, i: usize, j: usize) -> Result<usize> {
        if i < self.width() && j < self.height() {
            Ok(j * self.width() + i)
        } else {
            Err(Error::Validation(format!(
                "cell ({i}, {j}) is outside the {}x{} grid {}",
                self.width(),
                self.height(),
                self.grid
            )))
        }
    }

    /// Cell positions best first: score, then circle-1 weighted demand,
    /// both descending, then grid order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.cells.len()).collect();
        order.sort_by(|&a, &b| {
            let (x, y) = (&self.cells[a], &self.cells[b]);
            y.score
                .total_cmp(&x.score)
                .then(y.weighted_demand.total_cmp(&x.weighted_demand))
                .then(a.cmp(&b))
        });
        order
    }

    /// Recomputes model picks from the stored scores, threshold and cap.
    /// Pinned cells take cap slots first; the rest go to the best
    /// non-overridden cells. Overridden cells report the pick the model
    /// would make without any overrides.
    pub fn reselect(&mut self) -> Result<()> {
        let pinned = self.pinned();
        if let Some(cap) = self.cap {
            if pinned > cap {
                return Err(Error::CapBelowOverrides { cap, pinned });
            }
        }
        let eligible = |c: &CellDecision| self.threshold.is_none_or(|t| c.score >= t);
        let order = self.ranking();
        let mut free = vec![false; self.cells.len()];
        let mut plain = vec![false; self.cells.len()];
        let mut budget = self.cap.map(|c| c - pinned);
        let mut plain_budget = self.cap;
        for &k in &order {
            let c = &self.cells[k];
            if !eligible(c) {
                continue;
            }
            if plain_budget != Some(0) {
                plain[k] = true;
                plain_budget = plain_budget.map(|b| b - 1);
            }
            if c.planner_override.is_none() && budget != Some(0) {
                free[k] = true;
                budget = budget.map(|b| b - 1);
            }
        }
        for (k, c) in self.cells.iter_mut().enumerate() {
            c.model_selected = if c.planner_override.is_some() { plain[k] } else { free[k] };
            c.final_ = c.planner_override.unwrap_or(c.model_selected);
        }
        Ok(())
    }

    /// Applies planner changes without moving model picks. Fails with
    /// `CapViolation` when the final selection would exceed the cap.
    pub fn apply_overrides(&mut self, changes: &[CellOverride]) -> Result<()> {
        let mut next = self.clone();
        for ch in changes {
            let k = next.cell_index(ch.i, ch.j)?;
            let c = &mut next.cells[k];
            c.planner_override = ch.value;
            c.final_ = ch.value.unwrap_or(c.model_selected);
        }
        if let Some(cap) = next.cap {
            let selected = next.selected_count();
            if selected > cap {
                return Err(Error::CapViolation { selected, cap });
            }
        }
        *self = next;
        Ok(())
    }

    /// Sets or clears the cap and re-selects under the current threshold.
    pub fn set_cap(&mut self, cap: Option<usize>) -> Result<()> {
        let mut next = self.clone();
        next.cap = cap;
        next.reselect()?;
        *self = next;
        Ok(())
    }

    /// The decision re-selected under a hypothetical cap or threshold.
    pub fn what_if(&self, w: WhatIf) -> Result<GridDecision> {
        let mut next = self.clone();
        match w {
            WhatIf::Cap(k) => {
                next.cap = Some(k);
                next.threshold = None;
            }
            WhatIf::Threshold(t) => {
                if !(0.0..=1.0).contains(&t) {
                    return Err(Error::Validation(format!("threshold {t} is outside [0, 1]")));
                }
                next.threshold = Some(t);
            }
        }
        next.reselect()?;
        Ok(next)
    }

    pub fn check_invariants(&self) -> Result<()> {
        for c in &self.cells {
            if c.final_ != c.planner_override.unwrap_or(c.model_selected) {
                return Err(Error::Validation(format!("cell {} final flag disagrees with its inputs", c.size)));
            }
        }
        if let Some(cap) = self.cap {
            let selected = self.selected_count();
            if selected > cap {
                return Err(Error::CapViolation { selected, cap });
            }
        }
        Ok(())
    }
}

/// Column of the continuous block holding `kpi` at neighbour position `pos`.
fn continuous_col(kpi: &str, pos: usize) -> usize {
    let k = KPI_FEATURES.iter().position(|n| *n == kpi).expect("known KPI feature");
    k * POSITIONS + pos
}

/// Builds one decision per (season, planning group, grid) present in
/// `rows`, scored by `scores`. High (H) grids get `retail_cap`.
pub fn build_decisions(
    rows: &FeatureTable,
    scores: &[f64],
    corpus: &CleanCorpus,
    threshold: f64,
    retail_cap: usize,
) -> Result<Vec<GridDecision>> {
    if rows.len() != scores.len() {
        return Err(Error::LengthMismatch(rows.len(), scores.len()));
    }
    let col = |name: &str| {
        crate::features::CATEGORICAL_COLUMNS
            .iter()
            .position(|c| *c == name)
            .expect("categorical column")
    };
    let (c_grid, c_dim1, c_dim2, c_pg) = (col("grid_name"), col("dim1"), col("dim2"), col("planning_group"));
    let circle1 = ring_offsets(Circle::First).len();

    let mut out: BTreeMap<GridKey, GridDecision> = BTreeMap::new();
    for (k, &score) in scores.iter().enumerate() {
        let key = GridKey {
            season: rows.seasons[k],
            planning_group: rows.category(k, c_pg).to_string(),
            grid: rows.category(k, c_grid).to_string(),
        };
        let g = corpus
            .grid_index(&key.grid)
            .ok_or_else(|| Error::NotFound(format!("grid {}", key.grid)))?;
        let grid = &corpus.grids[g as usize];
        let dim2 = rows.category(k, c_dim2);
        let dim2 = (!dim2.is_empty()).then_some(dim2);
        let cell = grid
            .find(rows.category(k, c_dim1), dim2)
            .ok_or_else(|| Error::NotFound(format!("cell {}{} of grid {}", rows.category(k, c_dim1), dim2.unwrap_or(""), key.grid)))?;
        let cont = rows.continuous_row(k);
        let flags = rows.flag_row(k);
        // Flag layout: sell_out positions, then stock positions.
        let so_missing = flags[0] == 1;
        let stock_missing = flags[POSITIONS] == 1;
        let kpis = CellKpis {
            adjusted_demand: cont[continuous_col("adjusted_demand", 0)],
            sell_out: (!so_missing).then(|| cont[continuous_col("sell_out", 0)]),
            sell_through: (!so_missing && !stock_missing).then(|| cont[continuous_col("sell_through", 0)]),
        };
        let weighted_demand = (1..=circle1).map(|p| cont[continuous_col("adjusted_demand", p)]).sum();
        let d = out.entry(key.clone()).or_insert_with(|| GridDecision {
            season: key.season,
            planning_group: key.planning_group.clone(),
            grid: key.grid.clone(),
            dim1_values: grid.dim1_values().to_vec(),
            dim2_values: grid.dim2_values().to_vec(),
            cap: (grid.name.extension == Extension::High).then_some(retail_cap),
            threshold: Some(threshold),
            cells: Vec::new(),
        });
        d.cells.push(CellDecision {
            i: cell.i,
            j: cell.j,
            size: cell.token(),
            dim1: cell.dim1.clone(),
            dim2: cell.dim2.clone(),
            score,
            weighted_demand,
            kpis,
            model_selected: false,
            planner_override: None,
            final_: false,
        });
    }
    let mut decisions: Vec<GridDecision> = out.into_values().collect();
    for d in &mut decisions {
        let w = d.width();
        d.cells.sort_by_key(|c| c.j * w + c.i);
        if d.cells.len() != d.width() * d.height() {
            return Err(Error::Validation(format!(
                "grid {} has {} scored cells, expected {}",
                d.key(),
                d.cells.len(),
                d.width() * d.height()
            )));
        }
        d.reselect()?;
    }
    Ok(decisions)
}

/// A change to one grid, as journaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Overrides { changes: Vec<CellOverride> },
    Cap { cap: Option<usize> },
    WhatIf { what_if: WhatIf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub key: GridKey,
    #[serde(flatten)]
    pub action: Action,
}

/// All decisions of one run plus an append-only JSON-lines journal of
/// committed changes.
#[derive(Debug, Clone, Default)]
pub struct DecisionStore {
    decisions: BTreeMap<GridKey, GridDecision>,
    journal: Option<PathBuf>,
}

impl DecisionStore {
    pub fn new(decisions: Vec<GridDecision>) -> DecisionStore {
        DecisionStore {
            decisions: decisions.into_iter().map(|d| (d.key(), d)).collect(),
            journal: None,
        }
    }

    /// Loads decisions and replays the journal when it exists. Later
    /// changes are appended to it.
    pub fn open(decisions_path: &Path, journal: &Path) -> Result<DecisionStore> {
        let text = fs::read_to_string(decisions_path).map_err(|e| Error::io(decisions_path, e))?;
        let decisions: Vec<GridDecision> = serde_json::from_str(&text)?;
        let mut store = DecisionStore::new(decisions);
        if journal.exists() {
            let f = fs::File::open(journal).map_err(|e| Error::io(journal, e))?;
            for (n, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| Error::io(journal, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: JournalEntry = serde_json::from_str(&line)
                    .map_err(|e| Error::Serde(format!("journal line {}: {e}", n + 1)))?;
                store.apply_in_memory(&entry)?;
            }
        }
        store.journal = Some(journal.to_path_buf());
        Ok(store)
    }

    pub fn keys(&self) -> impl Iterator<Item = &GridKey> {
        self.decisions.keys()
    }

    pub fn decisions(&self) -> impl Iterator<Item = &GridDecision> {
        self.decisions.values()
    }

    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }

    pub fn get(&self, key: &GridKey) -> Result<&GridDecision> {
        self.decisions
            .get(key)
            .ok_or_else(|| Error::NotFound(format!("grid decision {key}")))
    }

    fn apply_in_memory(&mut self, entry: &JournalEntry) -> Result<&GridDecision> {
        let d = self
            .decisions
            .get_mut(&entry.key)
            .ok_or_else(|| Error::NotFound(format!("grid decision {}", entry.key)))?;
        match &entry.action {
            Action::Overrides { changes } => d.apply_overrides(changes)?,
            Action::Cap { cap } => d.set_cap(*cap)?,
            Action::WhatIf { what_if } => *d = d.what_if(*what_if)?,
        }
        Ok(d)
    }

    /// Applies a change and journals it; failed changes leave no trace.
    pub fn apply(&mut self, entry: JournalEntry) -> Result<&GridDecision> {
        let mut line = serde_json::to_string(&entry)?;
        line.push('\n');
        self.apply_in_memory(&entry)?;
        if let Some(path) = &self.journal {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
        }
        self.get(&entry.key)
    }

    /// Final selections in the selection-history CSV dialect.
    pub fn export(&self) -> RawTable {
        export_table(self.decisions.values())
    }
}

/// One row per finally selected cell, in key then grid order.
pub fn export_table<'a>(decisions: impl IntoIterator<Item = &'a GridDecision>) -> RawTable {
    let mut t = RawTable::new(schema::SELECTION_HISTORY);
    for d in decisions {
        for c in d.cells.iter().filter(|c| c.final_) {
            t.push(vec![
                d.season.to_string(),
                d.planning_group.clone(),
                d.grid.clone(),
                c.size.clone(),
            ]);
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(scores: &[f64], width: usize, cap: Option<usize>) -> GridDecision {
        let height = scores.len() / width;
        let mut d = GridDecision {
            season: "203".parse().unwrap(),
            planning_group: "PG".into(),
            grid: "MB-511-H".into(),
            dim1_values: (0..width).map(|i| format!("{}", 28 + i)).collect(),
            dim2_values: if height > 1 {
                (0..height).map(|j| format!("{}", 30 + j)).collect()
            } else {
                Vec::new()
            },
            cap,
            threshold: Some(0.5),
            cells: scores
                .iter()
                .enumerate()
                .map(|(k, &s)| CellDecision {
                    i: k % width,
                    j: k / width,
                    size: format!("s{k}"),
                    dim1: format!("{}", 28 + k % width),
                    dim2: (height > 1).then(|| format!("{}", 30 + k / width)),
                    score: s,
                    weighted_demand: 0.0,
                    kpis: CellKpis {
                        adjusted_demand: 0.0,
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

    fn forty() -> GridDecision {
        let scores: Vec<f64> = (0..40).map(|k| ((k * 17) % 40) as f64 / 40.0 + 0.01).collect();
        grid(&scores, 8, Some(24))
    }

    fn finals(d: &GridDecision) -> Vec<bool> {
        d.cells.iter().map(|c| c.final_).collect()
    }

    #[test]
    fn threshold_selection_respects_cap() {
        let d = forty();
        assert_eq!(d.selected_count(), 20);
        assert!(d.cells.iter().all(|c| c.model_selected == (c.score >= 0.5)));
        d.check_invariants().unwrap();
    }

    #[test]
    fn cap_of_all_cells_selects_everything() {
        let d = forty().what_if(WhatIf::Cap(40)).unwrap();
        assert!(d.cells.iter().all(|c| c.final_));
    }

    #[test]
    fn cap_24_takes_the_24_best_scores() {
        let d = forty();
        let w = d.what_if(WhatIf::Cap(24)).unwrap();
        let mut scores: Vec<f64> = d.cells.iter().map(|c| c.score).collect();
        scores.sort_by(|a, b| b.total_cmp(a));
        let cut = scores[23];
        assert_eq!(w.selected_count(), 24);
        assert!(w.cells.iter().all(|c| c.final_ == (c.score >= cut)));
    }

    #[test]
    fn default_threshold_reproduces_model_flags() {
        let d = forty();
        let w = d.what_if(WhatIf::Threshold(0.5)).unwrap();
        assert_eq!(finals(&w), d.cells.iter().map(|c| c.model_selected).collect::<Vec<_>>());
    }

    #[test]
    fn ties_at_the_cap_go_to_neighbour_demand_then_grid_order() {
        let mut d = grid(&[0.9, 0.9, 0.9, 0.9], 4, Some(2));
        d.cells[2].weighted_demand = 5.0;
        d.reselect().unwrap();
        assert_eq!(finals(&d), vec![true, false, true, false]);
    }

    #[test]
    fn override_beyond_cap_is_rejected_without_change() {
        let mut d = forty().what_if(WhatIf::Cap(24)).unwrap();
        let before = d.clone();
        let off = d.cells.iter().find(|c| !c.final_).unwrap();
        let (i, j) = (off.i, off.j);
        let err = d
            .apply_overrides(&[CellOverride {
                i,
                j,
                value: Some(true),
            }])
            .unwrap_err();
        assert!(matches!(err, Error::CapViolation { selected: 25, cap: 24 }));
        assert_eq!(d, before);
    }

    #[test]
    fn override_keeps_model_picks_and_round_trips() {
        let mut d = forty();
        let on = d.cells.iter().position(|c| !c.final_).unwrap();
        let (i, j) = (d.cells[on].i, d.cells[on].j);
        let picks: Vec<bool> = d.cells.iter().map(|c| c.model_selected).collect();
        d.apply_overrides(&[CellOverride {
            i,
            j,
            value: Some(true),
        }])
        .unwrap();
        assert!(d.cells[on].final_);
        assert_eq!(d.cells.iter().map(|c| c.model_selected).collect::<Vec<_>>(), picks);
        d.apply_overrides(&[CellOverride { i, j, value: None }]).unwrap();
        assert!(!d.cells[on].final_);
        d.check_invariants().unwrap();
    }

    #[test]
    fn pinned_cells_count_against_what_if_cap() {
        let mut d = forty();
        let low: Vec<(usize, usize)> = d.cells.iter().filter(|c| c.score < 0.1).map(|c| (c.i, c.j)).collect();
        let changes: Vec<CellOverride> = low
            .iter()
            .map(|&(i, j)| CellOverride {
                i,
                j,
                value: Some(true),
            })
            .collect();
        d.apply_overrides(&changes).unwrap();
        let w = d.what_if(WhatIf::Cap(10)).unwrap();
        assert_eq!(w.selected_count(), 10);
        assert!(low.iter().all(|&(i, j)| w.cells[w.cell_index(i, j).unwrap()].final_));
        let err = d.what_if(WhatIf::Cap(low.len() - 1)).unwrap_err();
        assert!(matches!(err, Error::CapBelowOverrides { .. }));
    }

    #[test]
    fn bad_inputs_are_validation_errors() {
        let d = forty();
        assert!(matches!(d.what_if(WhatIf::Threshold(1.5)), Err(Error::Validation(_))));
        assert!(matches!(d.cell_index(8, 0), Err(Error::Validation(_))));
    }

    #[test]
    fn json_uses_stable_field_names() {
        let v = serde_json::to_value(forty()).unwrap();
        for f in ["grid", "cells", "cap"] {
            assert!(v.get(f).is_some(), "{f}");
        }
        for f in ["score", "final"] {
            assert!(v["cells"][0].get(f).is_some(), "{f}");
        }
    }

    #[test]
    fn journal_replay_restores_state_and_export_matches() {
        let dir = tempfile::tempdir().unwrap();
        let dpath = dir.path().join("decisions.json");
        let jpath = dir.path().join("journal.jsonl");
        let d = forty();
        let key = d.key();
        fs::write(&dpath, serde_json::to_string(&vec![d]).unwrap()).unwrap();
        let mut store = DecisionStore::open(&dpath, &jpath).unwrap();
        store
            .apply(JournalEntry {
                key: key.clone(),
                action: Action::WhatIf {
                    what_if: WhatIf::Cap(24),
                },
            })
            .unwrap();
        let first_off = store.get(&key).unwrap().cells.iter().find(|c| c.final_).map(|c| (c.i, c.j)).unwrap();
        store
            .apply(JournalEntry {
                key: key.clone(),
                action: Action::Overrides {
                    changes: vec![CellOverride {
                        i: first_off.0,
                        j: first_off.1,
                        value: Some(false),
                    }],
                },
            })
            .unwrap();
        assert!(store
            .apply(JournalEntry {
                key: key.clone(),
                action: Action::Cap { cap: Some(0) },
            })
            .is_ok());
        let replayed = DecisionStore::open(&dpath, &jpath).unwrap();
        assert_eq!(replayed.get(&key).unwrap(), store.get(&key).unwrap());
        assert_eq!(replayed.export().to_csv_bytes(), store.export().to_csv_bytes());
        assert_eq!(fs::read_to_string(&jpath).unwrap().lines().count(), 3);
    }

    proptest! {
        #[test]
        fn what_if_is_idempotent_and_capped(
            scores in prop::collection::vec(0.0f64..1.0, 12),
            cap in 0usize..13,
            t in 0.0f64..1.0,
        ) {
            let d = grid(&scores, 4, Some(12));
            let a = d.what_if(WhatIf::Cap(cap)).unwrap();
            prop_assert_eq!(&a.what_if(WhatIf::Cap(cap)).unwrap(), &a);
            prop_assert!(a.selected_count() <= cap);
            let b = a.what_if(WhatIf::Threshold(t)).unwrap();
            prop_assert_eq!(&b.what_if(WhatIf::Threshold(t)).unwrap(), &b);
            prop_assert!(b.selected_count() <= cap);
            b.check_invariants().unwrap();
        }
    }
}
