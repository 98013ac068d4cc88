//! Grid-level KPI records, rolling windows and sell-through.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{previous_seasons, SeasonCode};
use crate::ingest::KpiValues;

/// A (season, planning group, grid, cell) address. Planning group and grid
/// are positions in the clean corpus; cell is the position in the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub season: SeasonCode,
    pub planning_group: u16,
    pub grid: u16,
    pub cell: u16,
}

impl CellKey {
    pub fn series(&self) -> (u16, u16, u16) {
        (self.planning_group, self.grid, self.cell)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpiRecord {
    pub key: CellKey,
    pub adjusted_demand: Option<f64>,
    pub sell_out: Option<f64>,
    pub stock: Option<f64>,
    pub sell_through: Option<f64>,
}

impl KpiRecord {
    pub fn new(key: CellKey, v: KpiValues) -> KpiRecord {
        KpiRecord {
            key,
            adjusted_demand: v.adjusted_demand,
            sell_out: v.sell_out,
            stock: v.stock,
            sell_through: compute_sell_through(v.sell_out, v.stock),
        }
    }
}

/// Sell-out / (sell-out + leftover stock). Missing when either input is
/// missing or both are zero.
pub fn compute_sell_through(sell_out: Option<f64>, leftover: Option<f64>) -> Option<f64> {
    let (so, st) = (sell_out?, leftover?);
    let denom = so + st;
    (denom > 0.0).then(|| so / denom)
}

fn add(acc: Option<f64>, v: Option<f64>) -> Option<f64> {
    match (acc, v) {
        (None, v) => v,
        (a, None) => a,
        (Some(a), Some(b)) => Some(a + b),
    }
}

/// Sums each series over the `window` seasons before every season in `at`.
/// A quantity stays missing only when every entry of its window is missing;
/// sell-through is recomputed from the rolled sell-out and stock. Output is
/// sorted by key and contains only records with at least one present quantity.
pub fn rolling_aggregate(records: &[KpiRecord], window: usize, at: &[SeasonCode]) -> Vec<KpiRecord> {
    let mut series: BTreeMap<(u16, u16, u16), BTreeMap<SeasonCode, &KpiRecord>> = BTreeMap::new();
    for r in records {
        series.entry(r.key.series()).or_default().insert(r.key.season, r);
    }
    let windows: Vec<(SeasonCode, Vec<SeasonCode>)> =
        at.iter().map(|&s| (s, previous_seasons(s, window))).collect();
    let mut out = Vec::new();
    for ((p, g, c), by_season) in &series {
        for (s, prev) in &windows {
            let mut ad = None;
            let mut so = None;
            let mut st = None;
            for w in prev {
                if let Some(r) = by_season.get(w) {
                    ad = add(ad, r.adjusted_demand);
                    so = add(so, r.sell_out);
                    st = add(st, r.stock);
                }
            }
            if ad.is_none() && so.is_none() && st.is_none() {
                continue;
            }
            out.push(KpiRecord {
                key: CellKey {
                    season: *s,
                    planning_group: *p,
                    grid: *g,
                    cell: *c,
                },
                adjusted_demand: ad,
                sell_out: so,
                stock: st,
                sell_through: compute_sell_through(so, st),
            });
        }
    }
    out.sort_by_key(|r| r.key);
    out
}
