//! Cleaning, deduplication, product-to-grid mapping and selection history.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{
    normalize_size_token, parse_season, Category, Channel, Gender, PlanningGroup, SeasonCode,
    SizeGrid,
};
use crate::error::{Error, Result};
use crate::features::kpi::{CellKey, KpiRecord};
use crate::table::{load_table, schema, RawCorpus, RawTable, Schema, LIST_SEPARATOR};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestOptions {
    /// Field values treated as missing (compared after trimming).
    pub missing_tokens: Vec<String>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            missing_tokens: vec![String::new(), "NULL".to_string()],
        }
    }
}

impl IngestOptions {
    pub fn is_missing(&self, v: &str) -> bool {
        let v = v.trim();
        self.missing_tokens.iter().any(|t| t == v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KpiKind {
    Stock,
    SellOut,
    AdjustedDemand,
}

impl KpiKind {
    pub fn schema(self) -> Schema {
        match self {
            KpiKind::Stock => schema::STOCK,
            KpiKind::SellOut => schema::SELL_OUT,
            KpiKind::AdjustedDemand => schema::ADJUSTED_DEMAND,
        }
    }
}

/// Rows dropped per table and rule.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub tables: BTreeMap<String, TableReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableReport {
    pub rows_in: usize,
    pub rows_out: usize,
    pub dropped: BTreeMap<String, usize>,
}

impl TableReport {
    fn drop(&mut self, rule: &str) {
        *self.dropped.entry(rule.to_string()).or_default() += 1;
    }
}

impl CleaningReport {
    pub fn is_empty(&self) -> bool {
        self.tables.values().all(|t| t.dropped.is_empty())
    }

    pub fn merge(&mut self, other: CleaningReport) {
        for (name, t) in other.tables {
            let e = self.tables.entry(name).or_default();
            e.rows_in += t.rows_in;
            e.rows_out += t.rows_out;
            for (rule, n) in t.dropped {
                *e.dropped.entry(rule).or_default() += n;
            }
        }
    }

    pub fn total_dropped(&self) -> usize {
        self.tables.values().flat_map(|t| t.dropped.values()).sum()
    }
}

impl fmt::Display for CleaningReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, t) in &self.tables {
            writeln!(f, "{name}: {} rows in, {} rows out", t.rows_in, t.rows_out)?;
            for (rule, n) in &t.dropped {
                writeln!(f, "  dropped {n} ({rule})")?;
            }
        }
        Ok(())
    }
}

/// Removes rows with missing keys, normalizes size labels and, for stock and
/// sell-out, drops negative quantities.
pub fn clean_kpi_table(t: &RawTable, kind: KpiKind, opts: &IngestOptions) -> Result<(RawTable, TableReport)> {
    let t = t.clone().project(kind.schema())?;
    let mut report = TableReport {
        rows_in: t.len(),
        ..TableReport::default()
    };
    let mut out = RawTable::new(kind.schema());
    for row in t.rows {
        if opts.is_missing(&row[0]) {
            report.drop("missing_season");
            continue;
        }
        if opts.is_missing(&row[3]) {
            report.drop("missing_size");
            continue;
        }
        if opts.is_missing(&row[1]) {
            report.drop("missing_planning_group");
            continue;
        }
        if opts.is_missing(&row[2]) {
            report.drop("missing_product");
            continue;
        }
        let Ok(season) = row[0].trim().parse::<i64>().map_err(|_| ()).and_then(|c| parse_season(c).map_err(|_| ())) else {
            report.drop("malformed_season");
            continue;
        };
        let Ok(size) = normalize_size_token(&row[3]) else {
            report.drop("missing_size");
            continue;
        };
        let qty = if opts.is_missing(&row[4]) {
            None
        } else {
            match row[4].trim().parse::<f64>() {
                Ok(q) if q.is_finite() => Some(q),
                _ => {
                    report.drop("malformed_quantity");
                    continue;
                }
            }
        };
        if kind != KpiKind::AdjustedDemand && qty.is_some_and(|q| q < 0.0) {
            report.drop("negative_quantity");
            continue;
        }
        out.push(vec![
            season.to_string(),
            row[1].trim().to_string(),
            row[2].trim().to_string(),
            size,
            qty.map(|q| q.to_string()).unwrap_or_default(),
        ]);
    }
    report.rows_out = out.len();
    Ok((out, report))
}

/// Drops rows with a blank key field and collapses duplicates on
/// (name, channel, affiliate). Output is sorted by name.
pub fn dedup_planning_groups(t: &RawTable, opts: &IngestOptions) -> Result<Vec<PlanningGroup>> {
    let t = t.clone().project(schema::PLANNING_GROUPS)?;
    let mut by_name: BTreeMap<String, PlanningGroup> = BTreeMap::new();
    for row in &t.rows {
        if row[..3].iter().any(|v| opts.is_missing(v)) {
            continue;
        }
        let channel: Channel = row[1].parse()?;
        let pg = PlanningGroup {
            name: row[0].trim().to_string(),
            channel,
            affiliate: row[2].trim().to_string(),
        };
        match by_name.get(&pg.name) {
            Some(existing) if existing != &pg => {
                log::warn!(
                    "planning group {:?} listed under two channel/affiliate pairs; keeping the first",
                    pg.name
                );
            }
            Some(_) => {}
            None => {
                by_name.insert(pg.name.clone(), pg);
            }
        }
    }
    Ok(by_name.into_values().collect())
}

/// Each product's size grid name: the grid it was filed under in its latest season.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductGridMap {
    pub entries: BTreeMap<String, String>,
}

impl ProductGridMap {
    pub fn get(&self, product: &str) -> Option<&str> {
        self.entries.get(product).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn is_flag_set(v: &str) -> bool {
    matches!(v.trim().to_ascii_uppercase().as_str(), "Y" | "YES" | "1" | "TRUE")
}

fn in_scope_category(v: &str) -> bool {
    matches!(
        v.trim().to_ascii_uppercase().as_str(),
        "TOPS" | "TOP" | "BOTTOMS" | "BOTTOM"
    )
}

/// Products of the master that are tops or bottoms and neither outlet nor dummy.
fn eligible_products(product_master: &RawTable, opts: &IngestOptions) -> Result<BTreeSet<String>> {
    let pm = product_master.clone().project(schema::PRODUCT_MASTER)?;
    Ok(pm
        .rows
        .iter()
        .filter(|r| !opts.is_missing(&r[0]))
        .filter(|r| in_scope_category(&r[2]) && !is_flag_set(&r[6]) && !is_flag_set(&r[7]))
        .map(|r| r[0].trim().to_string())
        .collect())
}

pub fn build_product_grid_map(
    selections: &RawTable,
    fact_sizes: &RawTable,
    product_master: &RawTable,
    opts: &IngestOptions,
) -> Result<ProductGridMap> {
    let eligible = eligible_products(product_master, opts)?;
    let tool = selections.clone().project(schema::TOOL_SELECTIONS)?;
    let fact = fact_sizes.clone().project(schema::FACT_SIZES)?;
    // product -> (latest season, grids seen in it)
    let mut latest: BTreeMap<&str, (SeasonCode, BTreeSet<&str>)> = BTreeMap::new();
    let rows = tool
        .rows
        .iter()
        .map(|r| (&r[0], &r[2], &r[3]))
        .chain(fact.rows.iter().map(|r| (&r[0], &r[1], &r[2])));
    for (season, product, grid) in rows {
        if opts.is_missing(season) || opts.is_missing(product) || opts.is_missing(grid) {
            continue;
        }
        let product = product.trim();
        if !eligible.contains(product) {
            continue;
        }
        let Ok(season) = season.parse::<SeasonCode>() else { continue };
        let grid = grid.trim();
        match latest.get_mut(product) {
            Some((s, grids)) if *s == season => {
                grids.insert(grid);
            }
            Some((s, _)) if *s > season => {}
            _ => {
                latest.insert(product, (season, BTreeSet::from([grid])));
            }
        }
    }
    let mut entries = BTreeMap::new();
    for (product, (season, grids)) in latest {
        let first = *grids.iter().next().expect("at least one grid per entry");
        if grids.len() > 1 {
            log::info!(
                "product {product} has {} grid names in season {season}; choosing {first}",
                grids.len()
            );
        }
        entries.insert(product.to_string(), first.to_string());
    }
    Ok(ProductGridMap { entries })
}

/// Builds the (season, planning group, grid name, size) selection history.
/// Tool rows with status `D` are ignored; assortment combinations without
/// tool rows take every fact size of their channel and affiliate.
pub fn assemble_selection_history(
    tool_selections: &RawTable,
    fact_sizes: &RawTable,
    assortment: &RawTable,
    planning_groups: &[PlanningGroup],
    map: &ProductGridMap,
    opts: &IngestOptions,
) -> Result<RawTable> {
    let tool = tool_selections.clone().project(schema::TOOL_SELECTIONS)?;
    let fact = fact_sizes.clone().project(schema::FACT_SIZES)?;
    let assortment = assortment.clone().project(schema::ASSORTMENT)?;
    let pgs: BTreeMap<&str, &PlanningGroup> =
        planning_groups.iter().map(|p| (p.name.as_str(), p)).collect();

    type Combo = (SeasonCode, String, String);
    let mut tool_sizes: BTreeMap<Combo, BTreeSet<String>> = BTreeMap::new();
    for r in &tool.rows {
        if r[..5].iter().any(|v| opts.is_missing(v)) {
            continue;
        }
        let Ok(season) = r[0].parse::<SeasonCode>() else { continue };
        let Ok(size) = normalize_size_token(&r[4]) else { continue };
        let entry = tool_sizes
            .entry((season, r[1].trim().to_string(), r[2].trim().to_string()))
            .or_default();
        if r[5].trim().eq_ignore_ascii_case("D") {
            continue;
        }
        entry.insert(size);
    }

    let mut fact_map: BTreeMap<(SeasonCode, String, Channel, String), BTreeSet<String>> = BTreeMap::new();
    for r in &fact.rows {
        if r.iter().any(|v| opts.is_missing(v)) {
            continue;
        }
        let (Ok(season), Ok(channel), Ok(size)) = (
            r[0].parse::<SeasonCode>(),
            r[3].parse::<Channel>(),
            normalize_size_token(&r[5]),
        ) else {
            continue;
        };
        fact_map
            .entry((season, r[1].trim().to_string(), channel, r[4].trim().to_string()))
            .or_default()
            .insert(size);
    }

    let mut out: BTreeSet<(SeasonCode, String, String, String)> = BTreeSet::new();
    for r in &assortment.rows {
        if r.iter().any(|v| opts.is_missing(v)) {
            continue;
        }
        let Ok(season) = r[0].parse::<SeasonCode>() else { continue };
        let (pg_name, product) = (r[1].trim(), r[2].trim());
        let (Some(grid), Some(pg)) = (map.get(product), pgs.get(pg_name)) else {
            continue;
        };
        let combo = (season, pg_name.to_string(), product.to_string());
        let sizes = match tool_sizes.get(&combo) {
            Some(sizes) => sizes.clone(),
            None => fact_map
                .get(&(season, product.to_string(), pg.channel, pg.affiliate.clone()))
                .cloned()
                .unwrap_or_default(),
        };
        for size in sizes {
            out.insert((season, pg_name.to_string(), grid.to_string(), size));
        }
    }
    let rows = out
        .into_iter()
        .map(|(s, pg, g, size)| vec![s.to_string(), pg, g, size])
        .collect();
    RawTable::with_rows(schema::SELECTION_HISTORY, rows)
}

/// Parses the candidate catalog into grids sorted by name.
pub fn parse_candidates(t: &RawTable) -> Result<Vec<SizeGrid>> {
    let t = t.clone().project(schema::CANDIDATES)?;
    let split = |s: &str| -> Vec<String> {
        s.split(LIST_SEPARATOR)
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .map(str::to_string)
            .collect()
    };
    let mut grids: BTreeMap<String, SizeGrid> = BTreeMap::new();
    for r in &t.rows {
        let name = r[0].trim();
        let g = SizeGrid::new(name, split(&r[1]), split(&r[2]))?;
        if grids.insert(name.to_string(), g).is_some() {
            return Err(Error::SchemaMismatch {
                table: t.name.clone(),
                reason: format!("grid {name:?} listed twice"),
            });
        }
    }
    Ok(grids.into_values().collect())
}

/// Per-grid attributes carried into the categorical features and impact pricing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAttributes {
    pub seasonality: String,
    pub gender: Gender,
    pub category: Category,
    /// Mean unit price of the products mapped to the grid.
    pub unit_price: Option<f64>,
}

/// Grid-level KPI quantities of one cell in one season.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KpiValues {
    pub adjusted_demand: Option<f64>,
    pub sell_out: Option<f64>,
    pub stock: Option<f64>,
}

/// The cleaned corpus at grid level. Planning groups and grids are sorted by
/// name and referenced by position in [`CellKey`].
#[derive(Debug, Clone, PartialEq)]
pub struct CleanCorpus {
    pub planning_groups: Vec<PlanningGroup>,
    pub grids: Vec<SizeGrid>,
    pub grid_attributes: Vec<GridAttributes>,
    pub kpis: BTreeMap<CellKey, KpiValues>,
    /// Selected size tokens per (season, planning group, grid).
    pub history: BTreeMap<(SeasonCode, u16, u16), BTreeSet<String>>,
    /// (season, planning group, grid) combinations with assortment.
    pub assortment: BTreeSet<(SeasonCode, u16, u16)>,
    pub report: CleaningReport,
}

impl CleanCorpus {
    pub fn from_raw(raw: &RawCorpus, opts: &IngestOptions) -> Result<CleanCorpus> {
        let planning_groups = dedup_planning_groups(&raw.planning_groups, opts)?;
        let grids = parse_candidates(&raw.candidates)?;
        let map = build_product_grid_map(&raw.tool_selections, &raw.fact_sizes, &raw.product_master, opts)?;
        let pg_index: BTreeMap<&str, u16> = planning_groups
            .iter()
            .enumerate()
            .map(|(k, p)| (p.name.as_str(), k as u16))
            .collect();
        let grid_index: BTreeMap<&str, u16> = grids
            .iter()
            .enumerate()
            .map(|(k, g)| (g.raw_name(), k as u16))
            .collect();

        let mut report = CleaningReport::default();
        report.tables.insert(
            "planning_groups".into(),
            TableReport {
                rows_in: raw.planning_groups.len(),
                rows_out: planning_groups.len(),
                dropped: if raw.planning_groups.len() > planning_groups.len() {
                    BTreeMap::from([(
                        "blank_or_duplicate".to_string(),
                        raw.planning_groups.len() - planning_groups.len(),
                    )])
                } else {
                    BTreeMap::new()
                },
            },
        );

        let mut kpis: BTreeMap<CellKey, KpiValues> = BTreeMap::new();
        for (kind, table) in [
            (KpiKind::AdjustedDemand, &raw.adjusted_demand),
            (KpiKind::SellOut, &raw.sell_out),
            (KpiKind::Stock, &raw.stock),
        ] {
            let (clean, mut rep) = clean_kpi_table(table, kind, opts)?;
            let mut unmapped = TableReport::default();
            for r in &clean.rows {
                let Some(qty) = r[4].parse::<f64>().ok() else { continue };
                let Some(grid_name) = map.get(&r[2]) else {
                    unmapped.drop("unmapped_product");
                    continue;
                };
                let Some(&g) = grid_index.get(grid_name) else {
                    unmapped.drop("unknown_grid");
                    continue;
                };
                let Some(&p) = pg_index.get(r[1].as_str()) else {
                    unmapped.drop("unknown_planning_group");
                    continue;
                };
                let Some(c) = grids[g as usize].index_of_token(&r[3]) else {
                    unmapped.drop("size_outside_grid");
                    continue;
                };
                let key = CellKey {
                    season: r[0].parse()?,
                    planning_group: p,
                    grid: g,
                    cell: c as u16,
                };
                let v = kpis.entry(key).or_default();
                let slot = match kind {
                    KpiKind::AdjustedDemand => &mut v.adjusted_demand,
                    KpiKind::SellOut => &mut v.sell_out,
                    KpiKind::Stock => &mut v.stock,
                };
                *slot = Some(slot.unwrap_or(0.0) + qty);
            }
            // Rows that survive cleaning but do not map to a known grid cell
            // are reported separately from the cleaning rules.
            report.tables.insert(kind.schema().name.to_string(), rep.clone());
            if !unmapped.dropped.is_empty() {
                rep.dropped = unmapped.dropped;
                rep.rows_in = clean.len();
                rep.rows_out = clean.len() - rep.dropped.values().sum::<usize>();
                report.tables.insert(format!("{}_grid_join", kind.schema().name), rep);
            }
        }

        let history_table = assemble_selection_history(
            &raw.tool_selections,
            &raw.fact_sizes,
            &raw.assortment,
            &planning_groups,
            &map,
            opts,
        )?;
        let mut history: BTreeMap<(SeasonCode, u16, u16), BTreeSet<String>> = BTreeMap::new();
        for r in &history_table.rows {
            let (Some(&p), Some(&g)) = (pg_index.get(r[1].as_str()), grid_index.get(r[2].as_str())) else {
                continue;
            };
            history
                .entry((r[0].parse()?, p, g))
                .or_default()
                .insert(r[3].clone());
        }

        let asm = raw.assortment.clone().project(schema::ASSORTMENT)?;
        let mut assortment = BTreeSet::new();
        for r in &asm.rows {
            if r.iter().any(|v| opts.is_missing(v)) {
                continue;
            }
            let Ok(season) = r[0].parse::<SeasonCode>() else { continue };
            let Some(grid) = map.get(r[2].trim()) else { continue };
            if let (Some(&p), Some(&g)) = (pg_index.get(r[1].trim()), grid_index.get(grid)) {
                assortment.insert((season, p, g));
            }
        }

        let grid_attributes = grid_attributes(&grids, &map, &raw.product_master)?;
        Ok(CleanCorpus {
            planning_groups,
            grids,
            grid_attributes,
            kpis,
            history,
            assortment,
            report,
        })
    }

    pub fn grid_index(&self, name: &str) -> Option<u16> {
        self.grids
            .binary_search_by(|g| g.raw_name().cmp(name))
            .ok()
            .map(|k| k as u16)
    }

    pub fn planning_group_index(&self, name: &str) -> Option<u16> {
        self.planning_groups
            .binary_search_by(|p| p.name.as_str().cmp(name))
            .ok()
            .map(|k| k as u16)
    }

    /// All grid-level KPI records.
    pub fn records(&self) -> Vec<KpiRecord> {
        self.kpis
            .iter()
            .map(|(k, v)| KpiRecord::new(*k, *v))
            .collect()
    }

    pub fn seasons(&self) -> BTreeSet<SeasonCode> {
        self.kpis
            .keys()
            .map(|k| k.season)
            .chain(self.assortment.iter().map(|a| a.0))
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut pgs = RawTable::new(schema::PLANNING_GROUPS);
        for p in &self.planning_groups {
            pgs.push(vec![
                p.name.clone(),
                p.channel.as_str().to_string(),
                p.affiliate.clone(),
                String::new(),
                String::new(),
            ]);
        }
        pgs.save(&dir.join("planning_groups.csv"))?;

        let mut cands = RawTable::new(schema::CANDIDATES);
        let sep = LIST_SEPARATOR.to_string();
        for g in &self.grids {
            cands.push(vec![
                g.raw_name().to_string(),
                g.dim1_values().join(&sep),
                g.dim2_values().join(&sep),
            ]);
        }
        cands.save(&dir.join("candidates.csv"))?;

        let mut attrs = RawTable::new(GRID_ATTRIBUTES);
        for (g, a) in self.grids.iter().zip(&self.grid_attributes) {
            attrs.push(vec![
                g.raw_name().to_string(),
                a.seasonality.clone(),
                a.unit_price.map(|p| p.to_string()).unwrap_or_default(),
            ]);
        }
        attrs.save(&dir.join("grid_attributes.csv"))?;

        let mut kpis = RawTable::new(GRID_KPIS);
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (k, v) in &self.kpis {
            kpis.push(vec![
                k.season.to_string(),
                self.planning_groups[k.planning_group as usize].name.clone(),
                self.grids[k.grid as usize].raw_name().to_string(),
                self.grids[k.grid as usize].cells()[k.cell as usize].token(),
                opt(v.adjusted_demand),
                opt(v.sell_out),
                opt(v.stock),
            ]);
        }
        kpis.save(&dir.join("grid_kpis.csv"))?;

        let mut hist = RawTable::new(schema::SELECTION_HISTORY);
        for ((s, p, g), sizes) in &self.history {
            for size in sizes {
                hist.push(vec![
                    s.to_string(),
                    self.planning_groups[*p as usize].name.clone(),
                    self.grids[*g as usize].raw_name().to_string(),
                    size.clone(),
                ]);
            }
        }
        hist.save(&dir.join("selection_history.csv"))?;

        let mut asm = RawTable::new(GRID_ASSORTMENT);
        for (s, p, g) in &self.assortment {
            asm.push(vec![
                s.to_string(),
                self.planning_groups[*p as usize].name.clone(),
                self.grids[*g as usize].raw_name().to_string(),
            ]);
        }
        asm.save(&dir.join("grid_assortment.csv"))?;

        let report_path = dir.join("cleaning_report.json");
        fs::write(&report_path, serde_json::to_vec_pretty(&self.report)?)
            .map_err(|e| Error::io(&report_path, e))?;
        let text_path = dir.join("cleaning_report.txt");
        fs::write(&text_path, self.report.to_string()).map_err(|e| Error::io(&text_path, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<CleanCorpus> {
        let opts = IngestOptions::default();
        let planning_groups = dedup_planning_groups(
            &load_table(&dir.join("planning_groups.csv"), schema::PLANNING_GROUPS)?,
            &opts,
        )?;
        let grids = parse_candidates(&load_table(&dir.join("candidates.csv"), schema::CANDIDATES)?)?;
        let mut corpus = CleanCorpus {
            grid_attributes: Vec::with_capacity(grids.len()),
            planning_groups,
            grids,
            kpis: BTreeMap::new(),
            history: BTreeMap::new(),
            assortment: BTreeSet::new(),
            report: CleaningReport::default(),
        };
        let attrs = load_table(&dir.join("grid_attributes.csv"), GRID_ATTRIBUTES)?;
        let attrs: BTreeMap<&str, &Vec<String>> = attrs.rows.iter().map(|r| (r[0].as_str(), r)).collect();
        for g in &corpus.grids {
            let r = attrs.get(g.raw_name()).ok_or_else(|| Error::SchemaMismatch {
                table: "grid_attributes".into(),
                reason: format!("no row for grid {}", g.raw_name()),
            })?;
            corpus.grid_attributes.push(GridAttributes {
                seasonality: r[1].clone(),
                gender: g.name.gender,
                category: g.name.category,
                unit_price: r[2].parse().ok(),
            });
        }

        let bad = |table: &str, reason: String| Error::SchemaMismatch {
            table: table.to_string(),
            reason,
        };
        let lookup = |c: &CleanCorpus, table: &str, pg: &str, grid: &str| -> Result<(u16, u16)> {
            let p = c
                .planning_group_index(pg)
                .ok_or_else(|| bad(table, format!("unknown planning group {pg:?}")))?;
            let g = c
                .grid_index(grid)
                .ok_or_else(|| bad(table, format!("unknown grid {grid:?}")))?;
            Ok((p, g))
        };
        let kpis = load_table(&dir.join("grid_kpis.csv"), GRID_KPIS)?;
        for r in &kpis.rows {
            let (p, g) = lookup(&corpus, "grid_kpis", &r[1], &r[2])?;
            let c = corpus.grids[g as usize]
                .index_of_token(&r[3])
                .ok_or_else(|| bad("grid_kpis", format!("size {:?} not in {}", r[3], r[2])))?;
            let num = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse()
                        .map(Some)
                        .map_err(|_| bad("grid_kpis", format!("bad quantity {s:?}")))
                }
            };
            corpus.kpis.insert(
                CellKey {
                    season: r[0].parse()?,
                    planning_group: p,
                    grid: g,
                    cell: c as u16,
                },
                KpiValues {
                    adjusted_demand: num(&r[4])?,
                    sell_out: num(&r[5])?,
                    stock: num(&r[6])?,
                },
            );
        }
        let hist = load_table(&dir.join("selection_history.csv"), schema::SELECTION_HISTORY)?;
        for r in &hist.rows {
            let (p, g) = lookup(&corpus, "selection_history", &r[1], &r[2])?;
            corpus
                .history
                .entry((r[0].parse()?, p, g))
                .or_default()
                .insert(r[3].clone());
        }
        let asm = load_table(&dir.join("grid_assortment.csv"), GRID_ASSORTMENT)?;
        for r in &asm.rows {
            let (p, g) = lookup(&corpus, "grid_assortment", &r[1], &r[2])?;
            corpus.assortment.insert((r[0].parse()?, p, g));
        }
        let report_path = dir.join("cleaning_report.json");
        if let Ok(bytes) = fs::read(&report_path) {
            corpus.report = serde_json::from_slice(&bytes)?;
        }
        Ok(corpus)
    }
}

pub const GRID_ATTRIBUTES: Schema = Schema {
    name: "grid_attributes",
    columns: &["grid_name", "seasonality", "unit_price"],
};
pub const GRID_KPIS: Schema = Schema {
    name: "grid_kpis",
    columns: &[
        "season",
        "planning_group",
        "grid_name",
        "size",
        "adjusted_demand",
        "sell_out",
        "stock",
    ],
};
pub const GRID_ASSORTMENT: Schema = Schema {
    name: "grid_assortment",
    columns: &["season", "planning_group", "grid_name"],
};

fn grid_attributes(grids: &[SizeGrid], map: &ProductGridMap, product_master: &RawTable) -> Result<Vec<GridAttributes>> {
    let pm = product_master.clone().project(schema::PRODUCT_MASTER)?;
    let mut seasonality: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    let mut prices: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in &pm.rows {
        let Some(grid) = map.get(r[0].trim()) else { continue };
        *seasonality.entry(grid).or_default().entry(r[4].trim()).or_default() += 1;
        if let Ok(p) = r[5].trim().parse::<f64>() {
            let e = prices.entry(grid).or_default();
            e.0 += p;
            e.1 += 1;
        }
    }
    Ok(grids
        .iter()
        .map(|g| {
            let name = g.raw_name();
            let seasonality = seasonality
                .get(name)
                .and_then(|m| m.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))))
                .map(|(s, _)| s.to_string())
                .unwrap_or_default();
            GridAttributes {
                seasonality,
                gender: g.name.gender,
                category: g.name.category,
                unit_price: prices.get(name).map(|(s, n)| s / *n as f64),
            }
        })
        .collect())
}
