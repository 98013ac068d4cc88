//! Synthetic stand-in for the confidential retail tables.
//!
//! Demand per (planning group, grid, cell) is driven by a persistent latent
//! popularity surface over the grid (a smooth bump around the core sizes plus
//! grid, planning-group and cell effects). Each season draws a zero-inflated
//! log-normal quantity around it. Selections follow a planted rule: a cell is
//! selected when its distance-weighted circle-1 demand over the previous
//! rolling window exceeds a per-grid quantile threshold, retail high grids are
//! capped, and a sticky per-cell flip mask perturbs labels at `noise_rate`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Binomial, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{parse_season, previous_seasons, Channel, Extension, SeasonCode, SizeGrid};
use crate::error::{Error, Result};
use crate::features::neighbors::{distance_divisor, offset_index, CIRCLE1_OFFSETS};
use crate::rng::stream;
use crate::table::{schema, RawCorpus, LIST_SEPARATOR};

/// Positive share of the labelled rows in the reference data (381,398 of 1,659,018).
pub const REFERENCE_POSITIVE_FRACTION: f64 = 381_398.0 / (381_398.0 + 1_277_620.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub seed: u64,
    pub n_grid_names: usize,
    /// Labelled seasons, chronological. Demand is also generated for the
    /// `window` seasons before the first one.
    pub seasons: Vec<SeasonCode>,
    pub n_planning_groups: usize,
    pub zero_inflation: f64,
    /// Log-scale spread of nonzero demand; 0 collapses demand to a constant.
    pub demand_tail_shape: f64,
    pub demand_log_mean: f64,
    pub wholesale_missing_rate: f64,
    pub noise_rate: f64,
    pub unit_price_range: (f64, f64),
    /// Target share of selected cells after label noise.
    pub positive_fraction: f64,
    pub retail_cap: usize,
    pub assortment_density: f64,
    pub window: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 42,
            n_grid_names: 40,
            seasons: [163, 171, 173, 181, 183, 191, 193, 201, 203]
                .into_iter()
                .map(|c| parse_season(c).expect("valid season"))
                .collect(),
            n_planning_groups: 12,
            zero_inflation: 0.6,
            demand_tail_shape: 2.0,
            demand_log_mean: 5.75,
            wholesale_missing_rate: 0.5,
            noise_rate: 0.02,
            unit_price_range: (19.95, 129.95),
            positive_fraction: REFERENCE_POSITIVE_FRACTION,
            retail_cap: 24,
            assortment_density: 0.9,
            window: 4,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        for (name, v) in [
            ("zero_inflation", self.zero_inflation),
            ("wholesale_missing_rate", self.wholesale_missing_rate),
            ("noise_rate", self.noise_rate),
            ("positive_fraction", self.positive_fraction),
            ("assortment_density", self.assortment_density),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} is outside [0, 1]"));
            }
        }
        if self.seasons.is_empty() {
            return bad("no seasons".into());
        }
        if !self.seasons.windows(2).all(|w| w[0] < w[1]) {
            return bad("seasons must be strictly chronological".into());
        }
        if self.n_grid_names == 0 || self.n_planning_groups == 0 {
            return bad("need at least one grid name and one planning group".into());
        }
        if !(self.demand_tail_shape >= 0.0 && self.demand_tail_shape.is_finite()) {
            return bad("demand_tail_shape must be a finite non-negative number".into());
        }
        let (lo, hi) = self.unit_price_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("unit_price_range ({lo}, {hi}) is not a positive interval"));
        }
        if self.noise_rate >= 0.5 || self.positive_fraction < self.noise_rate {
            return bad("noise_rate must be below 0.5 and below positive_fraction".into());
        }
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        if self.retail_cap == 0 {
            return bad("retail_cap must be positive".into());
        }
        Ok(())
    }

    /// Share of cells the noise-free rule must select so that, after flips,
    /// the positive share equals `positive_fraction`.
    pub fn rule_fraction(&self) -> f64 {
        ((self.positive_fraction - self.noise_rate) / (1.0 - 2.0 * self.noise_rate)).clamp(0.0, 1.0)
    }

    pub fn warmup_seasons(&self) -> Vec<SeasonCode> {
        let mut w = previous_seasons(self.seasons[0], self.window);
        w.reverse();
        w
    }
}

/// Ground truth for one labelled candidate row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedLabel {
    pub season: SeasonCode,
    pub planning_group: u16,
    pub grid: u16,
    pub cell: u16,
    /// Distance-weighted circle-1 demand over the previous window (noise-free).
    pub weighted_demand: f64,
    pub rule_selected: bool,
    pub flipped: bool,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRule {
    pub description: String,
    pub rule_fraction: f64,
    pub noise_rate: f64,
    pub retail_cap: usize,
    pub window: usize,
    pub grid_names: Vec<String>,
    pub planning_group_names: Vec<String>,
    /// Per-grid threshold on weighted circle-1 demand, indexed like `grid_names`.
    pub thresholds: Vec<f64>,
    pub labels: Vec<PlantedLabel>,
}

impl PlantedRule {
    pub fn positive_fraction(&self) -> f64 {
        let pos = self.labels.iter().filter(|l| l.selected).count();
        pos as f64 / self.labels.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub config: CorpusConfig,
    pub tables: RawCorpus,
    pub planted_rule: PlantedRule,
    /// Grid-level true demand per (season, planning group, grid, cell) across
    /// warm-up and labelled seasons; zero entries included.
    pub demand: Vec<DemandEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandEntry {
    pub season: SeasonCode,
    pub planning_group: u16,
    pub grid: u16,
    pub cell: u16,
    pub units: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    NegativeValues,
    MissingSeason,
    DuplicatePg,
    DroppedStatus,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negative_values" => Ok(NoiseKind::NegativeValues),
            "missing_season" => Ok(NoiseKind::MissingSeason),
            "duplicate_pg" => Ok(NoiseKind::DuplicatePg),
            "dropped_status" => Ok(NoiseKind::DroppedStatus),
            other => Err(Error::Validation(format!("unknown noise kind {other:?}"))),
        }
    }
}

// Stream identifiers for rng::stream.
const S_LAYOUT: u64 = 1;
const S_GRID: u64 = 2;
const S_DEMAND: u64 = 3;
const S_FLIP: u64 = 4;
const S_ASSORT: u64 = 5;
const S_KPI: u64 = 6;
const S_WITHHOLD: u64 = 7;
const S_NOISE: u64 = 8;

const AFFILIATES: [&str; 10] = [
    "Central", "France", "North", "LSE HQ", "Iberia", "Italy", "UK", "Germany", "Benelux", "Nordics",
];
const RETAIL_PG: [&str; 8] = [
    "South Retail",
    "Central Retail",
    "North Retail",
    "France Retail",
    "UK Retail",
    "Germany Retail",
    "Benelux Retail",
    "Nordics Retail",
];
const WHOLESALE_PG: [&str; 14] = [
    "South Field Accounts",
    "North EU Dept Stores",
    "North EU Field Accounts",
    "Zalando",
    "Central Field Accounts",
    "France Key Accounts",
    "Iberia Distributors",
    "Italy Field Accounts",
    "UK Dept Stores",
    "Benelux Field Accounts",
    "Nordics Field Accounts",
    "Germany Key Accounts",
    "Central Dept Stores",
    "France Field Accounts",
];
const BOTTOM_FITS: [&str; 14] = [
    "511",
    "501 Original",
    "502 Taper",
    "512 Slim Taper",
    "Youth Super Skinny",
    "514 Straight",
    "Ribcage Straight",
    "541 Athletic",
    "Mile High Super Skinny",
    "724 High Rise",
    "Wedgie Straight",
    "Dad Jeans",
    "Low Pro",
    "Silvertab Loose",
];
const TOP_FITS: [&str; 6] = [
    "Graphic Tee",
    "Housemark Polo",
    "Sportswear Hoodie",
    "Trucker Jacket",
    "Batwing Tee",
    "Classic Shirt",
];
const MEN_WAISTS: [&str; 12] = ["28", "29", "30", "31", "32", "33", "34", "36", "38", "40", "42", "44"];
const WOMEN_WAISTS: [&str; 12] = ["23", "24", "25", "26", "27", "28", "29", "30", "31", "32", "33", "34"];
const MEN_LENGTHS: [&str; 5] = ["28", "30", "32", "34", "36"];
const WOMEN_LENGTHS: [&str; 5] = ["26", "28", "30", "32", "34"];
const SEASONALITY: [&str; 3] = ["CORE", "SEASONAL", "NEW"];

#[derive(Debug, Clone)]
struct PgPlan {
    name: String,
    channel: Channel,
    affiliate: String,
    effect: f64,
}

#[derive(Debug, Clone)]
struct ProductPlan {
    code: String,
    price: f64,
}

#[derive(Debug, Clone)]
struct GridPlan {
    grid: SizeGrid,
    male: bool,
    seasonality: &'static str,
    products: Vec<ProductPlan>,
    /// Former grid name the last product was filed under in the first two seasons.
    legacy_name: Option<String>,
    center: (f64, f64),
    spread: (f64, f64),
    effect: f64,
}

/// Region-level selected cells and the planning groups that contributed.
type RegionSizes = (BTreeSet<usize>, Vec<usize>);

#[derive(Default)]
struct GridOutput {
    tool: Vec<Vec<String>>,
    fact: Vec<Vec<String>>,
    assortment: Vec<Vec<String>>,
    demand_rows: Vec<Vec<String>>,
    sell_out: Vec<Vec<String>>,
    stock: Vec<Vec<String>>,
    labels: Vec<PlantedLabel>,
    demand: Vec<DemandEntry>,
    threshold: f64,
}

fn pick<'a, R: Rng>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs[rng.random_range(0..xs.len())]
}

fn plan_planning_groups(cfg: &CorpusConfig) -> Vec<PgPlan> {
    let mut rng = stream(cfg.seed, &[S_LAYOUT, 0]);
    let n = cfg.n_planning_groups;
    let n_retail = ((n as f64) / 3.0).round().max(1.0) as usize;
    let n_retail = n_retail.min(n);
    let effect = Normal::new(0.0, 0.5).unwrap();
    (0..n)
        .map(|k| {
            let (name, channel, affiliate) = if k < n_retail {
                let base = RETAIL_PG[k % RETAIL_PG.len()];
                let name = if k < RETAIL_PG.len() {
                    base.to_string()
                } else {
                    format!("{base} {}", k / RETAIL_PG.len() + 1)
                };
                (name, Channel::Retail, AFFILIATES[k % AFFILIATES.len()].to_string())
            } else {
                let w = k - n_retail;
                let base = WHOLESALE_PG[w % WHOLESALE_PG.len()];
                let name = if w < WHOLESALE_PG.len() {
                    base.to_string()
                } else {
                    format!("{base} {}", w / WHOLESALE_PG.len() + 1)
                };
                (name, Channel::Wholesale, pick(&mut rng, &AFFILIATES).to_string())
            };
            PgPlan {
                name,
                channel,
                affiliate,
                effect: effect.sample(&mut rng),
            }
        })
        .collect()
}

fn plan_grids(cfg: &CorpusConfig) -> Result<Vec<GridPlan>> {
    let mut plans: Vec<GridPlan> = Vec::with_capacity(cfg.n_grid_names);
    let mut used = BTreeSet::new();
    let mut product_no = 0usize;
    for k in 0..cfg.n_grid_names {
        let mut rng = stream(cfg.seed, &[S_GRID, k as u64]);
        let (male, bottom, ext) = if k == 0 {
            (true, true, "H")
        } else {
            let male = rng.random_bool(0.55);
            let bottom = rng.random_bool(0.8);
            let ext = if !bottom {
                "M"
            } else {
                match rng.random_range(0..10) {
                    0 | 1 => "L",
                    2..=5 => "M",
                    _ => "H",
                }
            };
            (male, bottom, ext)
        };
        let fits: &[&str] = if bottom { &BOTTOM_FITS } else { &TOP_FITS };
        let base = fits[k % fits.len()];
        let prefix = format!("{}{}", if male { 'M' } else { 'W' }, if bottom { 'B' } else { 'T' });
        let mut descriptive = base.to_string();
        let mut name = format!("{prefix}-{descriptive}-{ext}");
        let mut rep = 2;
        while !used.insert(name.clone()) {
            descriptive = format!("{base} {rep}");
            name = format!("{prefix}-{descriptive}-{ext}");
            rep += 1;
        }

        let (dim1, dim2): (Vec<String>, Vec<String>) = if bottom {
            let waists: &[&str] = if male { &MEN_WAISTS } else { &WOMEN_WAISTS };
            let lengths: &[&str] = if male { &MEN_LENGTHS } else { &WOMEN_LENGTHS };
            let (w, l) = match ext {
                "L" => (&waists[..7], &lengths[1..4]),
                "M" => (&waists[..9], &lengths[1..5]),
                _ => (waists, lengths),
            };
            (
                w.iter().map(|s| s.to_string()).collect(),
                l.iter().map(|s| s.to_string()).collect(),
            )
        } else {
            let mut sizes = vec!["XS", "S", "M", "L", "XL"];
            if rng.random_bool(0.5) {
                if male {
                    sizes.push("XXL");
                } else {
                    sizes.insert(0, "XXS");
                }
            }
            (sizes.iter().map(|s| s.to_string()).collect(), vec![])
        };
        let grid = SizeGrid::new(&name, dim1, dim2)?;

        // Core of the popularity bump, in index space.
        let preferred_i = if bottom {
            let target = if male { "33" } else { "27" };
            grid.dim1_values()
                .iter()
                .position(|v| v == target)
                .unwrap_or(grid.width() / 2) as f64
        } else {
            (grid.width() as f64 - 1.0) / 2.0
        };
        let preferred_j = if bottom {
            grid.dim2_values()
                .iter()
                .position(|v| v == "32")
                .unwrap_or(grid.height() / 2) as f64
        } else {
            0.0
        };
        let jitter = Normal::new(0.0, 0.6).unwrap();
        let center = (
            preferred_i + jitter.sample(&mut rng),
            preferred_j + if bottom { jitter.sample(&mut rng) * 0.5 } else { 0.0 },
        );
        let spread = (
            (grid.width() as f64 / 3.0).max(1.0),
            (grid.height() as f64 / 2.5).max(1.0),
        );

        let n_products = rng.random_range(1..=3);
        let products = (0..n_products)
            .map(|_| {
                product_no += 1;
                ProductPlan {
                    code: format!("P{product_no:05}"),
                    price: rng.random_range(cfg.unit_price_range.0..=cfg.unit_price_range.1),
                }
            })
            .collect::<Vec<_>>();
        let legacy_name = (k % 5 == 1 && products.len() >= 2)
            .then(|| format!("{prefix}-{descriptive} Classic-{ext}"));
        plans.push(GridPlan {
            grid,
            male,
            seasonality: SEASONALITY[rng.random_range(0..SEASONALITY.len())],
            products,
            legacy_name,
            center,
            spread,
            effect: Normal::new(0.0, 0.1).unwrap().sample(&mut rng),
        });
    }
    Ok(plans)
}

/// Raw size label as a planner tool would render it; several separators occur.
fn raw_size(grid: &SizeGrid, cell: usize, variant: usize) -> String {
    let c = &grid.cells()[cell];
    match &c.dim2 {
        None => c.dim1.clone(),
        Some(d2) => match variant % 4 {
            0 => format!("{} {}", c.dim1, d2),
            1 => format!("{}:{}", c.dim1, d2),
            2 => format!("{}: {}", c.dim1, d2),
            _ => format!("{}-{}", c.dim1, d2),
        },
    }
}

/// Splits `total` units across `parts` products.
fn split_units<R: Rng>(rng: &mut R, total: u64, parts: usize) -> Vec<u64> {
    let mut out = vec![0u64; parts];
    let mut left = total;
    for (k, slot) in out.iter_mut().enumerate() {
        if k + 1 == parts {
            *slot = left;
        } else {
            let p = 1.0 / (parts - k) as f64;
            let take = Binomial::new(left, p).map(|b| b.sample(rng)).unwrap_or(0);
            *slot = take;
            left -= take;
        }
    }
    out
}

fn withheld(cfg: &CorpusConfig, pg: usize, season: SeasonCode, channel: Channel) -> bool {
    channel == Channel::Wholesale && {
        let mut rng = stream(cfg.seed, &[S_WITHHOLD, pg as u64, season.code() as u64]);
        rng.random_bool(cfg.wholesale_missing_rate)
    }
}

fn quantile(values: &mut [f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let pos = ((values.len() - 1) as f64 * q).round() as usize;
    values[pos.min(values.len() - 1)]
}

fn generate_grid(
    cfg: &CorpusConfig,
    g: usize,
    plan: &GridPlan,
    pgs: &[PgPlan],
    all_seasons: &[SeasonCode],
) -> GridOutput {
    let grid = &plan.grid;
    let n_cells = grid.len();
    let n_all = all_seasons.len();
    let warm = n_all - cfg.seasons.len();
    let sigma = cfg.demand_tail_shape;
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let mut out = GridOutput::default();

    // demand[pg][season][cell]
    let mut demand = vec![vec![vec![0u64; n_cells]; n_all]; pgs.len()];
    for (p, pg) in pgs.iter().enumerate() {
        let mut rng = stream(cfg.seed, &[S_DEMAND, g as u64, p as u64]);
        let latent: Vec<f64> = grid
            .cells()
            .iter()
            .map(|c| {
                let di = (c.i as f64 - plan.center.0) / plan.spread.0;
                let dj = (c.j as f64 - plan.center.1) / plan.spread.1;
                -0.5 * (di * di + dj * dj) + plan.effect + pg.effect + 0.35 * std_normal.sample(&mut rng)
            })
            .collect();
        let mean_latent = latent.iter().sum::<f64>() / n_cells as f64;
        for (s, row) in demand[p].iter_mut().enumerate() {
            let trend = 0.04 * s as f64;
            for (c, &u) in latent.iter().enumerate() {
                let p_zero = cfg.zero_inflation.powf((1.5 * (u - mean_latent)).exp());
                let is_zero = rng.random_bool(p_zero.clamp(0.0, 1.0));
                let eps = std_normal.sample(&mut rng);
                if !is_zero {
                    let log_d = cfg.demand_log_mean + sigma * (u + 0.2 * eps + trend);
                    row[c] = log_d.exp().round().max(1.0) as u64;
                }
            }
        }
    }

    // Rolled window demand and weighted circle-1 demand for labelled seasons.
    // weighted[pg][labelled season][cell]
    let mut weighted = vec![vec![vec![0.0f64; n_cells]; cfg.seasons.len()]; pgs.len()];
    for p in 0..pgs.len() {
        for (ls, _) in cfg.seasons.iter().enumerate() {
            let s = ls + warm;
            let rolled: Vec<f64> = (0..n_cells)
                .map(|c| {
                    (s.saturating_sub(cfg.window)..s)
                        .map(|t| demand[p][t][c] as f64)
                        .sum()
                })
                .collect();
            for (c, cell) in grid.cells().iter().enumerate() {
                weighted[p][ls][c] = CIRCLE1_OFFSETS
                    .iter()
                    .filter_map(|&off| offset_index(grid, cell.i, cell.j, off))
                    .map(|n| rolled[n] / distance_divisor(grid.cells()[n].manhattan(cell)))
                    .sum();
            }
        }
    }
    let mut pool: Vec<f64> = weighted.iter().flatten().flatten().copied().collect();
    let threshold = quantile(&mut pool, 1.0 - cfg.rule_fraction());
    out.threshold = threshold;

    // Sticky flips and assortment presence.
    let capped = grid.name.extension == Extension::High;
    let mut selected: Vec<Vec<Option<Vec<bool>>>> = vec![vec![None; cfg.seasons.len()]; pgs.len()];
    let mut products_in: Vec<Vec<Vec<usize>>> = vec![vec![vec![]; cfg.seasons.len()]; pgs.len()];
    for (p, pg) in pgs.iter().enumerate() {
        let mut frng = stream(cfg.seed, &[S_FLIP, g as u64, p as u64]);
        let flips: Vec<bool> = (0..n_cells).map(|_| frng.random_bool(cfg.noise_rate)).collect();
        let mut arng = stream(cfg.seed, &[S_ASSORT, g as u64, p as u64]);
        for (ls, &season) in cfg.seasons.iter().enumerate() {
            let present = arng.random_bool(cfg.assortment_density);
            let mut prods: Vec<usize> = (0..plan.products.len())
                .filter(|_| arng.random_bool(0.8))
                .collect();
            if !present {
                continue;
            }
            if prods.is_empty() {
                prods.push(0);
            }
            let w = &weighted[p][ls];
            let rule: Vec<bool> = w.iter().map(|&x| x > threshold).collect();
            let mut sel: Vec<bool> = rule.iter().zip(&flips).map(|(&r, &f)| r ^ f).collect();
            // Rank by weighted demand, ties in grid order.
            let mut order: Vec<usize> = (0..n_cells).collect();
            order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
            if pg.channel == Channel::Retail && capped {
                let mut kept = 0;
                for &c in &order {
                    if sel[c] {
                        kept += 1;
                        if kept > cfg.retail_cap {
                            sel[c] = false;
                        }
                    }
                }
            }
            if !sel.iter().any(|&s| s) {
                sel[order[0]] = true;
            }
            for c in 0..n_cells {
                out.labels.push(PlantedLabel {
                    season,
                    planning_group: p as u16,
                    grid: g as u16,
                    cell: c as u16,
                    weighted_demand: w[c],
                    rule_selected: rule[c],
                    flipped: flips[c],
                    selected: sel[c],
                });
            }
            selected[p][ls] = Some(sel);
            products_in[p][ls] = prods;
        }
    }

    // Tables.
    let name = grid.raw_name();
    for (ls, &season) in cfg.seasons.iter().enumerate() {
        let season_str = season.to_string();
        let legacy = ls < 2;
        let filed_name = |prod: usize| -> &str {
            match (&plan.legacy_name, legacy && prod + 1 == plan.products.len()) {
                (Some(old), true) => old.as_str(),
                _ => name,
            }
        };

        // Region-level sizes per (channel, affiliate): union of member selections.
        let mut regional: BTreeMap<(Channel, &str), RegionSizes> = BTreeMap::new();
        for (p, pg) in pgs.iter().enumerate() {
            if let Some(sel) = &selected[p][ls] {
                let entry = regional
                    .entry((pg.channel, pg.affiliate.as_str()))
                    .or_default();
                entry.0.extend((0..n_cells).filter(|&c| sel[c]));
                entry.1.push(p);
            }
        }
        for ((channel, affiliate), (cells, _)) in &regional {
            for prod in 0..plan.products.len() {
                for &c in cells {
                    out.fact.push(vec![
                        season_str.clone(),
                        plan.products[prod].code.clone(),
                        filed_name(prod).to_string(),
                        channel.as_str().to_string(),
                        affiliate.to_string(),
                        raw_size(grid, c, c + ls),
                    ]);
                }
            }
        }

        for (p, pg) in pgs.iter().enumerate() {
            let Some(sel) = &selected[p][ls] else { continue };
            for &prod in &products_in[p][ls] {
                out.assortment.push(vec![
                    season_str.clone(),
                    pg.name.clone(),
                    plan.products[prod].code.clone(),
                ]);
            }
            // Retail planners skip the tool when the regional set already
            // equals their selection; wholesale always uses it.
            let (region_cells, _) = &regional[&(pg.channel, pg.affiliate.as_str())];
            let own: BTreeSet<usize> = (0..n_cells).filter(|&c| sel[c]).collect();
            let skip_tool = pg.channel == Channel::Retail && &own == region_cells;
            if !skip_tool {
                for &prod in &products_in[p][ls] {
                    for &c in &own {
                        out.tool.push(vec![
                            season_str.clone(),
                            pg.name.clone(),
                            plan.products[prod].code.clone(),
                            filed_name(prod).to_string(),
                            raw_size(grid, c, c + p),
                            "A".to_string(),
                        ]);
                    }
                }
            }
        }
    }

    // KPI tables at product level.
    let beta_met = Beta::new(9.0, 1.5).unwrap();
    let beta_st = Beta::new(5.0, 2.5).unwrap();
    let stock_noise = Normal::new(1.5f64, 0.7).unwrap();
    for (p, pg) in pgs.iter().enumerate() {
        let mut rng: ChaCha8Rng = stream(cfg.seed, &[S_KPI, g as u64, p as u64]);
        for (s, &season) in all_seasons.iter().enumerate() {
            let season_str = season.to_string();
            for (c, &d) in demand[p][s].iter().enumerate() {
                out.demand.push(DemandEntry {
                    season,
                    planning_group: p as u16,
                    grid: g as u16,
                    cell: c as u16,
                    units: d,
                });
                let parts = split_units(&mut rng, d, plan.products.len());
                let mut wrote = false;
                for (prod, &q) in parts.iter().enumerate() {
                    if q > 0 || (!wrote && prod + 1 == parts.len()) {
                        out.demand_rows.push(vec![
                            season_str.clone(),
                            pg.name.clone(),
                            plan.products[prod].code.clone(),
                            raw_size(grid, c, s + prod),
                            q.to_string(),
                        ]);
                        wrote = true;
                    }
                }
            }
            if s < warm {
                continue;
            }
            let ls = s - warm;
            let Some(sel) = &selected[p][ls] else { continue };
            if withheld(cfg, p, season, pg.channel) {
                continue;
            }
            for c in (0..n_cells).filter(|&c| sel[c]) {
                let d = demand[p][s][c];
                let sold = (d as f64 * beta_met.sample(&mut rng)).round() as u64;
                let left = if sold > 0 {
                    let st: f64 = beta_st.sample(&mut rng);
                    (sold as f64 * (1.0 - st) / st).round() as u64
                } else {
                    stock_noise.sample(&mut rng).exp().round() as u64
                };
                for (table, total) in [(&mut out.sell_out, sold), (&mut out.stock, left)] {
                    let parts = split_units(&mut rng, total, plan.products.len());
                    let mut wrote = false;
                    for (prod, &q) in parts.iter().enumerate() {
                        if q > 0 || (!wrote && prod + 1 == parts.len()) {
                            table.push(vec![
                                season_str.clone(),
                                pg.name.clone(),
                                plan.products[prod].code.clone(),
                                raw_size(grid, c, c + prod),
                                q.to_string(),
                            ]);
                            wrote = true;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Generates a full raw corpus. Output is a pure function of `config`.
pub fn generate_corpus(config: &CorpusConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let pgs = plan_planning_groups(config);
    let plans = plan_grids(config)?;
    let mut all_seasons = config.warmup_seasons();
    all_seasons.extend(config.seasons.iter().copied());

    let outputs: Vec<GridOutput> = plans
        .par_iter()
        .enumerate()
        .map(|(g, plan)| generate_grid(config, g, plan, &pgs, &all_seasons))
        .collect();

    let mut tables = RawCorpus::empty();
    for plan in &plans {
        for prod in &plan.products {
            tables.product_master.push(vec![
                prod.code.clone(),
                plan.grid.raw_name().to_string(),
                if plan.grid.is_two_dimensional() { "BOTTOMS" } else { "TOPS" }.to_string(),
                if plan.male { "MALE" } else { "FEMALE" }.to_string(),
                plan.seasonality.to_string(),
                format!("{:.2}", prod.price),
                "N".to_string(),
                "N".to_string(),
            ]);
        }
    }
    let first = config.seasons[0].to_string();
    // Out-of-scope categories and non-products that the cleaning must drop.
    for (code, grid, cat, gender) in [
        ("F00001", "MF-Classic Sneaker-M", "FOOTWEAR", "MALE"),
        ("F00002", "WF-Court Sneaker-M", "FOOTWEAR", "FEMALE"),
        ("A00001", "MA-Leather Belt-M", "ACCESSORIES", "MALE"),
    ] {
        tables.product_master.push(vec![
            code.into(),
            grid.into(),
            cat.into(),
            gender.into(),
            "CORE".into(),
            "39.95".into(),
            "N".into(),
            "N".into(),
        ]);
        for size in ["41", "42", "43"] {
            tables.fact_sizes.push(vec![
                first.clone(),
                code.into(),
                grid.into(),
                Channel::Wholesale.as_str().into(),
                AFFILIATES[0].into(),
                size.into(),
            ]);
        }
    }
    let host = &plans[0];
    for (code, outlet, dummy) in [("P90001", "Y", "N"), ("DUMMY0001", "N", "Y")] {
        tables.product_master.push(vec![
            code.into(),
            host.grid.raw_name().into(),
            "BOTTOMS".into(),
            if host.male { "MALE" } else { "FEMALE" }.into(),
            host.seasonality.into(),
            "9.95".into(),
            outlet.into(),
            dummy.into(),
        ]);
        for season in &config.seasons {
            tables.assortment.push(vec![season.to_string(), pgs[0].name.clone(), code.into()]);
            tables.adjusted_demand.push(vec![
                season.to_string(),
                pgs[0].name.clone(),
                code.into(),
                raw_size(&host.grid, 0, 0),
                "7".into(),
            ]);
        }
    }

    for pg in &pgs {
        tables.planning_groups.push(vec![
            pg.name.clone(),
            pg.channel.as_str().to_string(),
            pg.affiliate.clone(),
            "Levis".to_string(),
            "Director A".to_string(),
        ]);
    }
    for plan in &plans {
        let join = |v: &[String]| v.join(&LIST_SEPARATOR.to_string());
        tables.candidates.push(vec![
            plan.grid.raw_name().to_string(),
            join(plan.grid.dim1_values()),
            join(plan.grid.dim2_values()),
        ]);
    }

    let mut labels = Vec::new();
    let mut demand = Vec::new();
    let mut thresholds = Vec::with_capacity(plans.len());
    for out in outputs {
        tables.tool_selections.rows.extend(out.tool);
        tables.fact_sizes.rows.extend(out.fact);
        tables.assortment.rows.extend(out.assortment);
        tables.adjusted_demand.rows.extend(out.demand_rows);
        tables.sell_out.rows.extend(out.sell_out);
        tables.stock.rows.extend(out.stock);
        labels.extend(out.labels);
        demand.extend(out.demand);
        thresholds.push(out.threshold);
    }

    let mut description = String::new();
    let _ = write!(
        description,
        "select a cell when its distance-weighted circle-1 adjusted demand over the previous {} seasons \
         exceeds the grid's {:.4} quantile; retail planning groups keep at most {} cells on high (H) grids; \
         each (planning group, grid, cell) carries a sticky label flip with probability {}",
        config.window,
        1.0 - config.rule_fraction(),
        config.retail_cap,
        config.noise_rate
    );

    Ok(SyntheticCorpus {
        config: config.clone(),
        tables,
        planted_rule: PlantedRule {
            description,
            rule_fraction: config.rule_fraction(),
            noise_rate: config.noise_rate,
            retail_cap: config.retail_cap,
            window: config.window,
            grid_names: plans.iter().map(|p| p.grid.raw_name().to_string()).collect(),
            planning_group_names: pgs.iter().map(|p| p.name.clone()).collect(),
            thresholds,
            labels,
        },
        demand,
    })
}

/// Returns a copy of `corpus` with one kind of real-world defect injected.
pub fn inject_noise(corpus: &SyntheticCorpus, kind: NoiseKind) -> SyntheticCorpus {
    let mut out = corpus.clone();
    let mut rng = stream(corpus.config.seed, &[S_NOISE, kind as u64]);
    let t = &mut out.tables;
    match kind {
        NoiseKind::NegativeValues => {
            for table in [&mut t.sell_out, &mut t.stock] {
                let n = (table.len() / 100).max(1);
                let mut extra = Vec::with_capacity(n);
                for _ in 0..n {
                    if let Some(mut r) = table.rows.choose(&mut rng).cloned() {
                        r[4] = format!("-{}", rng.random_range(1..=20));
                        extra.push(r);
                    }
                }
                table.rows.extend(extra);
            }
        }
        NoiseKind::MissingSeason => {
            for (table, rates) in [
                (&mut t.stock, (0.98, 0.05, 0.038)),
                (&mut t.sell_out, (0.51, 0.06, 0.027)),
            ] {
                for row in &mut table.rows {
                    if rng.random_bool(rates.0) {
                        row[0].clear();
                    }
                    if rng.random_bool(rates.1) {
                        row[3].clear();
                    }
                    if rng.random_bool(rates.2) {
                        row[1].clear();
                    }
                }
            }
        }
        NoiseKind::DuplicatePg => {
            let originals = t.planning_groups.rows.clone();
            for r in &originals {
                for (brand, director) in [("Dockers", "Director A"), ("Levis", "Director B"), ("Dockers", "Director B")] {
                    let mut d = r.clone();
                    d[3] = brand.into();
                    d[4] = director.into();
                    t.planning_groups.rows.push(d);
                }
            }
            t.planning_groups.rows.push(vec![String::new(); schema::PLANNING_GROUPS.columns.len()]);
        }
        NoiseKind::DroppedStatus => {
            let candidates: BTreeMap<String, SizeGrid> = t
                .candidates
                .rows
                .iter()
                .filter_map(|r| {
                    let split = |s: &str| -> Vec<String> {
                        s.split(LIST_SEPARATOR)
                            .filter(|x| !x.is_empty())
                            .map(str::to_string)
                            .collect()
                    };
                    SizeGrid::new(&r[0], split(&r[1]), split(&r[2]))
                        .ok()
                        .map(|g| (r[0].clone(), g))
                })
                .collect();
            let mut seen = BTreeSet::new();
            let mut extra = Vec::new();
            for row in &t.tool_selections.rows {
                let key = (row[0].clone(), row[1].clone(), row[2].clone());
                if !seen.insert(key) || !rng.random_bool(0.05) {
                    continue;
                }
                let Some(grid) = candidates.get(&row[3]) else { continue };
                let c = rng.random_range(0..grid.len());
                let mut d = row.clone();
                // Only sizes the combination does not otherwise select.
                let token = grid.cells()[c].token();
                let taken = t.tool_selections.rows.iter().any(|r| {
                    r[0] == row[0]
                        && r[1] == row[1]
                        && r[2] == row[2]
                        && crate::domain::normalize_size_token(&r[4]).ok().as_deref() == Some(token.as_str())
                });
                if taken {
                    continue;
                }
                d[4] = raw_size(grid, c, 0);
                d[5] = "D".into();
                extra.push(d);
            }
            t.tool_selections.rows.extend(extra);
        }
    }
    out
}

impl SyntheticCorpus {
    /// Share of grid-level demand entries that are zero.
    pub fn zero_demand_share(&self) -> f64 {
        let zeros = self.demand.iter().filter(|d| d.units == 0).count();
        zeros as f64 / self.demand.len().max(1) as f64
    }

    /// Unit price per product code.
    pub fn product_prices(&self) -> BTreeMap<String, f64> {
        self.tables
            .product_master
            .rows
            .iter()
            .filter_map(|r| r[5].parse::<f64>().ok().map(|p| (r[0].clone(), p)))
            .collect()
    }
}
