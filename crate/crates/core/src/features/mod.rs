//! The labelled model table: one row per candidate cell of every
//! (season, planning group, grid) with assortment.

pub mod kpi;
pub mod neighbors;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::domain::{Category, Gender, Half, SeasonCode, SizeCell, SizeGrid};
use crate::error::{Error, Result};
use crate::ingest::CleanCorpus;
use kpi::{rolling_aggregate, KpiRecord};
use neighbors::{distance_divisor, offset_index, slot_offset, NEIGHBOR_SLOTS};

pub const POSITIONS: usize = 1 + NEIGHBOR_SLOTS;
pub const KPI_FEATURES: [&str; 3] = ["adjusted_demand", "sell_out", "sell_through"];
pub const FLAGGED_KPIS: [&str; 2] = ["sell_out", "stock"];
pub const N_CONTINUOUS: usize = KPI_FEATURES.len() * POSITIONS;
pub const N_FLAGS: usize = FLAGGED_KPIS.len() * POSITIONS;
pub const CATEGORICAL_COLUMNS: [&str; 9] = [
    "grid_name",
    "dim1",
    "dim2",
    "planning_group",
    "seasonality",
    "channel",
    "affiliate",
    "gender",
    "category",
];
pub const N_CATEGORICAL: usize = CATEGORICAL_COLUMNS.len();
pub const TARGET_COLUMN: &str = "selected";
pub const SEASON_COLUMN: &str = "season";
/// Fields per row excluding the season key.
pub const ROW_ARITY: usize = N_CONTINUOUS + N_FLAGS + N_CATEGORICAL + 1;

/// Seasons from this one on are incomplete and never enter the model table.
pub const INCOMPLETE_FROM: SeasonCode = match SeasonCode::const_new(21, Half::SpringSummer) {
    Some(s) => s,
    None => panic!("valid season"),
};

pub fn position_name(k: usize) -> String {
    if k == 0 {
        "self".to_string()
    } else {
        format!("n{k}")
    }
}

pub fn continuous_columns() -> Vec<String> {
    KPI_FEATURES
        .iter()
        .flat_map(|kpi| (0..POSITIONS).map(move |k| format!("{kpi}_{}", position_name(k))))
        .collect()
}

pub fn flag_columns() -> Vec<String> {
    FLAGGED_KPIS
        .iter()
        .flat_map(|kpi| (0..POSITIONS).map(move |k| format!("{kpi}_missing_{}", position_name(k))))
        .collect()
}

/// Full CSV header of the model table.
pub fn header() -> Vec<String> {
    let mut h = vec![SEASON_COLUMN.to_string()];
    h.extend(continuous_columns());
    h.extend(flag_columns());
    h.extend(CATEGORICAL_COLUMNS.iter().map(|c| c.to_string()));
    h.push(TARGET_COLUMN.to_string());
    h
}

/// One labelled candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub season: SeasonCode,
    pub continuous: Vec<f64>,
    pub flags: Vec<u8>,
    pub categorical: Vec<String>,
    pub target: u8,
}

impl FeatureRow {
    /// Number of model fields (continuous, flags, categoricals, target).
    pub fn arity(&self) -> usize {
        self.continuous.len() + self.flags.len() + self.categorical.len() + 1
    }
}

/// Row-major columnar store of feature rows. Categoricals are dictionary
/// coded per column.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureTable {
    pub seasons: Vec<SeasonCode>,
    pub continuous: Vec<f64>,
    pub flags: Vec<u8>,
    pub categorical: Vec<u32>,
    pub levels: Vec<Vec<String>>,
    pub target: Vec<u8>,
    lookup: Vec<HashMap<String, u32>>,
}

impl FeatureTable {
    pub fn new() -> Self {
        FeatureTable {
            levels: vec![Vec::new(); N_CATEGORICAL],
            lookup: vec![HashMap::new(); N_CATEGORICAL],
            ..FeatureTable::default()
        }
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    fn intern(&mut self, col: usize, v: &str) -> u32 {
        if let Some(&c) = self.lookup[col].get(v) {
            return c;
        }
        let c = self.levels[col].len() as u32;
        self.levels[col].push(v.to_string());
        self.lookup[col].insert(v.to_string(), c);
        c
    }

    pub fn push_parts(&mut self, season: SeasonCode, continuous: &[f64], flags: &[u8], categorical: &[&str], target: u8) {
        assert_eq!(continuous.len(), N_CONTINUOUS);
        assert_eq!(flags.len(), N_FLAGS);
        assert_eq!(categorical.len(), N_CATEGORICAL);
        self.seasons.push(season);
        self.continuous.extend_from_slice(continuous);
        self.flags.extend_from_slice(flags);
        for (col, v) in categorical.iter().enumerate() {
            let c = self.intern(col, v);
            self.categorical.push(c);
        }
        self.target.push(target);
    }

    pub fn push(&mut self, row: &FeatureRow) {
        let cats: Vec<&str> = row.categorical.iter().map(String::as_str).collect();
        self.push_parts(row.season, &row.continuous, &row.flags, &cats, row.target);
    }

    pub fn continuous_row(&self, k: usize) -> &[f64] {
        &self.continuous[k * N_CONTINUOUS..(k + 1) * N_CONTINUOUS]
    }

    pub fn flag_row(&self, k: usize) -> &[u8] {
        &self.flags[k * N_FLAGS..(k + 1) * N_FLAGS]
    }

    pub fn category_code(&self, k: usize, col: usize) -> u32 {
        self.categorical[k * N_CATEGORICAL + col]
    }

    pub fn category(&self, k: usize, col: usize) -> &str {
        &self.levels[col][self.category_code(k, col) as usize]
    }

    pub fn row(&self, k: usize) -> FeatureRow {
        FeatureRow {
            season: self.seasons[k],
            continuous: self.continuous_row(k).to_vec(),
            flags: self.flag_row(k).to_vec(),
            categorical: (0..N_CATEGORICAL).map(|c| self.category(k, c).to_string()).collect(),
            target: self.target[k],
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = FeatureRow> + '_ {
        (0..self.len()).map(|k| self.row(k))
    }

    /// Sub-table of the given rows, keeping the categorical dictionaries.
    pub fn select(&self, idx: &[usize]) -> FeatureTable {
        let mut out = FeatureTable {
            levels: self.levels.clone(),
            lookup: self.lookup.clone(),
            ..FeatureTable::default()
        };
        out.seasons.reserve(idx.len());
        out.continuous.reserve(idx.len() * N_CONTINUOUS);
        for &k in idx {
            out.seasons.push(self.seasons[k]);
            out.continuous.extend_from_slice(self.continuous_row(k));
            out.flags.extend_from_slice(self.flag_row(k));
            out.categorical
                .extend_from_slice(&self.categorical[k * N_CATEGORICAL..(k + 1) * N_CATEGORICAL]);
            out.target.push(self.target[k]);
        }
        out
    }

    pub fn positive_count(&self) -> usize {
        self.target.iter().filter(|&&t| t == 1).count()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(header())?;
        let mut rec: Vec<String> = Vec::with_capacity(ROW_ARITY + 1);
        for k in 0..self.len() {
            rec.clear();
            rec.push(self.seasons[k].to_string());
            rec.extend(self.continuous_row(k).iter().map(|v| v.to_string()));
            rec.extend(self.flag_row(k).iter().map(|v| v.to_string()));
            rec.extend((0..N_CATEGORICAL).map(|c| self.category(k, c).to_string()));
            rec.push(self.target[k].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, origin: &Path) -> Result<FeatureTable> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let expected = header();
        let found: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::csv(origin, e))?
            .iter()
            .map(str::to_string)
            .collect();
        if found != expected {
            return Err(Error::SchemaMismatch {
                table: "features".into(),
                reason: format!("expected {} columns in the documented order, found {}", expected.len(), found.len()),
            });
        }
        let bad = |line: usize, what: &str| Error::SchemaMismatch {
            table: "features".into(),
            reason: format!("record {line}: bad {what}"),
        };
        let mut t = FeatureTable::new();
        let mut cont = vec![0.0; N_CONTINUOUS];
        let mut flags = vec![0u8; N_FLAGS];
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::csv(origin, e))?;
            let season: SeasonCode = rec[0].parse()?;
            for (k, v) in cont.iter_mut().enumerate() {
                *v = rec[1 + k].parse().map_err(|_| bad(line, "continuous value"))?;
            }
            for (k, v) in flags.iter_mut().enumerate() {
                *v = rec[1 + N_CONTINUOUS + k].parse().map_err(|_| bad(line, "flag"))?;
            }
            let base = 1 + N_CONTINUOUS + N_FLAGS;
            let cats: Vec<&str> = (0..N_CATEGORICAL).map(|c| &rec[base + c]).collect();
            let target: u8 = rec[base + N_CATEGORICAL].parse().map_err(|_| bad(line, "target"))?;
            t.push_parts(season, &cont, &flags, &cats, target);
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f)).map_err(|e| Error::csv(path, e))
    }

    pub fn load(path: &Path) -> Result<FeatureTable> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        FeatureTable::read_csv(std::io::BufReader::new(f), path)
    }
}

pub fn enumerate_candidates(grid: &SizeGrid) -> Vec<SizeCell> {
    grid.cells().to_vec()
}

/// Target per candidate cell: 1 when its size token is in `selected`.
pub fn label_targets(
    grid: &SizeGrid,
    selected: &BTreeSet<String>,
    season: SeasonCode,
    planning_group: &str,
) -> Result<Vec<u8>> {
    let mut target = vec![0u8; grid.len()];
    for token in selected {
        match grid.index_of_token(token) {
            Some(c) => target[c] = 1,
            None => {
                return Err(Error::SelectionOutsideGrid {
                    season: season.code(),
                    planning_group: planning_group.to_string(),
                    grid: grid.raw_name().to_string(),
                    size: token.clone(),
                })
            }
        }
    }
    Ok(target)
}

fn gender_token(g: Gender) -> &'static str {
    match g {
        Gender::M => "M",
        Gender::W => "W",
    }
}

fn category_token(c: Category) -> &'static str {
    match c {
        Category::T => "T",
        Category::B => "B",
    }
}

/// Rows of one (season, planning group, grid) before dictionary coding.
struct Block {
    season: SeasonCode,
    grid: u16,
    continuous: Vec<f64>,
    flags: Vec<u8>,
    target: Vec<u8>,
}

fn grid_block(
    grid: &SizeGrid,
    season: SeasonCode,
    rolled: &BTreeMap<(SeasonCode, u16), &KpiRecord>,
    selected_before: &[bool],
    target: Vec<u8>,
) -> (Vec<f64>, Vec<u8>, Vec<u8>) {
    let n = grid.len();
    let mut kpis = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut missing = [vec![0u8; n], vec![0u8; n]];
    for c in 0..n {
        let r = rolled.get(&(season, c as u16));
        let so = r.and_then(|r| r.sell_out);
        let st = r.and_then(|r| r.stock);
        kpis[0][c] = r.and_then(|r| r.adjusted_demand).unwrap_or(0.0);
        kpis[1][c] = so.unwrap_or(0.0);
        kpis[2][c] = r.and_then(|r| r.sell_through).unwrap_or(0.0);
        missing[0][c] = (so.is_none() && selected_before[c]) as u8;
        missing[1][c] = (st.is_none() && selected_before[c]) as u8;
    }
    let mut continuous = Vec::with_capacity(n * N_CONTINUOUS);
    let mut flags = Vec::with_capacity(n * N_FLAGS);
    let cells = grid.cells();
    let neighbours: Vec<[Option<usize>; NEIGHBOR_SLOTS]> = cells
        .iter()
        .map(|cell| std::array::from_fn(|k| offset_index(grid, cell.i, cell.j, slot_offset(k))))
        .collect();
    for (c, cell) in cells.iter().enumerate() {
        for values in &kpis {
            continuous.push(values[c]);
            for nb in &neighbours[c] {
                continuous.push(match nb {
                    Some(m) => values[*m] / distance_divisor(cells[*m].manhattan(cell)),
                    None => 0.0,
                });
            }
        }
        for m in &missing {
            flags.push(m[c]);
            for nb in &neighbours[c] {
                flags.push(match nb {
                    Some(k) => m[*k],
                    None => 1,
                });
            }
        }
    }
    (continuous, flags, target)
}

/// Joins rolled KPIs, neighbour features, flags and labels for every
/// candidate. Rows are ordered by planning group, season, grid and cell.
pub fn assemble_feature_table(corpus: &CleanCorpus, window: usize) -> Result<FeatureTable> {
    let mut by_series: BTreeMap<(u16, u16), Vec<KpiRecord>> = BTreeMap::new();
    for (k, v) in &corpus.kpis {
        by_series
            .entry((k.planning_group, k.grid))
            .or_default()
            .push(KpiRecord::new(*k, *v));
    }
    let mut combos: BTreeMap<(u16, u16), Vec<SeasonCode>> = BTreeMap::new();
    for &(s, p, g) in &corpus.assortment {
        if s < INCOMPLETE_FROM {
            combos.entry((p, g)).or_default().push(s);
        }
    }

    let partitions: Vec<Result<Vec<Block>>> = (0..corpus.planning_groups.len() as u16)
        .into_par_iter()
        .map(|p| {
            let pg_name = &corpus.planning_groups[p as usize].name;
            let mut blocks = Vec::new();
            for (&(_, g), seasons) in combos.range((p, 0)..=(p, u16::MAX)) {
                let grid = &corpus.grids[g as usize];
                let empty = Vec::new();
                let records = by_series.get(&(p, g)).unwrap_or(&empty);
                let rolled_vec = rolling_aggregate(records, window, seasons);
                let rolled: BTreeMap<(SeasonCode, u16), &KpiRecord> = rolled_vec
                    .iter()
                    .map(|r| ((r.key.season, r.key.cell), r))
                    .collect();
                let history: Vec<(SeasonCode, &BTreeSet<String>)> = corpus
                    .history
                    .range((SeasonCode::MIN, p, g)..)
                    .filter(|((_, hp, hg), _)| *hp == p && *hg == g)
                    .map(|((s, _, _), sizes)| (*s, sizes))
                    .collect();
                for &season in seasons {
                    let none = BTreeSet::new();
                    let current = history
                        .iter()
                        .find(|(s, _)| *s == season)
                        .map(|(_, sz)| *sz)
                        .unwrap_or(&none);
                    let target = label_targets(grid, current, season, pg_name)?;
                    let mut before = vec![false; grid.len()];
                    for (s, sizes) in &history {
                        if *s < season {
                            for t in label_targets(grid, sizes, *s, pg_name)?
                                .iter()
                                .enumerate()
                                .filter(|(_, &v)| v == 1)
                            {
                                before[t.0] = true;
                            }
                        }
                    }
                    let (continuous, flags, target) = grid_block(grid, season, &rolled, &before, target);
                    blocks.push(Block {
                        season,
                        grid: g,
                        continuous,
                        flags,
                        target,
                    });
                }
            }
            blocks.sort_by_key(|b| (b.season, b.grid));
            Ok(blocks)
        })
        .collect();

    let mut table = FeatureTable::new();
    for (p, part) in partitions.into_iter().enumerate() {
        let pg = &corpus.planning_groups[p];
        for b in part? {
            let grid = &corpus.grids[b.grid as usize];
            let attrs = &corpus.grid_attributes[b.grid as usize];
            for (c, cell) in grid.cells().iter().enumerate() {
                let cats = [
                    grid.raw_name(),
                    cell.dim1.as_str(),
                    cell.dim2.as_deref().unwrap_or(""),
                    pg.name.as_str(),
                    attrs.seasonality.as_str(),
                    pg.channel.as_str(),
                    pg.affiliate.as_str(),
                    gender_token(attrs.gender),
                    category_token(attrs.category),
                ];
                table.push_parts(
                    b.season,
                    &b.continuous[c * N_CONTINUOUS..(c + 1) * N_CONTINUOUS],
                    &b.flags[c * N_FLAGS..(c + 1) * N_FLAGS],
                    &cats,
                    b.target[c],
                );
            }
        }
    }
    Ok(table)
}
