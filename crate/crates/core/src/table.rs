//! Text tables as read from and written to CSV, plus the raw input bundle.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Expected columns of one input table.
#[derive(Debug, Clone, Copy)]
pub struct Schema {
    pub name: &'static str,
    pub columns: &'static [&'static str],
}

pub mod schema {
    use super::Schema;

    pub const PRODUCT_MASTER: Schema = Schema {
        name: "product_master",
        columns: &[
            "product_code",
            "grid_name",
            "category",
            "gender",
            "seasonality",
            "unit_price",
            "outlet",
            "dummy",
        ],
    };
    pub const PLANNING_GROUPS: Schema = Schema {
        name: "planning_groups",
        columns: &["planning_group", "channel", "affiliate", "brand", "director"],
    };
    pub const TOOL_SELECTIONS: Schema = Schema {
        name: "tool_selections",
        columns: &["season", "planning_group", "product_code", "grid_name", "size", "status"],
    };
    pub const FACT_SIZES: Schema = Schema {
        name: "fact_sizes",
        columns: &["season", "product_code", "grid_name", "channel", "affiliate", "size"],
    };
    pub const ASSORTMENT: Schema = Schema {
        name: "assortment",
        columns: &["season", "planning_group", "product_code"],
    };
    pub const ADJUSTED_DEMAND: Schema = Schema {
        name: "adjusted_demand",
        columns: &["season", "planning_group", "product_code", "size", "quantity"],
    };
    pub const SELL_OUT: Schema = Schema {
        name: "sell_out",
        columns: &["season", "planning_group", "product_code", "size", "quantity"],
    };
    pub const STOCK: Schema = Schema {
        name: "stock",
        columns: &["season", "planning_group", "product_code", "size", "quantity"],
    };
    pub const CANDIDATES: Schema = Schema {
        name: "candidates",
        columns: &["grid_name", "dim1", "dim2"],
    };
    pub const SELECTION_HISTORY: Schema = Schema {
        name: "selection_history",
        columns: &["season", "planning_group", "grid_name", "size"],
    };

    /// Every table a raw corpus directory holds, in write order.
    pub const RAW: [Schema; 9] = [
        PRODUCT_MASTER,
        PLANNING_GROUPS,
        TOOL_SELECTIONS,
        FACT_SIZES,
        ASSORTMENT,
        ADJUSTED_DEMAND,
        SELL_OUT,
        STOCK,
        CANDIDATES,
    ];
}

/// Separator used inside list-valued cells such as candidate dimensions.
pub const LIST_SEPARATOR: char = ';';

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTable {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn new(schema: Schema) -> Self {
        RawTable {
            name: schema.name.to_string(),
            columns: schema.columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_rows(schema: Schema, rows: Vec<Vec<String>>) -> Result<Self> {
        let t = RawTable {
            rows,
            ..RawTable::new(schema)
        };
        t.check_arity()?;
        Ok(t)
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    fn check_arity(&self) -> Result<()> {
        if let Some((k, row)) = self
            .rows
            .iter()
            .enumerate()
            .find(|(_, r)| r.len() != self.columns.len())
        {
            return Err(Error::SchemaMismatch {
                table: self.name.clone(),
                reason: format!(
                    "row {k} has {} fields, expected {}",
                    row.len(),
                    self.columns.len()
                ),
            });
        }
        Ok(())
    }

    /// Reorders columns to `schema`, failing if any expected column is absent.
    pub fn project(self, schema: Schema) -> Result<RawTable> {
        let mut idx = Vec::with_capacity(schema.columns.len());
        for col in schema.columns {
            match self.columns.iter().position(|c| c == col) {
                Some(k) => idx.push(k),
                None => {
                    return Err(Error::SchemaMismatch {
                        table: schema.name.to_string(),
                        reason: format!("missing column {col:?}"),
                    })
                }
            }
        }
        let rows = self
            .rows
            .into_iter()
            .map(|r| idx.iter().map(|&k| r[k].clone()).collect())
            .collect();
        Ok(RawTable {
            name: schema.name.to_string(),
            columns: schema.columns.iter().map(|c| c.to_string()).collect(),
            rows,
        })
    }

    pub fn read_csv<R: Read>(name: &str, reader: R, origin: &Path) -> Result<RawTable> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let columns: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::csv(origin, e))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| match e.kind() {
                csv::ErrorKind::UnequalLengths { .. } => Error::SchemaMismatch {
                    table: name.to_string(),
                    reason: e.to_string(),
                },
                _ => Error::csv(origin, e),
            })?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        let t = RawTable {
            name: name.to_string(),
            columns,
            rows,
        };
        t.check_arity()?;
        Ok(t)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
            .map_err(|e| Error::csv(path, e))
    }
}

/// Loads a CSV file and validates it against `schema` by column name.
pub fn load_table(path: &Path, schema: Schema) -> Result<RawTable> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    RawTable::read_csv(schema.name, std::io::BufReader::new(f), path)?.project(schema)
}

/// All raw input tables of one corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCorpus {
    pub product_master: RawTable,
    pub planning_groups: RawTable,
    pub tool_selections: RawTable,
    pub fact_sizes: RawTable,
    pub assortment: RawTable,
    pub adjusted_demand: RawTable,
    pub sell_out: RawTable,
    pub stock: RawTable,
    pub candidates: RawTable,
}

impl RawCorpus {
    pub fn empty() -> Self {
        use schema::*;
        RawCorpus {
            product_master: RawTable::new(PRODUCT_MASTER),
            planning_groups: RawTable::new(PLANNING_GROUPS),
            tool_selections: RawTable::new(TOOL_SELECTIONS),
            fact_sizes: RawTable::new(FACT_SIZES),
            assortment: RawTable::new(ASSORTMENT),
            adjusted_demand: RawTable::new(ADJUSTED_DEMAND),
            sell_out: RawTable::new(SELL_OUT),
            stock: RawTable::new(STOCK),
            candidates: RawTable::new(CANDIDATES),
        }
    }

    pub fn tables(&self) -> [&RawTable; 9] {
        [
            &self.product_master,
            &self.planning_groups,
            &self.tool_selections,
            &self.fact_sizes,
            &self.assortment,
            &self.adjusted_demand,
            &self.sell_out,
            &self.stock,
            &self.candidates,
        ]
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for t in self.tables() {
            t.save(&dir.join(format!("{}.csv", t.name)))?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<RawCorpus> {
        use schema::*;
        let load = |s: Schema| load_table(&dir.join(format!("{}.csv", s.name)), s);
        Ok(RawCorpus {
            product_master: load(PRODUCT_MASTER)?,
            planning_groups: load(PLANNING_GROUPS)?,
            tool_selections: load(TOOL_SELECTIONS)?,
            fact_sizes: load(FACT_SIZES)?,
            assortment: load(ASSORTMENT)?,
            adjusted_demand: load(ADJUSTED_DEMAND)?,
            sell_out: load(SELL_OUT)?,
            stock: load(STOCK)?,
            candidates: load(CANDIDATES)?,
        })
    }
}
