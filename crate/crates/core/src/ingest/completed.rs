use std::collections::HashSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Value;
use crate::schema::ColumnType;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    Existing,
    Synthesized,
}

/// Where the part of a joined row belonging to one table came from.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RowSource {
    /// Row index in the dataset table.
    Existing(usize),
    /// Synthesized, then replaced by the nearest existing row.
    Replaced { row: usize, synth: u64 },
    /// Synthesized. `key` is the dangling foreign-key value it stands in for.
    Synthesized { id: u64, key: Option<String> },
}

impl RowSource {
    pub fn is_existing(&self) -> bool {
        matches!(self, RowSource::Existing(_))
    }

    /// Existing row index, including replaced rows.
    pub fn dataset_row(&self) -> Option<usize> {
        match self {
            RowSource::Existing(r) | RowSource::Replaced { row: r, .. } => Some(*r),
            RowSource::Synthesized { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinColumn {
    pub table: String,
    pub column: String,
    pub ty: ColumnType,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JoinRow {
    pub values: Vec<Value>,
    /// One source per table of the join path.
    pub sources: Vec<RowSource>,
    pub origin: Origin,
    pub weight: f64,
    /// Per column; 1 for observed values.
    pub certainty: Vec<f64>,
}

/// A join over a table path where missing rows may have been synthesized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletedJoin {
    pub path: Vec<String>,
    pub columns: Vec<JoinColumn>,
    pub rows: Vec<JoinRow>,
    /// Parent rows whose known or predicted tuple factor was below the
    /// number of children already present.
    pub negative_deficits: u64,
}

impl CompletedJoin {
    pub fn column_index(&self, table: &str, column: &str) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.table == table && c.column == column)
    }

    pub fn table_index(&self, table: &str) -> Option<usize> {
        self.path.iter().position(|t| t == table)
    }

    pub fn existing_count(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.origin == Origin::Existing)
            .count()
    }

    pub fn synthesized_count(&self) -> usize {
        self.rows.len() - self.existing_count()
    }

    pub fn weighted_count(&self) -> f64 {
        self.rows.iter().map(|r| r.weight).sum()
    }

    /// Weighted share of synthesized rows.
    pub fn synthesized_fraction(&self) -> f64 {
        let total = self.weighted_count();
        if total <= 0.0 {
            return 0.0;
        }
        let synth: f64 = self
            .rows
            .iter()
            .filter(|r| r.origin == Origin::Synthesized)
            .map(|r| r.weight)
            .sum();
        (synth / total).clamp(0.0, 1.0)
    }

    /// Restricts to the columns of `tables` (a sub-path) and removes rows that
    /// become duplicates by source. The first occurrence is kept.
    pub fn project(&self, tables: &[String]) -> Result<CompletedJoin> {
        let idx: Vec<usize> = tables
            .iter()
            .map(|t| {
                self.table_index(t)
                    .ok_or_else(|| Error::Completion(format!("{t} is not on the join path")))
            })
            .collect::<Result<_>>()?;
        let cols: Vec<usize> = tables
            .iter()
            .flat_map(|t| {
                self.columns
                    .iter()
                    .enumerate()
                    .filter(move |(_, c)| &c.table == t)
                    .map(|(i, _)| i)
            })
            .collect();
        let mut seen: HashSet<Vec<RowSource>> = HashSet::new();
        let mut rows = Vec::new();
        for r in &self.rows {
            let sources: Vec<RowSource> = idx.iter().map(|&i| r.sources[i].clone()).collect();
            if !seen.insert(sources.clone()) {
                continue;
            }
            let origin = if sources.iter().all(|s| s.is_existing()) {
                Origin::Existing
            } else {
                Origin::Synthesized
            };
            rows.push(JoinRow {
                values: cols.iter().map(|&c| r.values[c].clone()).collect(),
                certainty: cols.iter().map(|&c| r.certainty[c]).collect(),
                sources,
                origin,
                weight: r.weight,
            });
        }
        Ok(CompletedJoin {
            path: tables.to_vec(),
            columns: cols.iter().map(|&c| self.columns[c].clone()).collect(),
            rows,
            negative_deficits: self.negative_deficits,
        })
    }

    /// CSV export with `__origin` and `__weight` columns.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = self
            .columns
            .iter()
            .map(|c| format!("{}.{}", c.table, c.column))
            .collect();
        header.push("__origin".into());
        header.push("__weight".into());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec: Vec<String> = r.values.iter().map(|v| v.to_string()).collect();
            rec.push(match r.origin {
                Origin::Existing => "existing".into(),
                Origin::Synthesized => "synthesized".into(),
            });
            rec.push(r.weight.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}
