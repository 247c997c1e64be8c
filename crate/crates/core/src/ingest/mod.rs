//! Columnar in-memory datasets, CSV ingest, tuple factors and persistence.

mod completed;
mod csvio;
mod persist;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::schema::{AnnotatedSchema, ColumnType, TableDef};

pub use completed::{CompletedJoin, JoinColumn, JoinRow, Origin, RowSource};
pub use csvio::{ingest_csv, write_table_csv, REL_COMPLETE_PREFIX, TF_PREFIX};
pub use persist::{
    cache_dir_for, load_artifact, load_completion, persist_artifact, persist_completion,
    CacheKey, ARTIFACT_MAGIC, ARTIFACT_VERSION,
};

/// A single cell value.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Value {
    Null,
    Num(f64),
    Str(String),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Num(x) => Some(*x),
            Value::Str(s) => s.parse().ok(),
            Value::Null => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Num(_) => 1,
            Value::Str(_) => 2,
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Num(a), Value::Num(b)) => a.total_cmp(b),
            (Value::Str(a), Value::Str(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl std::hash::Hash for Value {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        match self {
            Value::Null => {}
            Value::Num(x) => x.to_bits().hash(state),
            Value::Str(s) => s.hash(state),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => Ok(()),
            Value::Num(x) => write!(f, "{x}"),
            Value::Str(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ColumnData {
    Categorical(Vec<Option<String>>),
    Continuous(Vec<Option<f64>>),
    Key(Vec<Option<String>>),
}

impl ColumnData {
    pub fn empty(ty: ColumnType) -> Self {
        match ty {
            ColumnType::Categorical => ColumnData::Categorical(Vec::new()),
            ColumnType::Continuous => ColumnData::Continuous(Vec::new()),
            ColumnType::Key => ColumnData::Key(Vec::new()),
        }
    }

    pub fn ty(&self) -> ColumnType {
        match self {
            ColumnData::Categorical(_) => ColumnType::Categorical,
            ColumnData::Continuous(_) => ColumnType::Continuous,
            ColumnData::Key(_) => ColumnType::Key,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ColumnData::Categorical(v) | ColumnData::Key(v) => v.len(),
            ColumnData::Continuous(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, row: usize) -> Value {
        match self {
            ColumnData::Categorical(v) | ColumnData::Key(v) => match &v[row] {
                Some(s) => Value::Str(s.clone()),
                None => Value::Null,
            },
            ColumnData::Continuous(v) => match v[row] {
                Some(x) => Value::Num(x),
                None => Value::Null,
            },
        }
    }

    pub fn key(&self, row: usize) -> Option<&str> {
        match self {
            ColumnData::Categorical(v) | ColumnData::Key(v) => v[row].as_deref(),
            ColumnData::Continuous(_) => None,
        }
    }

    /// Appends a value, coercing it to the column type. Unparseable numbers
    /// become null.
    pub fn push(&mut self, v: &Value) {
        match self {
            ColumnData::Categorical(c) | ColumnData::Key(c) => c.push(match v {
                Value::Null => None,
                Value::Str(s) => Some(s.clone()),
                Value::Num(x) => Some(x.to_string()),
            }),
            ColumnData::Continuous(c) => c.push(v.as_f64()),
        }
    }

    pub fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Categorical(v) => {
                ColumnData::Categorical(rows.iter().map(|&r| v[r].clone()).collect())
            }
            ColumnData::Key(v) => ColumnData::Key(rows.iter().map(|&r| v[r].clone()).collect()),
            ColumnData::Continuous(v) => {
                ColumnData::Continuous(rows.iter().map(|&r| v[r]).collect())
            }
        }
    }

    fn digest(&self, hasher: &mut Sha256) {
        match self {
            ColumnData::Categorical(v) | ColumnData::Key(v) => {
                for x in v {
                    match x {
                        Some(s) => {
                            hasher.update([1u8]);
                            hasher.update((s.len() as u64).to_le_bytes());
                            hasher.update(s.as_bytes());
                        }
                        None => hasher.update([0u8]),
                    }
                }
            }
            ColumnData::Continuous(v) => {
                for x in v {
                    match x {
                        Some(f) => {
                            hasher.update([1u8]);
                            hasher.update(f.to_bits().to_le_bytes());
                        }
                        None => hasher.update([0u8]),
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(from = "TableRepr", into = "TableRepr")]
pub struct Table {
    pub name: String,
    pub primary_key: String,
    columns: Vec<(String, ColumnData)>,
    n_rows: usize,
    pk_lookup: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct TableRepr {
    name: String,
    primary_key: String,
    columns: Vec<(String, ColumnData)>,
}

impl From<TableRepr> for Table {
    fn from(r: TableRepr) -> Self {
        Table::new(r.name, r.primary_key, r.columns).expect("serialized table is valid")
    }
}

impl From<Table> for TableRepr {
    fn from(t: Table) -> Self {
        TableRepr {
            name: t.name,
            primary_key: t.primary_key,
            columns: t.columns,
        }
    }
}

impl PartialEq for Table {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.primary_key == other.primary_key
            && self.columns == other.columns
    }
}

impl Table {
    pub fn new(
        name: impl Into<String>,
        primary_key: impl Into<String>,
        columns: Vec<(String, ColumnData)>,
    ) -> Result<Self> {
        let name = name.into();
        let primary_key = primary_key.into();
        let n_rows = columns.first().map(|(_, c)| c.len()).unwrap_or(0);
        for (cname, c) in &columns {
            if c.len() != n_rows {
                return Err(Error::Schema(format!(
                    "column {name}.{cname} has {} rows, expected {n_rows}",
                    c.len()
                )));
            }
        }
        let pk_col = columns
            .iter()
            .find(|(c, _)| *c == primary_key)
            .map(|(_, c)| c)
            .ok_or_else(|| Error::Schema(format!("table {name} lacks primary key {primary_key}")))?;
        let mut pk_lookup = HashMap::with_capacity(n_rows);
        for r in 0..n_rows {
            let k = pk_col.key(r).ok_or_else(|| Error::ForeignKey {
                table: name.clone(),
                column: primary_key.clone(),
                detail: format!("null primary key at row {r}"),
            })?;
            if pk_lookup.insert(k.to_string(), r).is_some() {
                return Err(Error::ForeignKey {
                    table: name.clone(),
                    column: primary_key.clone(),
                    detail: format!("duplicate primary key {k}"),
                });
            }
        }
        Ok(Table {
            name,
            primary_key,
            columns,
            n_rows,
            pk_lookup,
        })
    }

    /// Empty table with the columns of `def`.
    pub fn empty(def: &TableDef) -> Self {
        let cols = def
            .columns
            .iter()
            .map(|c| (c.name.clone(), ColumnData::empty(c.ty)))
            .collect();
        Table::new(def.name.clone(), def.primary_key.clone(), cols).expect("empty table")
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn columns(&self) -> &[(String, ColumnData)] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&ColumnData> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, c)| c)
    }

    pub fn column_or_err(&self, name: &str) -> Result<&ColumnData> {
        self.column(name)
            .ok_or_else(|| Error::Schema(format!("unknown column {}.{name}", self.name)))
    }

    pub fn value(&self, column: &str, row: usize) -> Value {
        self.column(column).map(|c| c.value(row)).unwrap_or(Value::Null)
    }

    pub fn row_of_key(&self, key: &str) -> Option<usize> {
        self.pk_lookup.get(key).copied()
    }

    pub fn pk(&self, row: usize) -> &str {
        self.column(&self.primary_key)
            .and_then(|c| c.key(row))
            .expect("primary key present")
    }

    /// New table restricted to `rows`, in the given order.
    pub fn select(&self, rows: &[usize]) -> Table {
        let cols = self
            .columns
            .iter()
            .map(|(n, c)| (n.clone(), c.select(rows)))
            .collect();
        Table::new(self.name.clone(), self.primary_key.clone(), cols)
            .expect("subset of a valid table is valid")
    }

    /// Row indices grouped by the value of a key column.
    pub fn group_by_key(&self, column: &str) -> HashMap<String, Vec<usize>> {
        let mut out: HashMap<String, Vec<usize>> = HashMap::new();
        if let Some(c) = self.column(column) {
            for r in 0..self.n_rows {
                if let Some(k) = c.key(r) {
                    out.entry(k.to_string()).or_default().push(r);
                }
            }
        }
        out
    }
}

/// An in-memory database: tables plus per-relationship tuple factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub tables: BTreeMap<String, Table>,
    /// Relationship id → per parent row, the known number of children.
    pub tuple_factors: BTreeMap<String, Vec<Option<u32>>>,
    /// Relationship id → per parent row, whether all children are present.
    pub row_complete: BTreeMap<String, Vec<bool>>,
}

impl Dataset {
    pub fn new(tables: Vec<Table>) -> Self {
        Dataset {
            tables: tables.into_iter().map(|t| (t.name.clone(), t)).collect(),
            tuple_factors: BTreeMap::new(),
            row_complete: BTreeMap::new(),
        }
    }

    pub fn table(&self, name: &str) -> Result<&Table> {
        self.tables
            .get(name)
            .ok_or_else(|| Error::Schema(format!("dataset has no table {name}")))
    }

    pub fn tuple_factor(&self, fk_id: &str, parent_row: usize) -> Option<u32> {
        self.tuple_factors
            .get(fk_id)
            .and_then(|v| v.get(parent_row).copied().flatten())
    }

    /// Checks row-level consistency against the schema: column types,
    /// primary keys and foreign keys into complete tables.
    pub fn validate(&self, schema: &AnnotatedSchema) -> Result<()> {
        for def in &schema.tables {
            let t = self.table(&def.name)?;
            for c in &def.columns {
                let col = t.column(&c.name).ok_or_else(|| Error::SchemaMismatch {
                    file: def.name.clone(),
                    detail: format!("missing column {}", c.name),
                })?;
                if col.ty() != c.ty {
                    return Err(Error::SchemaMismatch {
                        file: def.name.clone(),
                        detail: format!("column {} has the wrong type", c.name),
                    });
                }
            }
        }
        for fk in &schema.relationships {
            if !schema.is_complete(&fk.parent_table) {
                continue;
            }
            let child = self.table(&fk.child_table)?;
            let parent = self.table(&fk.parent_table)?;
            let col = child.column_or_err(&fk.child_column)?;
            for r in 0..child.n_rows() {
                if let Some(k) = col.key(r) {
                    if parent.row_of_key(k).is_none() {
                        return Err(Error::ForeignKey {
                            table: fk.child_table.clone(),
                            column: fk.child_column.clone(),
                            detail: format!(
                                "value {k} has no match in complete table {}",
                                fk.parent_table
                            ),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Content digest over sorted per-column digests and tuple factors.
    pub fn fingerprint(&self) -> String {
        let mut parts: Vec<(String, [u8; 32])> = Vec::new();
        for (tname, t) in &self.tables {
            for (cname, c) in &t.columns {
                let mut h = Sha256::new();
                h.update(tname.as_bytes());
                h.update([0u8]);
                h.update(cname.as_bytes());
                h.update([c.ty() as u8]);
                c.digest(&mut h);
                parts.push((format!("c:{tname}.{cname}"), h.finalize().into()));
            }
        }
        for (fk, tf) in &self.tuple_factors {
            let mut h = Sha256::new();
            for v in tf {
                match v {
                    Some(x) => {
                        h.update([1u8]);
                        h.update(x.to_le_bytes());
                    }
                    None => h.update([0u8]),
                }
            }
            parts.push((format!("tf:{fk}"), h.finalize().into()));
        }
        for (fk, rc) in &self.row_complete {
            let mut h = Sha256::new();
            h.update(rc.iter().map(|b| *b as u8).collect::<Vec<_>>());
            parts.push((format!("rc:{fk}"), h.finalize().into()));
        }
        parts.sort();
        let mut h = Sha256::new();
        for (name, d) in &parts {
            h.update(name.as_bytes());
            h.update([0u8]);
            h.update(d);
        }
        hex::encode(h.finalize())
    }
}

/// Fills tuple factors: for every relationship and parent row whose children
/// are known to be complete, the tuple factor is the observed child count.
///
/// Children are known complete when the relationship is flagged complete,
/// when the child table is complete, or when the per-row completeness flag is
/// set. Other parent rows keep any externally supplied tuple factor.
pub fn compute_tuple_factors(dataset: &Dataset, schema: &AnnotatedSchema) -> Result<Dataset> {
    let mut out = dataset.clone();
    for fk in &schema.relationships {
        let id = fk.id();
        let parent = dataset.table(&fk.parent_table)?;
        let child = dataset.table(&fk.child_table)?;
        let mut counts: HashMap<&str, u32> = HashMap::new();
        let col = child.column_or_err(&fk.child_column)?;
        for r in 0..child.n_rows() {
            if let Some(k) = col.key(r) {
                *counts.entry(k).or_default() += 1;
            }
        }
        let globally = schema.relationship_complete(&id) || schema.is_complete(&fk.child_table);
        let per_row = dataset.row_complete.get(&id);
        let given = dataset.tuple_factors.get(&id);
        let tf: Vec<Option<u32>> = (0..parent.n_rows())
            .map(|r| {
                let complete = globally || per_row.map(|v| v[r]).unwrap_or(false);
                if complete {
                    Some(counts.get(parent.pk(r)).copied().unwrap_or(0))
                } else {
                    given.and_then(|g| g[r])
                }
            })
            .collect();
        out.tuple_factors.insert(id, tf);
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::schema::tests::housing;
    use proptest::prelude::*;

    pub fn keys(xs: &[&str]) -> ColumnData {
        ColumnData::Key(xs.iter().map(|s| Some(s.to_string())).collect())
    }

    pub fn cats(xs: &[&str]) -> ColumnData {
        ColumnData::Categorical(xs.iter().map(|s| Some(s.to_string())).collect())
    }

    pub fn nums(xs: &[f64]) -> ColumnData {
        ColumnData::Continuous(xs.iter().map(|x| Some(*x)).collect())
    }

    /// Housing dataset: 2 neighborhoods, 2 landlords, 4 apartments.
    pub fn housing_data() -> Dataset {
        let n = Table::new(
            "neighborhood",
            "id",
            vec![
                ("id".into(), keys(&["n1", "n2"])),
                ("density".into(), cats(&["high", "low"])),
            ],
        )
        .unwrap();
        let l = Table::new(
            "landlord",
            "id",
            vec![
                ("id".into(), keys(&["l1", "l2"])),
                ("since".into(), nums(&[2001.0, 2015.0])),
            ],
        )
        .unwrap();
        let a = Table::new(
            "apartment",
            "id",
            vec![
                ("id".into(), keys(&["a1", "a2", "a3", "a4"])),
                ("neighborhood_id".into(), keys(&["n1", "n1", "n1", "n2"])),
                ("landlord_id".into(), keys(&["l1", "l2", "l2", "l1"])),
                ("room_type".into(), cats(&["entire", "private", "entire", "shared"])),
                ("price".into(), nums(&[120.0, 60.0, 150.0, 40.0])),
            ],
        )
        .unwrap();
        Dataset::new(vec![n, l, a])
    }

    #[test]
    fn tuple_factor_from_row_flags() {
        let s = housing();
        let mut d = housing_data();
        d.row_complete
            .insert("apartment.neighborhood_id".into(), vec![true, false]);
        let d = compute_tuple_factors(&d, &s).unwrap();
        assert_eq!(d.tuple_factor("apartment.neighborhood_id", 0), Some(3));
        assert_eq!(d.tuple_factor("apartment.neighborhood_id", 1), None);
        assert_eq!(d.tuple_factor("apartment.landlord_id", 0), None);
    }

    #[test]
    fn zero_children_complete() {
        let s = crate::schema::tests::schema_from_edges(2, &[(1, 0)], &[]);
        let p = Table::new("t0", "id", vec![("id".into(), keys(&["p"])), ("a".into(), cats(&["x"]))]).unwrap();
        let c = Table::new(
            "t1",
            "id",
            vec![
                ("id".into(), keys(&[])),
                ("a".into(), cats(&[])),
                ("t0_id".into(), keys(&[])),
            ],
        )
        .unwrap();
        let d = compute_tuple_factors(&Dataset::new(vec![p, c]), &s).unwrap();
        assert_eq!(d.tuple_factor("t1.t0_id", 0), Some(0));
    }

    #[test]
    fn duplicate_primary_key_rejected() {
        let r = Table::new("t", "id", vec![("id".into(), keys(&["a", "a"]))]);
        assert!(matches!(r, Err(Error::ForeignKey { .. })));
    }

    #[test]
    fn value_ordering_is_total() {
        let mut v = vec![Value::Str("b".into()), Value::Num(2.0), Value::Null, Value::Num(-1.0)];
        v.sort();
        assert_eq!(
            v,
            vec![Value::Null, Value::Num(-1.0), Value::Num(2.0), Value::Str("b".into())]
        );
    }

    proptest! {
        #[test]
        fn tuple_factors_match_nested_loop_counts(
            n_parents in 1usize..40,
            links in proptest::collection::vec(0usize..60, 0..200),
        ) {
            let s = crate::schema::tests::schema_from_edges(2, &[(1, 0)], &[]);
            let pk: Vec<String> = (0..n_parents).map(|i| format!("p{i}")).collect();
            let parent = Table::new("t0", "id", vec![
                ("id".into(), ColumnData::Key(pk.iter().cloned().map(Some).collect())),
                ("a".into(), ColumnData::Categorical(vec![None; n_parents])),
            ]).unwrap();
            let fks: Vec<Option<String>> = links.iter().map(|&l| {
                (l < n_parents).then(|| format!("p{l}"))
            }).collect();
            let child = Table::new("t1", "id", vec![
                ("id".into(), ColumnData::Key((0..links.len()).map(|i| Some(format!("c{i}"))).collect())),
                ("a".into(), ColumnData::Categorical(vec![None; links.len()])),
                ("t0_id".into(), ColumnData::Key(fks.clone())),
            ]).unwrap();
            let d = compute_tuple_factors(&Dataset::new(vec![parent, child]), &s).unwrap();
            for (i, p) in pk.iter().enumerate() {
                let mut count = 0;
                for f in &fks {
                    if f.as_deref() == Some(p.as_str()) {
                        count += 1;
                    }
                }
                prop_assert_eq!(d.tuple_factor("t1.t0_id", i), Some(count));
            }
        }
    }
}
