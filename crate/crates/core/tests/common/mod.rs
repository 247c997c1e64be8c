//! Random complete databases, random aggregate queries as SQL text, and a
//! nested-loop evaluator that shares no code with the engine.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relcomp_core::ingest::{compute_tuple_factors, ColumnData, Dataset, Table, Value};
use relcomp_core::schema::{parse_annotation, AnnotatedSchema};

const CATEGORIES: [&str; 3] = ["x", "y", "z"];

/// A generated database: table `t{i}` references `t{parent[i]}`.
pub struct RandomDb {
    pub schema: AnnotatedSchema,
    pub dataset: Dataset,
    pub parent: Vec<Option<usize>>,
    /// Per table, rows of (id, c, v, parent key).
    pub rows: Vec<Vec<RawRow>>,
}

#[derive(Clone, Debug)]
pub struct RawRow {
    pub id: String,
    pub c: Option<String>,
    pub v: Option<i64>,
    pub fk: Option<String>,
}

fn maybe<T>(rng: &mut ChaCha8Rng, p_null: f64, v: T) -> Option<T> {
    (rng.random::<f64>() >= p_null).then_some(v)
}

/// Up to three tables in a tree, each with a key, a categorical `c`, an
/// integer-valued continuous `v` and a key column per parent. A few values
/// are NULL. At most `max_rows` rows per table.
pub fn random_db(seed: u64, max_rows: usize) -> RandomDb {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=3usize);
    let parent: Vec<Option<usize>> = (0..n).map(|i| (i > 0).then(|| rng.random_range(0..i))).collect();
    let mut tables_json = Vec::new();
    let mut fks_json = Vec::new();
    for i in 0..n {
        let mut cols = vec![
            r#"{"name": "id", "type": "key", "pk": true}"#.to_string(),
            r#"{"name": "c", "type": "categorical"}"#.to_string(),
            r#"{"name": "v", "type": "continuous"}"#.to_string(),
        ];
        if let Some(p) = parent[i] {
            cols.push(format!(r#"{{"name": "t{p}_id", "type": "key"}}"#));
            fks_json.push(format!(r#"{{"child": "t{i}.t{p}_id", "parent": "t{p}.id"}}"#));
        }
        tables_json.push(format!(r#"{{"name": "t{i}", "columns": [{}]}}"#, cols.join(", ")));
    }
    let json = format!(
        r#"{{"tables": [{}], "foreign_keys": [{}], "incomplete_tables": []}}"#,
        tables_json.join(", "),
        fks_json.join(", ")
    );
    let schema = parse_annotation(&json).expect("generated schema is valid");

    let mut rows: Vec<Vec<RawRow>> = Vec::new();
    for i in 0..n {
        let count = rng.random_range(1..=max_rows);
        let mut t = Vec::with_capacity(count);
        for r in 0..count {
            let c = CATEGORIES.choose(&mut rng).unwrap().to_string();
            let c = maybe(&mut rng, 0.05, c);
            let v = rng.random_range(0..10i64);
            let v = maybe(&mut rng, 0.05, v);
            let fk = parent[i].and_then(|p| {
                let k = rows[p].choose(&mut rng).unwrap().id.clone();
                maybe(&mut rng, 0.05, k)
            });
            t.push(RawRow { id: format!("t{i}r{r}"), c, v, fk });
        }
        rows.push(t);
    }
    let tables = rows
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut cols = vec![
                ("id".to_string(), ColumnData::Key(t.iter().map(|r| Some(r.id.clone())).collect())),
                ("c".to_string(), ColumnData::Categorical(t.iter().map(|r| r.c.clone()).collect())),
                ("v".to_string(), ColumnData::Continuous(t.iter().map(|r| r.v.map(|x| x as f64)).collect())),
            ];
            if let Some(p) = parent[i] {
                cols.push((format!("t{p}_id"), ColumnData::Key(t.iter().map(|r| r.fk.clone()).collect())));
            }
            Table::new(&format!("t{i}"), "id", cols).expect("generated table is valid")
        })
        .collect();
    let dataset = compute_tuple_factors(&Dataset::new(tables), &schema).expect("complete data");
    RandomDb { schema, dataset, parent, rows }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Agg {
    Count,
    Sum(usize),
    Avg(usize),
}

#[derive(Clone, Debug)]
pub enum Filter {
    C { table: usize, op: &'static str, value: String },
    V { table: usize, op: &'static str, value: i64 },
}

#[derive(Clone, Debug)]
pub struct RandomQuery {
    pub tables: Vec<usize>,
    pub filters: Vec<Filter>,
    pub group_by: Option<usize>,
    pub agg: Agg,
}

const OPS: [&str; 6] = ["=", "<>", "<", "<=", ">", ">="];

fn adjacent(db: &RandomDb, a: usize, b: usize) -> bool {
    db.parent[a] == Some(b) || db.parent[b] == Some(a)
}

/// A connected set of tables with up to two filters, an optional grouping
/// column and one aggregate.
pub fn random_query(db: &RandomDb, seed: u64) -> RandomQuery {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa11ce);
    let n = db.rows.len();
    let mut tables = vec![rng.random_range(0..n)];
    let want = rng.random_range(1..=n);
    while tables.len() < want {
        let next: Vec<usize> =
            (0..n).filter(|t| !tables.contains(t) && tables.iter().any(|&q| adjacent(db, q, *t))).collect();
        match next.choose(&mut rng) {
            Some(&t) => tables.push(t),
            None => break,
        }
    }
    let mut filters = Vec::new();
    for _ in 0..rng.random_range(0..=2) {
        let table = *tables.choose(&mut rng).unwrap();
        if rng.random_bool(0.5) {
            let op = if rng.random_bool(0.7) { "=" } else { "<>" };
            filters.push(Filter::C { table, op, value: CATEGORIES.choose(&mut rng).unwrap().to_string() });
        } else {
            filters.push(Filter::V { table, op: OPS.choose(&mut rng).unwrap(), value: rng.random_range(0..10) });
        }
    }
    let group_by = rng.random_bool(0.5).then(|| *tables.choose(&mut rng).unwrap());
    let agg_table = *tables.choose(&mut rng).unwrap();
    let agg = match rng.random_range(0..3) {
        0 => Agg::Count,
        1 => Agg::Sum(agg_table),
        _ => Agg::Avg(agg_table),
    };
    RandomQuery { tables, filters, group_by, agg }
}

impl RandomQuery {
    pub fn sql(&self) -> String {
        let agg = match self.agg {
            Agg::Count => "COUNT(*)".to_string(),
            Agg::Sum(t) => format!("SUM(t{t}.v)"),
            Agg::Avg(t) => format!("AVG(t{t}.v)"),
        };
        let select = match self.group_by {
            Some(g) => format!("t{g}.c, {agg}"),
            None => agg,
        };
        let from: Vec<String> = self.tables.iter().map(|t| format!("t{t}")).collect();
        let mut sql = format!("SELECT {select} FROM {}", from.join(", "));
        let preds: Vec<String> = self
            .filters
            .iter()
            .map(|f| match f {
                Filter::C { table, op, value } => format!("t{table}.c {op} '{value}'"),
                Filter::V { table, op, value } => format!("t{table}.v {op} {value}"),
            })
            .collect();
        if !preds.is_empty() {
            sql.push_str(&format!(" WHERE {}", preds.join(" AND ")));
        }
        if let Some(g) = self.group_by {
            sql.push_str(&format!(" GROUP BY t{g}.c"));
        }
        sql
    }
}

fn compare<T: PartialOrd>(a: &T, op: &str, b: &T) -> bool {
    match op {
        "=" => a == b,
        "<>" => a != b,
        "<" => a < b,
        "<=" => a <= b,
        ">" => a > b,
        ">=" => a >= b,
        _ => unreachable!(),
    }
}

/// Group value (`None` is SQL NULL) to aggregate value, by enumerating
/// every combination of rows of the query tables.
pub fn nested_loop(db: &RandomDb, q: &RandomQuery) -> BTreeMap<Option<Option<String>>, Option<f64>> {
    let mut acc: BTreeMap<Option<Option<String>>, (f64, f64, usize)> = BTreeMap::new();
    if q.group_by.is_none() {
        acc.insert(None, (0.0, 0.0, 0));
    }
    let mut pick = vec![0usize; q.tables.len()];
    loop {
        let row = |t: usize| &db.rows[t][pick[q.tables.iter().position(|x| *x == t).unwrap()]];
        let joined = q.tables.iter().all(|&t| match db.parent[t] {
            Some(p) if q.tables.contains(&p) => row(t).fk.as_deref() == Some(row(p).id.as_str()),
            _ => true,
        });
        let passes = joined
            && q.filters.iter().all(|f| match f {
                Filter::C { table, op, value } => row(*table).c.as_ref().is_some_and(|c| compare(c, op, value)),
                Filter::V { table, op, value } => row(*table).v.is_some_and(|v| compare(&v, op, value)),
            });
        if passes {
            let key = q.group_by.map(|g| row(g).c.clone());
            let e = acc.entry(key).or_insert((0.0, 0.0, 0));
            e.0 += 1.0;
            let v = match q.agg {
                Agg::Count => None,
                Agg::Sum(t) | Agg::Avg(t) => row(t).v,
            };
            if let Some(v) = v {
                e.1 += v as f64;
                e.2 += 1;
            }
        }
        // Next combination, odometer style.
        let mut k = 0;
        loop {
            if k == pick.len() {
                return acc
                    .into_iter()
                    .map(|(g, (count, sum, n))| {
                        let out = match q.agg {
                            Agg::Count => Some(count),
                            Agg::Sum(_) => (n > 0).then_some(sum),
                            Agg::Avg(_) => (n > 0).then(|| sum / n as f64),
                        };
                        (g, out)
                    })
                    .collect();
            }
            pick[k] += 1;
            if pick[k] < db.rows[q.tables[k]].len() {
                break;
            }
            pick[k] = 0;
            k += 1;
        }
    }
}

/// Converts an engine group key to the oracle's representation.
pub fn group_key(group: &[Value]) -> Option<Option<String>> {
    group.first().map(|v| match v {
        Value::Null => None,
        other => Some(other.to_string()),
    })
}
