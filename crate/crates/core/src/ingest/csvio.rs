use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::{ColumnData, Dataset, Table, Value};
use crate::schema::{AnnotatedSchema, ColumnType};

/// Optional boolean column on a parent table: all children across the named
/// relationship are present for this row.
pub const REL_COMPLETE_PREFIX: &str = "__rel_complete_";
/// Optional integer column on a parent table: externally known child count.
pub const TF_PREFIX: &str = "__tf_";

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "t" | "yes" | "y" => Some(true),
        "0" | "false" | "f" | "no" | "n" | "" => Some(false),
        _ => None,
    }
}

/// Loads `<table>.csv` for every table of the schema. Empty fields are nulls;
/// unparseable continuous values become nulls.
pub fn ingest_csv(schema: &AnnotatedSchema, dir: &Path) -> Result<Dataset> {
    let mut tables = Vec::new();
    let mut row_complete = BTreeMap::new();
    let mut tuple_factors = BTreeMap::new();
    for def in &schema.tables {
        let path = dir.join(format!("{}.csv", def.name));
        let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_reader(file);
        let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
        let mut positions = Vec::with_capacity(def.columns.len());
        for c in &def.columns {
            let pos = headers.iter().position(|h| *h == c.name).ok_or_else(|| {
                Error::SchemaMismatch {
                    file: path.display().to_string(),
                    detail: format!("missing column {}", c.name),
                }
            })?;
            positions.push(pos);
        }
        let mut flag_cols = Vec::new();
        let mut tf_cols = Vec::new();
        for (i, h) in headers.iter().enumerate() {
            if let Some(fk) = h.strip_prefix(REL_COMPLETE_PREFIX) {
                check_rel(schema, fk, &def.name, &path)?;
                flag_cols.push((i, fk.to_string()));
            } else if let Some(fk) = h.strip_prefix(TF_PREFIX) {
                check_rel(schema, fk, &def.name, &path)?;
                tf_cols.push((i, fk.to_string()));
            } else if def.column(h).is_none() {
                return Err(Error::SchemaMismatch {
                    file: path.display().to_string(),
                    detail: format!("unexpected column {h}"),
                });
            }
        }
        let mut data: Vec<ColumnData> = def.columns.iter().map(|c| ColumnData::empty(c.ty)).collect();
        let mut flags: Vec<Vec<bool>> = vec![Vec::new(); flag_cols.len()];
        let mut tfs: Vec<Vec<Option<u32>>> = vec![Vec::new(); tf_cols.len()];
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            for (k, c) in def.columns.iter().enumerate() {
                let raw = record.get(positions[k]).unwrap_or("");
                let v = if raw.is_empty() {
                    Value::Null
                } else if c.ty == ColumnType::Continuous {
                    raw.trim().parse::<f64>().map(Value::Num).unwrap_or(Value::Null)
                } else {
                    Value::Str(raw.to_string())
                };
                data[k].push(&v);
            }
            for (j, (i, _)) in flag_cols.iter().enumerate() {
                let raw = record.get(*i).unwrap_or("");
                let b = parse_bool(raw).ok_or_else(|| Error::SchemaMismatch {
                    file: path.display().to_string(),
                    detail: format!("line {}: `{raw}` is not a boolean", line + 2),
                })?;
                flags[j].push(b);
            }
            for (j, (i, _)) in tf_cols.iter().enumerate() {
                let raw = record.get(*i).unwrap_or("").trim();
                let v = if raw.is_empty() {
                    None
                } else {
                    Some(raw.parse::<u32>().map_err(|_| Error::SchemaMismatch {
                        file: path.display().to_string(),
                        detail: format!("line {}: `{raw}` is not a count", line + 2),
                    })?)
                };
                tfs[j].push(v);
            }
        }
        let columns = def
            .columns
            .iter()
            .zip(data)
            .map(|(c, d)| (c.name.clone(), d))
            .collect();
        tables.push(Table::new(def.name.clone(), def.primary_key.clone(), columns)?);
        for ((_, fk), f) in flag_cols.into_iter().zip(flags) {
            row_complete.insert(fk, f);
        }
        for ((_, fk), t) in tf_cols.into_iter().zip(tfs) {
            tuple_factors.insert(fk, t);
        }
    }
    let mut ds = Dataset::new(tables);
    ds.row_complete = row_complete;
    ds.tuple_factors = tuple_factors;
    ds.validate(schema)?;
    Ok(ds)
}

fn check_rel(schema: &AnnotatedSchema, fk: &str, table: &str, path: &Path) -> Result<()> {
    match schema.fk(fk) {
        Some(f) if f.parent_table == table => Ok(()),
        _ => Err(Error::SchemaMismatch {
            file: path.display().to_string(),
            detail: format!("{fk} is not a relationship with parent table {table}"),
        }),
    }
}

/// Writes a table as CSV, including tuple-factor columns for relationships in
/// which it is the parent.
pub fn write_table_csv(
    dataset: &Dataset,
    schema: &AnnotatedSchema,
    table: &str,
    out: impl Write,
) -> Result<()> {
    let t = dataset.table(table)?;
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = t.columns().iter().map(|(n, _)| n.clone()).collect();
    let tf: Vec<(&String, &Vec<Option<u32>>)> = dataset
        .tuple_factors
        .iter()
        .filter(|(fk, v)| {
            v.len() == t.n_rows() && schema.fk(fk).is_some_and(|f| f.parent_table == table)
        })
        .collect();
    for (fk, _) in &tf {
        header.push(format!("{TF_PREFIX}{fk}"));
    }
    w.write_record(&header)?;
    for r in 0..t.n_rows() {
        let mut rec: Vec<String> = t.columns().iter().map(|(_, c)| c.value(r).to_string()).collect();
        for (_, v) in &tf {
            rec.push(v[r].map(|x| x.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::compute_tuple_factors;
    use crate::schema::tests::housing;

    fn write(dir: &Path, name: &str, body: &str) {
        std::fs::write(dir.join(name), body).unwrap();
    }

    fn housing_files(dir: &Path) {
        write(dir, "neighborhood.csv", "id,density,__rel_complete_apartment.neighborhood_id\nn1,high,1\nn2,low,0\n");
        write(dir, "landlord.csv", "id,since\nl1,2001\nl2,x\n");
        write(
            dir,
            "apartment.csv",
            "id,neighborhood_id,landlord_id,room_type,price\na1,n1,l1,entire,100\na2,n1,l2,,80\na3,n2,l1,private,\n",
        );
    }

    #[test]
    fn loads_three_tables() {
        let dir = tempfile::tempdir().unwrap();
        housing_files(dir.path());
        let s = housing();
        let d = ingest_csv(&s, dir.path()).unwrap();
        assert_eq!(d.tables.len(), 3);
        let l = d.table("landlord").unwrap();
        assert_eq!(l.value("since", 1), Value::Null);
        let a = d.table("apartment").unwrap();
        assert_eq!(a.value("room_type", 1), Value::Null);
        let d = compute_tuple_factors(&d, &s).unwrap();
        assert_eq!(d.tuple_factor("apartment.neighborhood_id", 0), Some(2));
        assert_eq!(d.tuple_factor("apartment.neighborhood_id", 1), None);
        let again = ingest_csv(&s, dir.path()).unwrap();
        assert_eq!(
            compute_tuple_factors(&again, &s).unwrap().fingerprint(),
            d.fingerprint()
        );
    }

    #[test]
    fn header_only_is_empty_table() {
        let dir = tempfile::tempdir().unwrap();
        housing_files(dir.path());
        write(dir.path(), "apartment.csv", "id,neighborhood_id,landlord_id,room_type,price\n");
        let d = ingest_csv(&housing(), dir.path()).unwrap();
        assert_eq!(d.table("apartment").unwrap().n_rows(), 0);
    }

    #[test]
    fn duplicate_key_and_header_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        housing_files(dir.path());
        write(dir.path(), "landlord.csv", "id,since\nl1,1\nl1,2\n");
        assert!(matches!(
            ingest_csv(&housing(), dir.path()),
            Err(Error::ForeignKey { .. })
        ));
        write(dir.path(), "landlord.csv", "id,start\nl1,1\n");
        assert!(matches!(
            ingest_csv(&housing(), dir.path()),
            Err(Error::SchemaMismatch { .. })
        ));
        std::fs::remove_file(dir.path().join("landlord.csv")).unwrap();
        assert!(matches!(ingest_csv(&housing(), dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn dangling_key_into_complete_table_rejected() {
        let dir = tempfile::tempdir().unwrap();
        housing_files(dir.path());
        write(
            dir.path(),
            "apartment.csv",
            "id,neighborhood_id,landlord_id,room_type,price\na1,n9,l1,entire,100\n",
        );
        assert!(matches!(
            ingest_csv(&housing(), dir.path()),
            Err(Error::ForeignKey { .. })
        ));
    }
}
