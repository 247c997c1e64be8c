//! Biased removal of tuples from a complete table.
//!
//! Categorical attributes: one designated value is removed with
//! probability `p0 + c (1 - p0)`, every other row with `p0`, where `c` is
//! the removal correlation and `p0` is solved so that the expected kept
//! share equals the keep rate. Continuous attributes: the removal
//! probability is logistic in the standardized value, with the intercept
//! and slope solved so that the expected kept share and the Pearson
//! correlation between the removal indicator and the value hit their
//! targets.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{compute_tuple_factors, ColumnData, Dataset, Value};
use crate::schema::{AnnotatedSchema, ColumnType};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemovalSpec {
    pub table: String,
    pub attribute: String,
    pub keep_rate: f64,
    pub removal_correlation: f64,
    /// Share of parent rows whose tuple factor into the table stays known.
    pub tf_keep_rate: f64,
    /// Value removed preferentially; the most frequent one when absent.
    pub designated: Option<String>,
    /// Also remove rows of child tables that reference removed rows.
    pub cascade: bool,
    pub seed: u64,
}

impl Default for RemovalSpec {
    fn default() -> Self {
        RemovalSpec {
            table: "b".into(),
            attribute: "b".into(),
            keep_rate: 0.5,
            removal_correlation: 0.4,
            tf_keep_rate: 1.0,
            designated: None,
            cascade: false,
            seed: 0,
        }
    }
}

impl RemovalSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.keep_rate > 0.0 && self.keep_rate <= 1.0) {
            return Err(Error::Config(format!("keep rate {} is outside (0, 1]", self.keep_rate)));
        }
        if !(0.0..=1.0).contains(&self.removal_correlation) {
            return Err(Error::Config("removal correlation must lie in [0, 1]".into()));
        }
        if !(self.tf_keep_rate > 0.0 && self.tf_keep_rate <= 1.0) {
            return Err(Error::Config("tuple-factor keep rate must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// What was removed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovalRecord {
    /// Per row of the original table.
    pub removed: Vec<bool>,
    pub removal_probability: Vec<f64>,
    pub designated: Option<String>,
    /// Rows removed from child tables by the cascade.
    pub cascaded: BTreeMap<String, usize>,
}

impl RemovalRecord {
    pub fn kept_fraction(&self) -> f64 {
        if self.removed.is_empty() {
            return 1.0;
        }
        self.removed.iter().filter(|r| !**r).count() as f64 / self.removed.len() as f64
    }
}

/// The most frequent non-null value; ties go to the smallest.
pub fn most_frequent(col: &ColumnData, n: usize) -> Option<String> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in 0..n {
        if let Some(s) = col.value(r).as_str() {
            *counts.entry(s.to_string()).or_default() += 1;
        }
    }
    let best = counts.values().copied().max()?;
    counts.into_iter().find(|(_, c)| *c == best).map(|(v, _)| v)
}

fn categorical_probabilities(values: &[Value], designated: &str, remove: f64, corr: f64) -> Vec<f64> {
    let hit: Vec<bool> = values.iter().map(|v| v.as_str() == Some(designated)).collect();
    let s = hit.iter().filter(|h| **h).count() as f64 / values.len().max(1) as f64;
    let (p0, pd) = if s <= 0.0 {
        (remove, remove)
    } else if remove - corr * s >= 0.0 {
        let p0 = ((remove - corr * s) / (1.0 - corr * s)).clamp(0.0, 1.0);
        (p0, p0 + corr * (1.0 - p0))
    } else {
        // Not enough removals to honor the correlation: only the
        // designated value is removed.
        (0.0, (remove / s).min(1.0))
    };
    hit.iter().map(|&h| if h { pd } else { p0 }).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intercept giving mean removal probability `remove` at slope `beta`.
fn intercept(z: &[f64], beta: f64, remove: f64) -> f64 {
    let mean = |a: f64| z.iter().map(|&x| sigmoid(a + beta * x)).sum::<f64>() / z.len() as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean(mid) < remove {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Expected Pearson correlation between the removal indicator and `z`.
fn expected_correlation(z: &[f64], p: &[f64]) -> f64 {
    let n = z.len() as f64;
    let pm = p.iter().sum::<f64>() / n;
    let cov = z.iter().zip(p).map(|(x, q)| x * q).sum::<f64>() / n;
    let var_r = pm * (1.0 - pm);
    if var_r <= 0.0 {
        return 0.0;
    }
    cov / var_r.sqrt()
}

fn continuous_probabilities(values: &[Value], remove: f64, corr: f64) -> Vec<f64> {
    let xs: Vec<Option<f64>> = values.iter().map(|v| v.as_f64()).collect();
    let known: Vec<f64> = xs.iter().flatten().copied().collect();
    if known.len() < 2 || corr <= 0.0 {
        return vec![remove; values.len()];
    }
    let mean = known.iter().sum::<f64>() / known.len() as f64;
    let sd = (known.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / known.len() as f64).sqrt();
    if sd <= 0.0 {
        return vec![remove; values.len()];
    }
    // Standardized, so that the covariance with z is the correlation times
    // the indicator's standard deviation.
    let z: Vec<f64> = known.iter().map(|x| (x - mean) / sd).collect();
    let probs = |beta: f64| {
        let a = intercept(&z, beta, remove);
        (a, z.iter().map(|&x| sigmoid(a + beta * x)).collect::<Vec<_>>())
    };
    let (mut lo, mut hi) = (0.0, 50.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if expected_correlation(&z, &probs(mid).1) < corr {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let beta = 0.5 * (lo + hi);
    let a = intercept(&z, beta, remove);
    xs.iter()
        .map(|x| match x {
            Some(x) => sigmoid(a + beta * (x - mean) / sd),
            None => remove,
        })
        .collect()
}

/// Removes rows of `spec.table` and returns the incomplete database, its
/// schema with the affected tables flagged incomplete, and the record.
///
/// Tuple factors of relationships into the table are set to the counts
/// before removal for a `tf_keep_rate` share of parent rows and unknown
/// for the rest.
pub fn biased_removal(
    dataset: &Dataset,
    schema: &AnnotatedSchema,
    spec: &RemovalSpec,
) -> Result<(Dataset, AnnotatedSchema, RemovalRecord)> {
    spec.validate()?;
    let def = schema.table_or_err(&spec.table)?;
    let cdef = def
        .column(&spec.attribute)
        .ok_or_else(|| Error::Config(format!("unknown column {}.{}", spec.table, spec.attribute)))?;
    let table = dataset.table(&spec.table)?;
    let n = table.n_rows();
    let col = table.column_or_err(&spec.attribute)?;
    let values: Vec<Value> = (0..n).map(|r| col.value(r)).collect();
    let remove = 1.0 - spec.keep_rate;
    let (probs, designated) = match cdef.ty {
        ColumnType::Categorical => {
            let d = spec.designated.clone().or_else(|| most_frequent(col, n));
            let p = match &d {
                Some(d) => categorical_probabilities(&values, d, remove, spec.removal_correlation),
                None => vec![remove; n],
            };
            (p, d)
        }
        ColumnType::Continuous => (continuous_probabilities(&values, remove, spec.removal_correlation), None),
        ColumnType::Key => return Err(Error::Config("cannot bias a removal on a key column".into())),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let removed: Vec<bool> = probs.iter().map(|&p| rng.random::<f64>() < p).collect();
    let kept: Vec<usize> = (0..n).filter(|&r| !removed[r]).collect();

    let mut out = dataset.clone();
    let mut incomplete: Vec<String> = schema.incomplete_tables();
    incomplete.push(spec.table.clone());
    // Row maps for every table that loses rows, original row -> new row.
    let mut kept_rows: HashMap<String, Vec<usize>> = HashMap::new();
    kept_rows.insert(spec.table.clone(), kept);
    let mut cascaded = BTreeMap::new();
    if spec.cascade {
        let gone: std::collections::HashSet<&str> =
            (0..n).filter(|&r| removed[r]).map(|r| table.pk(r)).collect();
        for fk in schema.child_relationships(&spec.table) {
            let child = dataset.table(&fk.child_table)?;
            let refs = child.column_or_err(&fk.child_column)?;
            let keep: Vec<usize> = (0..child.n_rows())
                .filter(|&r| refs.key(r).is_none_or(|k| !gone.contains(k)))
                .collect();
            cascaded.insert(fk.child_table.clone(), child.n_rows() - keep.len());
            incomplete.push(fk.child_table.clone());
            kept_rows.insert(fk.child_table.clone(), keep);
        }
    }
    for (t, rows) in &kept_rows {
        out.tables.insert(t.clone(), dataset.table(t)?.select(rows));
    }
    for fk in &schema.relationships {
        let id = fk.id();
        if let Some(rows) = kept_rows.get(&fk.parent_table) {
            // Parent rows were removed: keep the entries of the survivors.
            if let Some(tf) = dataset.tuple_factors.get(&id) {
                out.tuple_factors.insert(id.clone(), rows.iter().map(|&r| tf[r]).collect());
            }
            if let Some(rc) = dataset.row_complete.get(&id) {
                out.row_complete.insert(id.clone(), rows.iter().map(|&r| rc[r]).collect());
            }
        }
        if kept_rows.contains_key(&fk.child_table) {
            let parent = dataset.table(&fk.parent_table)?;
            let child = dataset.table(&fk.child_table)?;
            let refs = child.column_or_err(&fk.child_column)?;
            let mut counts: HashMap<&str, u32> = HashMap::new();
            for r in 0..child.n_rows() {
                if let Some(k) = refs.key(r) {
                    *counts.entry(k).or_default() += 1;
                }
            }
            let parent_rows = kept_rows.get(&fk.parent_table);
            let rows: Vec<usize> = match parent_rows {
                Some(rows) => rows.clone(),
                None => (0..parent.n_rows()).collect(),
            };
            let tf: Vec<Option<u32>> = rows
                .iter()
                .map(|&r| {
                    let known = rng.random::<f64>() < spec.tf_keep_rate;
                    known.then(|| counts.get(parent.pk(r)).copied().unwrap_or(0))
                })
                .collect();
            out.tuple_factors.insert(id.clone(), tf);
            out.row_complete.remove(&id);
        }
    }
    incomplete.sort();
    incomplete.dedup();
    let refs: Vec<&str> = incomplete.iter().map(|s| s.as_str()).collect();
    let out_schema = schema.with_incomplete(&refs)?;
    let out = compute_tuple_factors(&out, &out_schema)?;
    Ok((
        out,
        out_schema,
        RemovalRecord { removed, removal_probability: probs, designated, cascaded },
    ))
}
