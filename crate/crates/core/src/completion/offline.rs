//! Completed joins computed ahead of time and served from a cache
//! directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Completer;
use crate::error::{Error, Result};
use crate::ingest::{load_completion, persist_completion, CacheKey, CompletedJoin};
use crate::planner::{select_plan, CompletionPlan};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineEntry {
    pub tables: Vec<String>,
    pub dir: PathBuf,
    pub rows: usize,
}

/// Prefix shared by the cache keys of one catalog and seed.
pub fn cache_scope(completer: &Completer) -> String {
    format!("{}:{}:", completer.catalog.fingerprint(), completer.config.seed)
}

pub fn cache_key(completer: &Completer, plan: &CompletionPlan) -> CacheKey {
    CacheKey {
        dataset_fingerprint: completer.dataset.fingerprint(),
        path: plan.query_tables.clone(),
        plan_fingerprint: format!("{}{}", cache_scope(completer), plan.fingerprint()),
    }
}

/// Completes `plan`, reading and writing the cache under `root`.
pub fn complete_cached(completer: &Completer, plan: &CompletionPlan, root: &Path) -> Result<(CompletedJoin, bool)> {
    let key = cache_key(completer, plan);
    if let Some(j) = load_completion(root, &key)? {
        return Ok((j, true));
    }
    let j = completer.complete_plan(plan, &[])?;
    persist_completion(root, &key, &j)?;
    Ok((j, false))
}

/// One cached completion per pair of joinable complete and incomplete
/// tables, or for the given paths when `paths` is not empty.
pub fn offline_complete(
    completer: &Completer,
    root: &Path,
    paths: &[Vec<String>],
    threshold: f64,
) -> Result<Vec<OfflineEntry>> {
    let schema = completer.schema;
    let mut targets: Vec<Vec<String>> = paths.to_vec();
    if targets.is_empty() {
        for fk in &schema.relationships {
            let (c, p) = (&fk.child_table, &fk.parent_table);
            match (schema.is_complete(p), schema.is_complete(c)) {
                (true, false) => targets.push(vec![p.clone(), c.clone()]),
                (false, true) => targets.push(vec![c.clone(), p.clone()]),
                _ => {}
            }
        }
    }
    let mut out = Vec::new();
    for tables in targets {
        let plan = select_plan(schema, completer.catalog, &tables, threshold)?;
        let (j, _) = complete_cached(completer, &plan, root)?;
        out.push(OfflineEntry {
            dir: crate::ingest::cache_dir_for(root, &cache_key(completer, &plan)),
            rows: j.rows.len(),
            tables,
        });
    }
    Ok(out)
}

/// The cached join over the smallest cached path containing `tables`,
/// projected onto `tables`.
pub fn project_cached(completer: &Completer, root: &Path, tables: &[String]) -> Result<Option<CompletedJoin>> {
    let Ok(dir) = std::fs::read_dir(root) else {
        return Ok(None);
    };
    let scope = cache_scope(completer);
    let fp = completer.dataset.fingerprint();
    let mut best: Option<(usize, String, CacheKey)> = None;
    for e in dir.flatten() {
        let Ok(bytes) = std::fs::read(e.path().join("key.json")) else {
            continue;
        };
        let Ok(key) = serde_json::from_slice::<CacheKey>(&bytes) else {
            continue;
        };
        if key.dataset_fingerprint != fp
            || !key.plan_fingerprint.starts_with(&scope)
            || !tables.iter().all(|t| key.path.contains(t))
        {
            continue;
        }
        let rank = (key.path.len(), key.digest());
        if best.as_ref().is_none_or(|b| rank < (b.0, b.1.clone())) {
            best = Some((rank.0, rank.1, key));
        }
    }
    let Some((_, _, key)) = best else {
        return Ok(None);
    };
    let join = load_completion(root, &key)?
        .ok_or_else(|| Error::CorruptArtifact(format!("cache entry for {} vanished", key.path.join(","))))?;
    Ok(Some(join.project(tables)?))
}
