//! Which models to train, and which model and completion path to use for a
//! query.

pub mod advanced;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::armodel::{train_on_sequence, LossSummary, MaskedArModel, TrainConfig, VariableLayout};
use crate::encoding::{fit_encoders, mix, AttributeEncoder, EncoderSet};
use crate::error::{Error, Result};
use crate::ingest::{load_artifact, persist_artifact, Dataset};
use crate::schema::{
    check_merge_legality, is_evidence_chain, AnnotatedSchema, CompletionPath, HopKind, MergeOutcome,
};
use crate::ssarmodel::{ssar_walk, train_ssar, SsarModel};

pub const DEFAULT_THRESHOLD: f64 = 0.9;
pub const DEFAULT_SCENARIOS: usize = 3;

/// A model over `tables`; each table in `targets` is completed from the
/// tables before it.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub tables: Vec<String>,
    pub targets: BTreeSet<String>,
}

impl ModelSpec {
    /// `(evidence tables, target)` pairs.
    pub fn arcs(&self) -> Vec<(Vec<String>, String)> {
        self.tables
            .iter()
            .enumerate()
            .filter(|(_, t)| self.targets.contains(*t))
            .map(|(j, t)| (self.tables[..j].to_vec(), t.clone()))
            .collect()
    }

    fn table_set(&self) -> BTreeSet<&String> {
        self.tables.iter().collect()
    }
}

/// Tries to merge two specs into one variable order. The merged order must
/// be acyclic, give every target exactly the tables before it as evidence,
/// and join consecutive tables by a foreign key.
pub fn try_merge(schema: &AnnotatedSchema, a: &ModelSpec, b: &ModelSpec) -> Option<ModelSpec> {
    if a.table_set().is_disjoint(&b.table_set()) {
        return None;
    }
    let mut evidence: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (ev, t) in a.arcs().into_iter().chain(b.arcs()) {
        let ev: BTreeSet<String> = ev.into_iter().collect();
        if let Some(prev) = evidence.get(&t) {
            if *prev != ev {
                return None;
            }
        }
        evidence.insert(t, ev);
    }
    let arcs: Vec<(Vec<String>, String)> = evidence
        .iter()
        .map(|(t, ev)| (ev.iter().cloned().collect(), t.clone()))
        .collect();
    let MergeOutcome::Order(order) = check_merge_legality(&arcs) else {
        return None;
    };
    for (p, t) in order.iter().enumerate() {
        if let Some(ev) = evidence.get(t) {
            let before: BTreeSet<String> = order[..p].iter().cloned().collect();
            if &before != ev {
                return None;
            }
        }
    }
    if order.windows(2).any(|w| schema.fk_between(&w[0], &w[1]).is_none()) {
        return None;
    }
    Some(ModelSpec {
        tables: order,
        targets: evidence.into_keys().collect(),
    })
}

fn spec_order(a: &ModelSpec, b: &ModelSpec) -> std::cmp::Ordering {
    b.tables
        .len()
        .cmp(&a.tables.len())
        .then_with(|| a.tables.cmp(&b.tables))
        .then_with(|| a.targets.cmp(&b.targets))
}

/// One spec per foreign key direction touching an incomplete table, merged
/// greedily until no legal merge remains.
pub fn plan_models(schema: &AnnotatedSchema) -> Vec<ModelSpec> {
    let mut specs: Vec<ModelSpec> = Vec::new();
    for fk in &schema.relationships {
        let (p, c) = (&fk.parent_table, &fk.child_table);
        if schema.is_complete(p) && schema.is_complete(c) {
            continue;
        }
        for (x, y) in [(p, c), (c, p)] {
            specs.push(ModelSpec {
                tables: vec![x.clone(), y.clone()],
                targets: [y.clone()].into(),
            });
        }
    }
    specs.sort_by(spec_order);
    specs.dedup();
    'outer: loop {
        for i in 0..specs.len() {
            for j in i + 1..specs.len() {
                if let Some(m) = try_merge(schema, &specs[i], &specs[j]) {
                    specs.remove(j);
                    specs[i] = m;
                    specs.sort_by(spec_order);
                    specs.dedup();
                    continue 'outer;
                }
            }
        }
        break;
    }
    specs
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Ar,
    Ssar,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModelKey {
    pub tables: Vec<String>,
    pub kind: ModelKind,
}

impl std::fmt::Display for ModelKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let k = match self.kind {
            ModelKind::Ar => "ar",
            ModelKind::Ssar => "ssar",
        };
        write!(f, "{k}[{}]", self.tables.join(">"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CompletionModel {
    Ar(MaskedArModel),
    Ssar(SsarModel),
}

impl CompletionModel {
    pub fn layout(&self) -> &VariableLayout {
        match self {
            CompletionModel::Ar(m) => &m.layout,
            CompletionModel::Ssar(m) => &m.layout,
        }
    }

    pub fn losses(&self) -> &LossSummary {
        match self {
            CompletionModel::Ar(m) => &m.losses,
            CompletionModel::Ssar(m) => &m.losses,
        }
    }

    pub fn encoders(&self) -> &[AttributeEncoder] {
        match self {
            CompletionModel::Ar(m) => &m.encoders,
            CompletionModel::Ssar(m) => &m.encoders,
        }
    }

    fn finish(&mut self) {
        match self {
            CompletionModel::Ar(m) => m.finish(),
            CompletionModel::Ssar(m) => m.finish(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub key: ModelKey,
    pub targets: BTreeSet<String>,
    pub model: CompletionModel,
}

impl CatalogEntry {
    /// Held-out loss and marginal baseline over the attributes of `target`.
    pub fn target_losses(&self, target: &str) -> Option<(f64, f64)> {
        let layout = self.model.layout();
        let j = layout.position(target)?;
        self.model.losses().totals(layout.attr_ranges[j].clone())
    }

    /// Held-out loss relative to the baseline; lower is better.
    pub fn loss_ratio(&self, target: &str) -> f64 {
        match self.target_losses(target) {
            Some((l, b)) if b > 0.0 => l / b,
            Some(_) => 0.0,
            None => f64::INFINITY,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelCatalog {
    pub encoders: EncoderSet,
    pub specs: Vec<ModelSpec>,
    pub entries: Vec<CatalogEntry>,
}

impl ModelCatalog {
    pub fn get(&self, key: &ModelKey) -> Option<&CatalogEntry> {
        self.entries.iter().find(|e| &e.key == key)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Content digest of the whole catalog.
    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(self).expect("catalog serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn persist(&self, path: &std::path::Path) -> Result<()> {
        persist_artifact(path, &self.encoders.fingerprint(), self)
    }

    pub fn load(path: &std::path::Path, expected_encoders: Option<&str>) -> Result<Self> {
        let (mut c, _): (ModelCatalog, _) = load_artifact(path, expected_encoders)?;
        c.finish();
        Ok(c)
    }

    pub fn finish(&mut self) {
        self.encoders.finish();
        for e in &mut self.entries {
            e.model.finish();
        }
    }

    /// Completion paths served by the catalog for `target`.
    pub fn paths_for(&self, schema: &AnnotatedSchema, target: &str) -> Vec<(CompletionPath, ModelKey)> {
        let mut out = Vec::new();
        for e in &self.entries {
            if !e.targets.contains(target) {
                continue;
            }
            let j = e.key.tables.iter().position(|t| t == target).unwrap();
            if let Some(p) = completion_path(schema, &e.key.tables[..j], target) {
                out.push((p, e.key.clone()));
            }
        }
        out
    }
}

/// The completion path for a chain, if it is a valid evidence chain that
/// starts at a complete table.
pub fn completion_path(schema: &AnnotatedSchema, chain: &[String], target: &str) -> Option<CompletionPath> {
    if !is_evidence_chain(schema, chain, target) || !schema.is_complete(&chain[0]) {
        return None;
    }
    let max = chain.len();
    crate::schema::enumerate_completion_paths(schema, target, max)
        .into_iter()
        .find(|p| p.evidence_chain == chain)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub max_len: usize,
    pub threshold: f64,
    pub scenarios: usize,
    /// Train schema-structured models where fan-out evidence exists.
    pub ssar: bool,
    pub self_evidence: bool,
    pub train: TrainConfig,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            max_len: 5,
            threshold: DEFAULT_THRESHOLD,
            scenarios: DEFAULT_SCENARIOS,
            ssar: true,
            self_evidence: true,
            train: TrainConfig::default(),
        }
    }
}

fn seeded(config: &TrainConfig, tag: &str) -> TrainConfig {
    let mut c = config.clone();
    c.fit.seed = mix(config.fit.seed, tag, 0);
    c
}

/// Trains every spec as a masked model and, where the path carries fan-out
/// evidence, a schema-structured model per target.
pub fn train_all(
    dataset: &Dataset,
    schema: &AnnotatedSchema,
    specs: &[ModelSpec],
    config: &PlannerConfig,
) -> Result<ModelCatalog> {
    if specs.is_empty() {
        return Ok(ModelCatalog::default());
    }
    let encoders = fit_encoders(dataset, schema, config.train.bins)?;
    let mut jobs: Vec<(ModelKey, BTreeSet<String>, Option<CompletionPath>)> = Vec::new();
    for s in specs {
        jobs.push((
            ModelKey {
                tables: s.tables.clone(),
                kind: ModelKind::Ar,
            },
            s.targets.clone(),
            None,
        ));
        if !config.ssar {
            continue;
        }
        for (j, t) in s.tables.iter().enumerate() {
            if !s.targets.contains(t) || j == 0 {
                continue;
            }
            let Some(path) = completion_path(schema, &s.tables[..j], t) else {
                continue;
            };
            if ssar_walk(schema, &path, config.self_evidence).children.is_empty() {
                continue;
            }
            let key = ModelKey {
                tables: s.tables[..=j].to_vec(),
                kind: ModelKind::Ssar,
            };
            if !jobs.iter().any(|(k, _, _)| k == &key) {
                jobs.push((key, [t.clone()].into(), Some(path)));
            }
        }
    }
    let entries: Vec<CatalogEntry> = jobs
        .par_iter()
        .map(|(key, targets, path)| {
            let cfg = seeded(&config.train, &key.to_string());
            let model = match path {
                None => CompletionModel::Ar(train_on_sequence(dataset, schema, &key.tables, &encoders, &cfg)?),
                Some(p) => {
                    let walk = ssar_walk(schema, p, config.self_evidence);
                    CompletionModel::Ssar(train_ssar(dataset, schema, p, &walk, &encoders, &cfg)?)
                }
            };
            Ok(CatalogEntry {
                key: key.clone(),
                targets: targets.clone(),
                model,
            })
        })
        .collect::<Result<_>>()?;
    let mut entries = entries;
    entries.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(ModelCatalog {
        encoders,
        specs: specs.to_vec(),
        entries,
    })
}

/// Models for `target` whose held-out loss on the target's attributes is at
/// most `threshold` times the marginal baseline.
pub fn basic_select(catalog: &ModelCatalog, target: &str, threshold: f64) -> Result<Vec<ModelKey>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!("threshold must be in (0, 1], got {threshold}")));
    }
    let keys: Vec<ModelKey> = catalog
        .entries
        .iter()
        .filter(|e| e.targets.contains(target))
        .filter(|e| match e.target_losses(target) {
            Some((l, b)) => l <= threshold * b,
            None => false,
        })
        .map(|e| e.key.clone())
        .collect();
    if keys.is_empty() {
        return Err(Error::NoAdmissibleModel {
            table: target.to_string(),
        });
    }
    Ok(keys)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BiasDirection {
    Overestimated,
    Underestimated,
}

/// The user's belief that the available data misstates an attribute.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasHint {
    pub table: String,
    pub attribute: String,
    pub direction: BiasDirection,
    /// For categorical attributes, the value whose share is misstated.
    pub value: Option<String>,
}

impl std::str::FromStr for BiasHint {
    type Err = Error;

    /// `table.attr:over|under` or `table.attr=value:over|under`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("hint must look like table.attr[=value]:over|under, got {s:?}"));
        let (lhs, dir) = s.rsplit_once(':').ok_or_else(bad)?;
        let direction = match dir {
            "over" | "overestimated" => BiasDirection::Overestimated,
            "under" | "underestimated" => BiasDirection::Underestimated,
            _ => return Err(bad()),
        };
        let (col, value) = match lhs.split_once('=') {
            Some((c, v)) => (c, Some(v.to_string())),
            None => (lhs, None),
        };
        let (table, attribute) = col.split_once('.').ok_or_else(bad)?;
        if table.is_empty() || attribute.is_empty() {
            return Err(bad());
        }
        Ok(BiasHint {
            table: table.into(),
            attribute: attribute.into(),
            direction,
            value,
        })
    }
}

/// Use of a catalog model at one hop: the model's variables up to
/// `position` are filled from the join.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelUse {
    pub key: ModelKey,
    pub position: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlanStep {
    pub from: String,
    pub to: String,
    pub fk: String,
    pub kind: HopKind,
    /// Model that synthesizes rows of `to`, when the hop needs one.
    pub model: Option<ModelUse>,
}

/// How to complete the join of a query: start from the existing rows of
/// `root` and apply `steps` in order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CompletionPlan {
    pub query_tables: Vec<String>,
    pub root: String,
    pub steps: Vec<PlanStep>,
    /// Incomplete tables in the order they are completed.
    pub completion_order: Vec<String>,
    /// The completion path and model that define this candidate.
    pub primary: Option<(CompletionPath, ModelKey)>,
}

impl CompletionPlan {
    /// Root followed by every step's target table.
    pub fn join_tables(&self) -> Vec<String> {
        let mut v = vec![self.root.clone()];
        v.extend(self.steps.iter().map(|s| s.to.clone()));
        v
    }

    /// Whether tables outside the query are joined for evidence.
    pub fn has_additional_tables(&self) -> bool {
        self.steps.len() + 1 > self.query_tables.len()
    }

    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(self).expect("plan serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn models(&self) -> impl Iterator<Item = &ModelUse> {
        self.steps.iter().filter_map(|s| s.model.as_ref())
    }

    pub fn describe(&self) -> String {
        let mut s = self.root.clone();
        for st in &self.steps {
            s.push_str(&format!(" -> {}", st.to));
            if let Some(m) = &st.model {
                s.push_str(&format!(" [{}]", m.key));
            }
        }
        s
    }
}

/// BFS order of the join over `tables` starting at `root`, or `None` when
/// the tables do not form a tree under the schema's foreign keys.
pub(crate) fn join_tree(schema: &AnnotatedSchema, root: &str, tables: &BTreeSet<String>) -> Option<Vec<(String, String, String)>> {
    let edges: Vec<_> = schema
        .relationships
        .iter()
        .filter(|fk| tables.contains(&fk.child_table) && tables.contains(&fk.parent_table))
        .collect();
    if edges.len() + 1 != tables.len() {
        return None;
    }
    let mut seen: BTreeSet<String> = [root.to_string()].into();
    let mut queue = VecDeque::from([root.to_string()]);
    let mut hops = Vec::new();
    while let Some(x) = queue.pop_front() {
        let mut next: Vec<(String, String)> = edges
            .iter()
            .filter(|fk| fk.child_table == x || fk.parent_table == x)
            .map(|fk| (fk.other(&x).to_string(), fk.id()))
            .filter(|(y, _)| !seen.contains(y))
            .collect();
        next.sort();
        for (y, fk) in next {
            seen.insert(y.clone());
            hops.push((x.clone(), y.clone(), fk));
            queue.push_back(y);
        }
    }
    (seen.len() == tables.len()).then_some(hops)
}

/// Whether `entry` can synthesize `to` right after `from` given the tables
/// already joined.
fn model_fits(entry: &CatalogEntry, from: &str, to: &str, joined: &BTreeSet<String>) -> Option<usize> {
    let t = &entry.key.tables;
    let pos = match entry.key.kind {
        ModelKind::Ssar => t.len() - 1,
        ModelKind::Ar => t.iter().position(|x| x == to)?,
    };
    (pos > 0 && t[pos] == to && t[pos - 1] == from && t[..pos].iter().all(|x| joined.contains(x))).then_some(pos)
}

/// Builds the plan for a join rooted at `root`. The primary model is used
/// for its own hop; other hops use the admissible model with the lowest
/// relative loss.
pub fn build_plan(
    schema: &AnnotatedSchema,
    catalog: &ModelCatalog,
    query_tables: &[String],
    extra: &[String],
    root: &str,
    primary: Option<(CompletionPath, ModelKey)>,
    admissible: &dyn Fn(&ModelKey, &str) -> bool,
) -> Option<CompletionPlan> {
    let mut tables: BTreeSet<String> = query_tables.iter().cloned().collect();
    tables.extend(extra.iter().cloned());
    let hops = join_tree(schema, root, &tables)?;
    let mut joined: BTreeSet<String> = [root.to_string()].into();
    let mut synthesized: BTreeSet<String> = BTreeSet::new();
    let mut steps = Vec::new();
    let mut order = Vec::new();
    for (x, y, fk) in hops {
        let kind = schema.hop_kind(&x, &y)?;
        let y_incomplete = !schema.is_complete(&y);
        let needs = match kind {
            HopKind::FanOut => y_incomplete,
            HopKind::ManyToOne => y_incomplete || synthesized.contains(&x),
        };
        let mut model = None;
        if needs {
            if let Some((p, key)) = &primary {
                if p.target == y && p.anchor() == x {
                    let e = catalog.get(key)?;
                    model = model_fits(e, &x, &y, &joined).map(|position| ModelUse {
                        key: key.clone(),
                        position,
                    });
                }
            }
            if model.is_none() {
                let mut cands: Vec<(f64, ModelUse)> = catalog
                    .entries
                    .iter()
                    .filter_map(|e| {
                        let position = model_fits(e, &x, &y, &joined)?;
                        if y_incomplete && !admissible(&e.key, &y) {
                            return None;
                        }
                        let ratio = e.loss_ratio(&y);
                        Some((
                            ratio,
                            ModelUse {
                                key: e.key.clone(),
                                position,
                            },
                        ))
                    })
                    .collect();
                cands.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.key.cmp(&b.1.key)));
                model = cands.into_iter().next().map(|c| c.1);
            }
            match (&model, kind) {
                (None, HopKind::FanOut) => return None,
                (None, HopKind::ManyToOne) if synthesized.contains(&x) => return None,
                _ => {}
            }
            if model.is_some() {
                synthesized.insert(y.clone());
                if y_incomplete && !order.contains(&y) {
                    order.push(y.clone());
                }
            }
        }
        joined.insert(y.clone());
        steps.push(PlanStep {
            from: x,
            to: y,
            fk,
            kind,
            model,
        });
    }
    Some(CompletionPlan {
        query_tables: query_tables.to_vec(),
        root: root.to_string(),
        steps,
        completion_order: order,
        primary,
    })
}

/// Every plan for the query: one per catalog completion path into an
/// incomplete query table, restricted to admissible models. Queries over
/// complete tables get a single plan without models.
pub fn candidate_plans(
    schema: &AnnotatedSchema,
    catalog: &ModelCatalog,
    query_tables: &[String],
    threshold: f64,
) -> Result<Vec<CompletionPlan>> {
    let incomplete: Vec<&String> = query_tables.iter().filter(|t| !schema.is_complete(t)).collect();
    let plain_root = query_tables
        .iter()
        .find(|t| schema.is_complete(t))
        .unwrap_or(&query_tables[0]);
    if incomplete.is_empty() {
        let no_models = |_: &ModelKey, _: &str| false;
        return build_plan(schema, catalog, query_tables, &[], plain_root, None, &no_models)
            .map(|p| vec![p])
            .ok_or_else(|| Error::Query("query tables are not joined by a tree of foreign keys".into()));
    }
    let mut admissible: BTreeMap<String, BTreeSet<ModelKey>> = BTreeMap::new();
    for t in schema.incomplete_tables() {
        let keys = basic_select(catalog, &t, threshold).unwrap_or_default();
        admissible.insert(t, keys.into_iter().collect());
    }
    let is_admissible = |k: &ModelKey, t: &str| admissible.get(t).is_some_and(|s| s.contains(k));
    let mut plans: Vec<CompletionPlan> = Vec::new();
    for t in &incomplete {
        for (path, key) in catalog.paths_for(schema, t) {
            if !is_admissible(&key, t) {
                continue;
            }
            let extra: Vec<String> = path.evidence_chain.clone();
            let root = path.evidence_chain[0].clone();
            if let Some(p) = build_plan(
                schema,
                catalog,
                query_tables,
                &extra,
                &root,
                Some((path.clone(), key.clone())),
                &is_admissible,
            ) {
                if !plans.iter().any(|q| q.steps == p.steps && q.root == p.root) {
                    plans.push(p);
                }
            }
        }
    }
    if plans.is_empty() {
        return Err(Error::NoAdmissibleModel {
            table: incomplete[0].clone(),
        });
    }
    plans.sort_by(|a, b| {
        primary_ratio(catalog, a)
            .total_cmp(&primary_ratio(catalog, b))
            .then_with(|| a.describe().cmp(&b.describe()))
    });
    Ok(plans)
}

fn primary_ratio(catalog: &ModelCatalog, plan: &CompletionPlan) -> f64 {
    match &plan.primary {
        Some((p, k)) => catalog.get(k).map(|e| e.loss_ratio(&p.target)).unwrap_or(f64::INFINITY),
        None => 0.0,
    }
}

/// Default choice: the admissible plan with the lowest relative test loss.
pub fn select_plan(
    schema: &AnnotatedSchema,
    catalog: &ModelCatalog,
    query_tables: &[String],
    threshold: f64,
) -> Result<CompletionPlan> {
    Ok(candidate_plans(schema, catalog, query_tables, threshold)?.remove(0))
}

pub use advanced::{advanced_select, score_plans, ScoredPlan};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::tests::{housing, schema_from_edges};

    fn spec(tables: &[&str], targets: &[&str]) -> ModelSpec {
        ModelSpec {
            tables: tables.iter().map(|s| s.to_string()).collect(),
            targets: targets.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn chain_specs_merge_into_one() {
        // t1 -> t2 -> t3 by reference; t1 and t2 incomplete.
        let s = schema_from_edges(3, &[(1, 2), (0, 1)], &[0, 1]);
        let a = spec(&["t2", "t1"], &["t1"]);
        let b = spec(&["t2", "t1", "t0"], &["t0"]);
        let m = try_merge(&s, &a, &b).unwrap();
        assert_eq!(m, spec(&["t2", "t1", "t0"], &["t1", "t0"]));
        let c = spec(&["t0", "t1"], &["t1"]);
        let d = spec(&["t1", "t2", "t0"], &["t0"]);
        assert!(try_merge(&s, &c, &d).is_none());
    }

    #[test]
    fn single_fk_gives_two_specs() {
        let s = schema_from_edges(2, &[(1, 0)], &[1]);
        let specs = plan_models(&s);
        assert_eq!(specs.len(), 2);
        assert!(plan_models(&schema_from_edges(2, &[(1, 0)], &[])).is_empty());
    }

    #[test]
    fn plan_models_is_stable_and_final() {
        let s = housing();
        let a = plan_models(&s);
        assert_eq!(a, plan_models(&s));
        for i in 0..a.len() {
            for j in 0..a.len() {
                if i != j {
                    assert!(try_merge(&s, &a[i], &a[j]).is_none());
                }
            }
        }
        let apt_models = a.iter().filter(|m| m.targets.contains("apartment")).count();
        assert!(apt_models >= 2, "{a:?}");
    }

    #[test]
    fn hint_parsing() {
        let h: BiasHint = "apartment.price:under".parse().unwrap();
        assert_eq!(h.direction, BiasDirection::Underestimated);
        assert_eq!(h.value, None);
        let h: BiasHint = "b.b=v1:over".parse().unwrap();
        assert_eq!((h.table.as_str(), h.attribute.as_str(), h.value.as_deref()), ("b", "b", Some("v1")));
        assert!("price:over".parse::<BiasHint>().is_err());
        assert!("a.b:sideways".parse::<BiasHint>().is_err());
    }

    #[test]
    fn threshold_is_validated() {
        let c = ModelCatalog::default();
        assert!(matches!(basic_select(&c, "x", 0.0), Err(Error::Config(_))));
        assert!(matches!(
            basic_select(&c, "x", 0.9),
            Err(Error::NoAdmissibleModel { .. })
        ));
    }
}
