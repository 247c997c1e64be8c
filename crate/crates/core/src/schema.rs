//! Annotated relational schema and the graph utilities built on it.
//!
//! A schema is a set of tables linked by single-column foreign keys. Each table
//! and each relationship carries a completeness flag. Relationship ids are
//! written `child_table.child_column`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_PATH_LEN: usize = 5;
pub const MAX_WALK_DEPTH: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Categorical,
    Continuous,
    Key,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub ty: ColumnType,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
    pub primary_key: String,
}

impl TableDef {
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Non-key columns, in declaration order. These are the modeled attributes.
    pub fn attributes(&self) -> impl Iterator<Item = &ColumnDef> {
        self.columns.iter().filter(|c| c.ty != ColumnType::Key)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ForeignKey {
    pub child_table: String,
    pub child_column: String,
    pub parent_table: String,
    pub parent_column: String,
}

impl ForeignKey {
    pub fn id(&self) -> String {
        format!("{}.{}", self.child_table, self.child_column)
    }

    pub fn connects(&self, a: &str, b: &str) -> bool {
        (self.child_table == a && self.parent_table == b)
            || (self.child_table == b && self.parent_table == a)
    }

    pub fn other(&self, table: &str) -> &str {
        if self.child_table == table {
            &self.parent_table
        } else {
            &self.child_table
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Completeness {
    Complete,
    Incomplete,
}

/// Direction of a join hop, seen from the table already in the join.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HopKind {
    /// The next table references the current one: one row may match many.
    FanOut,
    /// The current table references the next one: at most one match.
    ManyToOne,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedSchema {
    pub tables: Vec<TableDef>,
    pub relationships: Vec<ForeignKey>,
    pub table_completeness: BTreeMap<String, Completeness>,
    pub relationship_completeness: BTreeMap<String, Completeness>,
}

// Annotation file format.

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnnotation {
    tables: Vec<RawTable>,
    #[serde(default)]
    foreign_keys: Vec<RawForeignKey>,
    #[serde(default)]
    incomplete_tables: Vec<String>,
    #[serde(default)]
    incomplete_relationships: Vec<String>,
    #[serde(default)]
    complete_relationships: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTable {
    name: String,
    columns: Vec<RawColumn>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawColumn {
    name: String,
    #[serde(rename = "type")]
    ty: ColumnType,
    #[serde(default)]
    pk: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawForeignKey {
    child: String,
    parent: String,
}

fn split_ref(s: &str) -> Result<(String, String)> {
    match s.split_once('.') {
        Some((t, c)) if !t.is_empty() && !c.is_empty() => Ok((t.to_string(), c.to_string())),
        _ => Err(Error::Annotation(format!(
            "column reference `{s}` must be written table.column"
        ))),
    }
}

pub fn load_annotation(path: &Path) -> Result<AnnotatedSchema> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotation(&text)
}

pub fn parse_annotation(text: &str) -> Result<AnnotatedSchema> {
    let raw: RawAnnotation =
        serde_json::from_str(text).map_err(|e| Error::Annotation(e.to_string()))?;
    let mut tables = Vec::with_capacity(raw.tables.len());
    for t in raw.tables {
        let pks: Vec<&RawColumn> = t.columns.iter().filter(|c| c.pk).collect();
        if pks.len() != 1 {
            return Err(Error::Annotation(format!(
                "table {} must declare exactly one primary key, found {}",
                t.name,
                pks.len()
            )));
        }
        let primary_key = pks[0].name.clone();
        tables.push(TableDef {
            name: t.name,
            primary_key,
            columns: t
                .columns
                .into_iter()
                .map(|c| ColumnDef {
                    name: c.name,
                    ty: c.ty,
                })
                .collect(),
        });
    }
    let mut relationships = Vec::with_capacity(raw.foreign_keys.len());
    for fk in raw.foreign_keys {
        let (child_table, child_column) = split_ref(&fk.child)?;
        let (parent_table, parent_column) = split_ref(&fk.parent)?;
        relationships.push(ForeignKey {
            child_table,
            child_column,
            parent_table,
            parent_column,
        });
    }
    let incomplete: BTreeSet<String> = raw.incomplete_tables.into_iter().collect();
    let table_completeness = tables
        .iter()
        .map(|t| {
            let c = if incomplete.contains(&t.name) {
                Completeness::Incomplete
            } else {
                Completeness::Complete
            };
            (t.name.clone(), c)
        })
        .collect();
    for name in &incomplete {
        if !tables.iter().any(|t| &t.name == name) {
            return Err(Error::Annotation(format!(
                "incomplete table {name} is not declared"
            )));
        }
    }
    let forced_incomplete: BTreeSet<String> = raw.incomplete_relationships.into_iter().collect();
    let forced_complete: BTreeSet<String> = raw.complete_relationships.into_iter().collect();
    if let Some(both) = forced_incomplete.intersection(&forced_complete).next() {
        return Err(Error::Annotation(format!(
            "relationship {both} is listed as both complete and incomplete"
        )));
    }
    let mut schema = AnnotatedSchema {
        tables,
        relationships,
        table_completeness,
        relationship_completeness: BTreeMap::new(),
    };
    for id in forced_incomplete.iter().chain(forced_complete.iter()) {
        if !schema.relationships.iter().any(|fk| &fk.id() == id) {
            return Err(Error::Annotation(format!("unknown relationship {id}")));
        }
    }
    let rc = schema
        .relationships
        .iter()
        .map(|fk| {
            let id = fk.id();
            let c = if forced_incomplete.contains(&id) {
                Completeness::Incomplete
            } else if forced_complete.contains(&id) {
                Completeness::Complete
            } else if schema.table_completeness.get(&fk.child_table)
                == Some(&Completeness::Complete)
                && schema.table_completeness.get(&fk.parent_table)
                    == Some(&Completeness::Complete)
            {
                Completeness::Complete
            } else {
                Completeness::Incomplete
            };
            (id, c)
        })
        .collect();
    schema.relationship_completeness = rc;
    schema.validate()?;
    Ok(schema)
}

impl AnnotatedSchema {
    /// Builds a schema in code. Relationships default to complete only when both
    /// endpoint tables are complete.
    pub fn new(
        tables: Vec<TableDef>,
        relationships: Vec<ForeignKey>,
        incomplete_tables: &[&str],
    ) -> Result<Self> {
        let table_completeness = tables
            .iter()
            .map(|t| {
                let c = if incomplete_tables.contains(&t.name.as_str()) {
                    Completeness::Incomplete
                } else {
                    Completeness::Complete
                };
                (t.name.clone(), c)
            })
            .collect::<BTreeMap<_, _>>();
        let relationship_completeness = relationships
            .iter()
            .map(|fk| {
                let both = table_completeness.get(&fk.child_table) == Some(&Completeness::Complete)
                    && table_completeness.get(&fk.parent_table) == Some(&Completeness::Complete);
                let c = if both {
                    Completeness::Complete
                } else {
                    Completeness::Incomplete
                };
                (fk.id(), c)
            })
            .collect();
        let s = AnnotatedSchema {
            tables,
            relationships,
            table_completeness,
            relationship_completeness,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tables.is_empty() {
            return Err(Error::Schema("schema declares no tables".into()));
        }
        let mut names = BTreeSet::new();
        for t in &self.tables {
            if !names.insert(t.name.as_str()) {
                return Err(Error::Schema(format!("duplicate table {}", t.name)));
            }
            let mut cols = BTreeSet::new();
            for c in &t.columns {
                if !cols.insert(c.name.as_str()) {
                    return Err(Error::Schema(format!(
                        "duplicate column {}.{}",
                        t.name, c.name
                    )));
                }
                if c.name.starts_with("__") {
                    return Err(Error::Schema(format!(
                        "column {}.{} uses the reserved `__` prefix",
                        t.name, c.name
                    )));
                }
            }
            match t.column(&t.primary_key) {
                Some(c) if c.ty == ColumnType::Key => {}
                Some(_) => {
                    return Err(Error::Schema(format!(
                        "primary key {}.{} must have type key",
                        t.name, t.primary_key
                    )))
                }
                None => {
                    return Err(Error::Schema(format!(
                        "primary key {}.{} is not a column",
                        t.name, t.primary_key
                    )))
                }
            }
            if !self.table_completeness.contains_key(&t.name) {
                return Err(Error::Schema(format!(
                    "table {} has no completeness flag",
                    t.name
                )));
            }
        }
        let mut pairs = BTreeSet::new();
        let mut ids = BTreeSet::new();
        for fk in &self.relationships {
            let child = self.table(&fk.child_table).ok_or_else(|| {
                Error::Schema(format!("foreign key {} references missing table", fk.id()))
            })?;
            let parent = self.table(&fk.parent_table).ok_or_else(|| {
                Error::Schema(format!(
                    "foreign key {} references missing table {}",
                    fk.id(),
                    fk.parent_table
                ))
            })?;
            match child.column(&fk.child_column) {
                Some(c) if c.ty == ColumnType::Key => {}
                Some(_) => {
                    return Err(Error::Schema(format!(
                        "foreign key column {} must have type key",
                        fk.id()
                    )))
                }
                None => {
                    return Err(Error::Schema(format!(
                        "foreign key {} references missing column",
                        fk.id()
                    )))
                }
            }
            if parent.primary_key != fk.parent_column {
                return Err(Error::Schema(format!(
                    "foreign key {} must reference the primary key of {}",
                    fk.id(),
                    parent.name
                )));
            }
            if fk.child_column == child.primary_key {
                return Err(Error::Schema(format!(
                    "foreign key {} may not be the child's primary key",
                    fk.id()
                )));
            }
            if fk.child_table == fk.parent_table {
                return Err(Error::Schema(format!("self-referencing foreign key {}", fk.id())));
            }
            let pair = if fk.child_table < fk.parent_table {
                (fk.child_table.as_str(), fk.parent_table.as_str())
            } else {
                (fk.parent_table.as_str(), fk.child_table.as_str())
            };
            if !pairs.insert(pair) {
                return Err(Error::Schema(format!(
                    "parallel foreign keys between {} and {}",
                    pair.0, pair.1
                )));
            }
            if !ids.insert(fk.id()) {
                return Err(Error::Schema(format!("duplicate foreign key {}", fk.id())));
            }
            match self.relationship_completeness.get(&fk.id()) {
                None => {
                    return Err(Error::Schema(format!(
                        "relationship {} has no completeness flag",
                        fk.id()
                    )))
                }
                Some(Completeness::Complete) if !self.is_complete(&fk.parent_table) => {
                    return Err(Error::Schema(format!(
                        "relationship {} is flagged complete but its parent table {} is incomplete",
                        fk.id(),
                        fk.parent_table
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn table_or_err(&self, name: &str) -> Result<&TableDef> {
        self.table(name)
            .ok_or_else(|| Error::Schema(format!("unknown table {name}")))
    }

    pub fn is_complete(&self, table: &str) -> bool {
        self.table_completeness.get(table) == Some(&Completeness::Complete)
    }

    pub fn incomplete_tables(&self) -> Vec<String> {
        self.tables
            .iter()
            .filter(|t| !self.is_complete(&t.name))
            .map(|t| t.name.clone())
            .collect()
    }

    pub fn relationship_complete(&self, fk_id: &str) -> bool {
        self.relationship_completeness.get(fk_id) == Some(&Completeness::Complete)
    }

    pub fn fk(&self, id: &str) -> Option<&ForeignKey> {
        self.relationships.iter().find(|fk| fk.id() == id)
    }

    /// The unique relationship between two tables, if any.
    pub fn fk_between(&self, a: &str, b: &str) -> Option<&ForeignKey> {
        self.relationships.iter().find(|fk| fk.connects(a, b))
    }

    /// Hop kind when joining `to` onto rows of `from`.
    pub fn hop_kind(&self, from: &str, to: &str) -> Option<HopKind> {
        self.fk_between(from, to).map(|fk| {
            if fk.parent_table == from {
                HopKind::FanOut
            } else {
                HopKind::ManyToOne
            }
        })
    }

    pub fn neighbors(&self, table: &str) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .relationships
            .iter()
            .filter(|fk| fk.child_table == table || fk.parent_table == table)
            .map(|fk| fk.other(table))
            .collect();
        out.sort_unstable();
        out
    }

    /// Relationships in which `table` is the parent.
    pub fn child_relationships(&self, table: &str) -> Vec<&ForeignKey> {
        let mut out: Vec<&ForeignKey> = self
            .relationships
            .iter()
            .filter(|fk| fk.parent_table == table)
            .collect();
        out.sort_by_key(|fk| fk.id());
        out
    }

    /// Copy of the schema with the given tables flagged incomplete and all
    /// relationships touching them re-derived with the default rule.
    pub fn with_incomplete(&self, incomplete: &[&str]) -> Result<Self> {
        let mut s = self.clone();
        for t in incomplete {
            if self.table(t).is_none() {
                return Err(Error::Schema(format!("unknown table {t}")));
            }
            s.table_completeness
                .insert(t.to_string(), Completeness::Incomplete);
        }
        for fk in &s.relationships {
            if !s.is_complete(&fk.child_table) || !s.is_complete(&fk.parent_table) {
                s.relationship_completeness
                    .insert(fk.id(), Completeness::Incomplete);
            }
        }
        s.validate()?;
        Ok(s)
    }
}

impl AnnotatedSchema {
    /// Copy of the schema with every table and relationship complete.
    pub fn with_complete_tables(&self) -> Self {
        let mut s = self.clone();
        for c in s.table_completeness.values_mut() {
            *c = Completeness::Complete;
        }
        for c in s.relationship_completeness.values_mut() {
            *c = Completeness::Complete;
        }
        s
    }
}

/// A chain of evidence tables `T_1..T_n` for synthesizing rows of `target`.
///
/// Each `T_{i+1}` references `T_i`, so joining the chain yields one row per
/// `T_n` row; `T_n` is adjacent to the target.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CompletionPath {
    pub target: String,
    pub evidence_chain: Vec<String>,
    pub fanout_tables: BTreeSet<String>,
}

impl CompletionPath {
    pub fn anchor(&self) -> &str {
        self.evidence_chain.last().expect("non-empty chain")
    }

    /// Relationship ids traversed by the chain, including the final hop.
    pub fn relationship_ids(&self, schema: &AnnotatedSchema) -> Vec<String> {
        let mut out = Vec::new();
        for w in self.evidence_chain.windows(2) {
            if let Some(fk) = schema.fk_between(&w[0], &w[1]) {
                out.push(fk.id());
            }
        }
        if let Some(fk) = schema.fk_between(self.anchor(), &self.target) {
            out.push(fk.id());
        }
        out
    }

    pub fn final_hop(&self, schema: &AnnotatedSchema) -> HopKind {
        schema
            .hop_kind(self.anchor(), &self.target)
            .expect("anchor adjacent to target")
    }
}

/// Whether `chain` is a valid evidence chain ending adjacent to `target`.
pub fn is_evidence_chain(schema: &AnnotatedSchema, chain: &[String], target: &str) -> bool {
    if chain.is_empty() {
        return false;
    }
    let mut seen = BTreeSet::new();
    for t in chain {
        if t == target || !seen.insert(t.as_str()) || schema.table(t).is_none() {
            return false;
        }
    }
    for w in chain.windows(2) {
        match schema.fk_between(&w[0], &w[1]) {
            Some(fk) if fk.child_table == w[1] => {}
            _ => return false,
        }
    }
    schema.fk_between(chain.last().unwrap(), target).is_some()
}

/// Every acyclic evidence chain of at most `max_len` tables that starts at a
/// complete table and ends adjacent to `target`. Sorted by length, then
/// lexicographically.
pub fn enumerate_completion_paths(
    schema: &AnnotatedSchema,
    target: &str,
    max_len: usize,
) -> Vec<CompletionPath> {
    let mut chains: Vec<Vec<String>> = Vec::new();
    if schema.table(target).is_none() || max_len == 0 {
        return Vec::new();
    }
    // Grow chains backwards from the anchor: the predecessor of T_i is a
    // table that T_i references.
    fn grow(
        schema: &AnnotatedSchema,
        target: &str,
        rev: &mut Vec<String>,
        max_len: usize,
        out: &mut Vec<Vec<String>>,
    ) {
        let head = rev.last().unwrap().clone();
        if schema.is_complete(&head) {
            out.push(rev.iter().rev().cloned().collect());
        }
        if rev.len() == max_len {
            return;
        }
        for fk in &schema.relationships {
            if fk.child_table != head {
                continue;
            }
            let prev = &fk.parent_table;
            if prev == target || rev.contains(prev) {
                continue;
            }
            rev.push(prev.clone());
            grow(schema, target, rev, max_len, out);
            rev.pop();
        }
    }
    for anchor in schema.neighbors(target) {
        let mut rev = vec![anchor.to_string()];
        grow(schema, target, &mut rev, max_len, &mut chains);
    }
    chains.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    chains.dedup();
    chains
        .into_iter()
        .map(|chain| {
            let fanout_tables = fanout_tables_for(schema, &chain, target);
            CompletionPath {
                target: target.to_string(),
                evidence_chain: chain,
                fanout_tables,
            }
        })
        .collect()
}

fn fanout_tables_for(schema: &AnnotatedSchema, chain: &[String], target: &str) -> BTreeSet<String> {
    let path = CompletionPath {
        target: target.to_string(),
        evidence_chain: chain.to_vec(),
        fanout_tables: BTreeSet::new(),
    };
    let exclude: BTreeSet<String> = path.relationship_ids(schema).into_iter().collect();
    let walk = acyclic_walk(schema, path.anchor(), &exclude);
    let mut out = BTreeSet::new();
    walk.collect_tables(&mut out);
    out.remove(path.anchor());
    for t in chain {
        out.remove(t);
    }
    out.remove(target);
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkTemplate {
    pub table: String,
    pub children: Vec<WalkEdge>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkEdge {
    /// Relationship id; the child table references the parent node's table.
    pub fk: String,
    pub node: WalkTemplate,
}

impl WalkTemplate {
    pub fn leaf(table: &str) -> Self {
        WalkTemplate {
            table: table.to_string(),
            children: Vec::new(),
        }
    }

    pub fn depth(&self) -> usize {
        self.children
            .iter()
            .map(|c| 1 + c.node.depth())
            .max()
            .unwrap_or(0)
    }

    pub fn collect_tables(&self, out: &mut BTreeSet<String>) {
        out.insert(self.table.clone());
        for c in &self.children {
            c.node.collect_tables(out);
        }
    }

    pub fn relationship_ids(&self) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.children {
            out.push(c.fk.clone());
            out.extend(c.node.relationship_ids());
        }
        out
    }
}

/// Tree of fan-out evidence reachable from `root`: recurses into tables that
/// reference the current node, never reusing a relationship or revisiting a
/// table on the current branch, up to [`MAX_WALK_DEPTH`] hops.
pub fn acyclic_walk(
    schema: &AnnotatedSchema,
    root: &str,
    exclude: &BTreeSet<String>,
) -> WalkTemplate {
    let mut used = exclude.clone();
    let mut branch = vec![root.to_string()];
    walk_from(schema, root, &mut used, &mut branch, 0)
}

fn walk_from(
    schema: &AnnotatedSchema,
    table: &str,
    used: &mut BTreeSet<String>,
    branch: &mut Vec<String>,
    depth: usize,
) -> WalkTemplate {
    let mut node = WalkTemplate::leaf(table);
    if depth >= MAX_WALK_DEPTH {
        return node;
    }
    for fk in schema.child_relationships(table) {
        let id = fk.id();
        if used.contains(&id) || branch.contains(&fk.child_table) {
            continue;
        }
        used.insert(id.clone());
        branch.push(fk.child_table.clone());
        let child = walk_from(schema, &fk.child_table, used, branch, depth + 1);
        branch.pop();
        node.children.push(WalkEdge { fk: id, node: child });
    }
    node
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MergeOutcome {
    Order(Vec<String>),
    Conflict,
}

/// Topological order over the union of all specs' tables, with an arc from
/// every evidence table to its target. Ties are broken lexicographically.
pub fn check_merge_legality(specs: &[(Vec<String>, String)]) -> MergeOutcome {
    let mut nodes = BTreeSet::new();
    let mut arcs: BTreeSet<(String, String)> = BTreeSet::new();
    for (evidence, target) in specs {
        nodes.insert(target.clone());
        for e in evidence {
            nodes.insert(e.clone());
            if e == target {
                return MergeOutcome::Conflict;
            }
            arcs.insert((e.clone(), target.clone()));
        }
    }
    match topo_sort(&nodes, &arcs) {
        Some(order) => MergeOutcome::Order(order),
        None => MergeOutcome::Conflict,
    }
}

pub(crate) fn topo_sort(
    nodes: &BTreeSet<String>,
    arcs: &BTreeSet<(String, String)>,
) -> Option<Vec<String>> {
    let mut indeg: BTreeMap<&str, usize> = nodes.iter().map(|n| (n.as_str(), 0)).collect();
    for (_, b) in arcs {
        *indeg.get_mut(b.as_str())? += 1;
    }
    let mut ready: BTreeSet<&str> = indeg
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(n, _)| *n)
        .collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(n) = ready.pop_first() {
        order.push(n.to_string());
        for (a, b) in arcs {
            if a == n {
                let d = indeg.get_mut(b.as_str()).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.insert(b.as_str());
                }
            }
        }
    }
    (order.len() == nodes.len()).then_some(order)
}
