//! Incompleteness joins: the join of a query path with missing rows
//! synthesized hop by hop along a completion plan.
//!
//! A plan starts from the existing rows of a complete root table. At a
//! fan-out hop each distinct parent gets `TF - present` synthesized
//! children, with `TF` known or sampled from the model. At an n:1 hop a
//! parent is synthesized only for rows without a partner; synthesized
//! parents in complete tables are replaced by their nearest existing row.

pub mod nn;
pub mod offline;

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::armodel::draw;
use crate::encoding::{mix, ChildIndex, EncodedTree};
use crate::error::{Error, Result};
use crate::ingest::{CompletedJoin, Dataset, JoinColumn, JoinRow, Origin, RowSource, Table, Value};
use crate::planner::{join_tree, CompletionModel, CompletionPlan, ModelCatalog, ModelUse, PlanStep};
use crate::schema::{AnnotatedSchema, ColumnType, HopKind};

pub use nn::{nearest_neighbor_replace, NnConfig, NnIndex};
pub use offline::{offline_complete, project_cached, OfflineEntry};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionConfig {
    pub seed: u64,
    pub nn: NnConfig,
    /// Rows per parallel sampling chunk. Fixed so results do not depend on
    /// the number of worker threads.
    pub chunk: usize,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        CompletionConfig {
            seed: 0,
            nn: NnConfig::default(),
            chunk: 2048,
        }
    }
}

/// Equality filter on a column of the plan's root table, applied before
/// completion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pushdown {
    pub column: String,
    pub value: Value,
}

#[derive(Clone, Debug)]
struct SynthRow {
    values: Vec<Value>,
    /// Attributes encoded with the catalog encoders.
    encoded: Vec<u32>,
    /// Per column of the table.
    certainty: Vec<f64>,
}

pub struct Completer<'a> {
    pub dataset: &'a Dataset,
    pub schema: &'a AnnotatedSchema,
    pub catalog: &'a ModelCatalog,
    pub config: CompletionConfig,
    index: ChildIndex,
    nn_cache: Mutex<HashMap<String, Arc<(nn::Embedding, NnIndex)>>>,
}

/// State of one plan execution.
struct Run<'c> {
    tables: Vec<String>,
    synth: Vec<Vec<SynthRow>>,
    encoded: Vec<HashMap<usize, Vec<u32>>>,
    rows: Vec<Vec<RowSource>>,
    negative: u64,
    _plan: &'c CompletionPlan,
}

fn source_tag(s: &RowSource) -> String {
    match s {
        RowSource::Existing(r) => format!("e{r}"),
        RowSource::Replaced { row, synth } => format!("r{row}.{synth}"),
        RowSource::Synthesized { id, key } => format!("s{id}.{}", key.as_deref().unwrap_or("")),
    }
}

/// Groups row indices by the source at column `i`, in order of first
/// appearance.
fn group_by_source(rows: &[Vec<RowSource>], i: usize) -> (Vec<RowSource>, Vec<usize>) {
    let mut seen: HashMap<&RowSource, usize> = HashMap::new();
    let mut keys = Vec::new();
    let mut of_row = Vec::with_capacity(rows.len());
    for r in rows {
        let g = *seen.entry(&r[i]).or_insert_with(|| {
            keys.push(r[i].clone());
            keys.len() - 1
        });
        of_row.push(g);
    }
    (keys, of_row)
}

impl<'a> Completer<'a> {
    pub fn new(
        dataset: &'a Dataset,
        schema: &'a AnnotatedSchema,
        catalog: &'a ModelCatalog,
        config: CompletionConfig,
    ) -> Result<Self> {
        Ok(Completer {
            dataset,
            schema,
            catalog,
            config,
            index: ChildIndex::build(dataset, schema)?,
            nn_cache: Mutex::new(HashMap::new()),
        })
    }

    fn model(&self, m: &ModelUse) -> Result<&CompletionModel> {
        self.catalog
            .get(&m.key)
            .map(|e| &e.model)
            .ok_or_else(|| Error::Completion(format!("model {} is not in the catalog", m.key)))
    }

    /// Runs the plan and returns the completed join over the query tables.
    /// Equality filters on the root table are applied before completion.
    pub fn complete_plan(&self, plan: &CompletionPlan, pushdown: &[Pushdown]) -> Result<CompletedJoin> {
        let full = self.run(plan, pushdown)?;
        if !plan.has_additional_tables() {
            return full.project(&plan.query_tables);
        }
        // Rows made only of existing tuples come from the available join of
        // the query tables; rows with a synthesized part are projected from
        // the larger join, one per distinct set of query-table sources.
        let mut out = self.plain_join(&plan.query_tables)?;
        let projected = full.project(&plan.query_tables)?;
        out.rows.extend(projected.rows.into_iter().filter(|r| r.origin == Origin::Synthesized));
        out.negative_deficits = full.negative_deficits;
        Ok(out)
    }

    /// Join of the available data, without synthesis.
    pub fn plain_join(&self, tables: &[String]) -> Result<CompletedJoin> {
        let plan = plain_plan(self.schema, tables)?;
        self.run(&plan, &[])?.project(tables)
    }

    /// Completion along one plan; alias kept for the single-table case.
    pub fn incompleteness_join(&self, plan: &CompletionPlan) -> Result<CompletedJoin> {
        self.complete_plan(plan, &[])
    }

    /// Plans whose completion order covers several incomplete tables.
    pub fn complete_multi_incomplete(&self, plan: &CompletionPlan) -> Result<CompletedJoin> {
        self.complete_plan(plan, &[])
    }

    /// Plans that join tables outside the query for evidence.
    pub fn complete_with_additional_tables(&self, plan: &CompletionPlan) -> Result<CompletedJoin> {
        if !plan.has_additional_tables() {
            return Err(Error::Completion("plan has no additional tables".into()));
        }
        self.complete_plan(plan, &[])
    }

    /// Combines the completions of several plans over the same query path.
    ///
    /// Existing rows are kept once. Synthesized rows are grouped by the
    /// tuple of existing sources they attach to; where `r` plans synthesized
    /// rows for the same group, each plan's rows are weighted by `1 / r`.
    /// Groups reached by a single plan keep their weight.
    pub fn multi_path_complete(&self, plans: &[CompletionPlan]) -> Result<CompletedJoin> {
        let Some(first) = plans.first() else {
            return Err(Error::Completion("no plans to combine".into()));
        };
        if plans.iter().any(|p| p.query_tables != first.query_tables) {
            return Err(Error::Completion("plans cover different query paths".into()));
        }
        let joins: Vec<CompletedJoin> = plans.iter().map(|p| self.complete_plan(p, &[])).collect::<Result<_>>()?;
        let group_of = |r: &JoinRow| -> Vec<Option<usize>> {
            r.sources
                .iter()
                .map(|s| match s {
                    RowSource::Existing(i) => Some(*i),
                    _ => None,
                })
                .collect()
        };
        let mut reached: HashMap<Vec<Option<usize>>, usize> = HashMap::new();
        for j in &joins {
            let mut mine: Vec<Vec<Option<usize>>> = j
                .rows
                .iter()
                .filter(|r| r.origin == Origin::Synthesized)
                .map(group_of)
                .collect();
            mine.sort();
            mine.dedup();
            for g in mine {
                *reached.entry(g).or_default() += 1;
            }
        }
        let mut joins = joins.into_iter();
        let mut out = joins.next().unwrap();
        let scale = |rows: &mut Vec<JoinRow>| {
            for r in rows.iter_mut().filter(|r| r.origin == Origin::Synthesized) {
                r.weight /= reached[&group_of(r)] as f64;
            }
        };
        scale(&mut out.rows);
        for mut j in joins {
            scale(&mut j.rows);
            out.rows.extend(j.rows.into_iter().filter(|r| r.origin == Origin::Synthesized));
            out.negative_deficits += j.negative_deficits;
        }
        Ok(out)
    }

    fn run(&self, plan: &CompletionPlan, pushdown: &[Pushdown]) -> Result<CompletedJoin> {
        let tables = plan.join_tables();
        let root = self.dataset.table(&plan.root)?;
        let filters: Vec<(&crate::ingest::ColumnData, &Value)> = pushdown
            .iter()
            .map(|p| Ok((root.column_or_err(&p.column)?, &p.value)))
            .collect::<Result<_>>()?;
        let rows: Vec<Vec<RowSource>> = (0..root.n_rows())
            .filter(|&r| filters.iter().all(|(c, v)| &c.value(r) == *v))
            .map(|r| vec![RowSource::Existing(r)])
            .collect();
        let mut run = Run {
            synth: vec![Vec::new(); tables.len()],
            encoded: vec![HashMap::new(); tables.len()],
            tables,
            rows,
            negative: 0,
            _plan: plan,
        };
        for (si, step) in plan.steps.iter().enumerate() {
            let xi = run
                .tables
                .iter()
                .position(|t| t == &step.from)
                .ok_or_else(|| Error::Completion(format!("{} is joined before it appears", step.from)))?;
            let yi = si + 1;
            match step.kind {
                HopKind::FanOut => self.fan_out(&mut run, step, xi, yi)?,
                HopKind::ManyToOne => self.many_to_one(&mut run, step, xi, yi)?,
            }
        }
        self.materialize(&run)
    }

    fn encoded_attrs(&self, run: &mut Run, ti: usize, src: &RowSource) -> Result<Vec<u32>> {
        match src {
            RowSource::Synthesized { id, .. } => Ok(run.synth[ti][*id as usize].encoded.clone()),
            RowSource::Existing(r) | RowSource::Replaced { row: r, .. } => {
                if let Some(v) = run.encoded[ti].get(r) {
                    return Ok(v.clone());
                }
                let t = self.dataset.table(&run.tables[ti])?;
                let v = self.catalog.encoders.encode_table_row(self.schema, t, *r)?;
                run.encoded[ti].insert(*r, v.clone());
                Ok(v)
            }
        }
    }

    fn known_tf(&self, fk: &str, parent: &RowSource) -> Option<u32> {
        match parent {
            RowSource::Existing(r) | RowSource::Replaced { row: r, .. } => self.dataset.tuple_factor(fk, *r),
            RowSource::Synthesized { .. } => None,
        }
    }

    /// Model input with the variables of `tables[..pos]` taken from a join
    /// row and every later position absent. Known tuple factors are fed;
    /// unknown ones stay absent, as in training.
    fn evidence_row(&self, run: &mut Run, model: &CompletionModel, pos: usize, row: &[RowSource]) -> Result<Vec<u32>> {
        let layout = model.layout();
        let encs = model.encoders();
        let mut out: Vec<u32> = encs.iter().map(|e| e.cardinality() as u32).collect();
        for i in 0..pos {
            let ti = run.tables.iter().position(|t| t == &layout.tables[i]).ok_or_else(|| {
                Error::Completion(format!("model evidence {} is not in the join", layout.tables[i]))
            })?;
            let attrs = self.encoded_attrs(run, ti, &row[ti])?;
            for (v, a) in layout.attr_ranges[i].clone().zip(attrs) {
                out[v] = a;
            }
        }
        for i in 1..=pos {
            if let (Some(v), Some(fk)) = (layout.tf_vars[i], &layout.hops[i]) {
                let pi = run.tables.iter().position(|t| t == &layout.tables[i - 1]).unwrap();
                if let Some(tf) = self.known_tf(fk, &row[pi]) {
                    out[v] = encs[v].encode_count(tf);
                }
            }
        }
        Ok(out)
    }

    /// Evidence-tree contexts for the anchors of a schema-structured model.
    fn contexts(&self, model: &CompletionModel, anchors: &[RowSource]) -> Result<Option<Array2<f64>>> {
        let CompletionModel::Ssar(m) = model else {
            return Ok(None);
        };
        let trees: Vec<EncodedTree> = anchors
            .par_iter()
            .map(|a| match a {
                RowSource::Existing(r) | RowSource::Replaced { row: r, .. } => {
                    m.evidence_tree(self.dataset, self.schema, &self.index, *r)
                }
                RowSource::Synthesized { .. } => Ok(m.empty_tree()),
            })
            .collect::<Result<_>>()?;
        Ok(Some(m.contexts(&trees)?))
    }

    /// Samples `vars` for every row, in fixed-size chunks processed in
    /// parallel. `ctx_of[b]` selects the context row of row `b`.
    fn sample(
        &self,
        model: &CompletionModel,
        rows: &mut [Vec<u32>],
        ctx: Option<&Array2<f64>>,
        ctx_of: &[usize],
        vars: &[usize],
        rngs: &mut [ChaCha8Rng],
    ) -> Vec<Vec<f64>> {
        let chunk = self.config.chunk.max(1);
        rows.par_chunks_mut(chunk)
            .zip(rngs.par_chunks_mut(chunk))
            .enumerate()
            .flat_map_iter(|(c, (rows, rngs))| {
                let cert = match (model, ctx) {
                    (CompletionModel::Ar(m), _) => m.sample_vars(rows, vars, rngs),
                    (CompletionModel::Ssar(m), Some(ctx)) => {
                        let sel = &ctx_of[c * chunk..c * chunk + rows.len()];
                        let sub = ctx.select(ndarray::Axis(0), sel);
                        m.sample_vars(rows, sub.view(), vars, rngs)
                    }
                    (CompletionModel::Ssar(_), None) => unreachable!("contexts are computed for every structured model"),
                };
                cert.into_iter()
            })
            .collect()
    }

    /// Samples the attributes of `tables[pos]` for each evidence row and
    /// stores them as synthesized rows of join table `yi`.
    #[allow(clippy::too_many_arguments)]
    fn synthesize(
        &self,
        run: &mut Run,
        model: &CompletionModel,
        pos: usize,
        yi: usize,
        mut evidence: Vec<Vec<u32>>,
        ctx: Option<&Array2<f64>>,
        ctx_of: &[usize],
        mut rngs: Vec<ChaCha8Rng>,
        keys: Vec<(Option<String>, Vec<(String, Value)>)>,
    ) -> Result<Vec<u64>> {
        let layout = model.layout();
        let vars: Vec<usize> = layout.attr_ranges[pos].clone().collect();
        let cert = self.sample(model, &mut evidence, ctx, ctx_of, &vars, &mut rngs);
        let def = self.schema.table_or_err(&run.tables[yi])?;
        let encs = model.encoders();
        let mut ids = Vec::with_capacity(evidence.len());
        for ((row, c), (pk, fks)) in evidence.iter().zip(cert).zip(keys) {
            let mut values = Vec::with_capacity(def.columns.len());
            let mut certainty = Vec::with_capacity(def.columns.len());
            let mut k = 0;
            for col in &def.columns {
                if col.ty == ColumnType::Key {
                    let v = if col.name == def.primary_key {
                        pk.clone().map(Value::Str).unwrap_or(Value::Null)
                    } else {
                        fks.iter().find(|(n, _)| n == &col.name).map(|(_, v)| v.clone()).unwrap_or(Value::Null)
                    };
                    values.push(v);
                    certainty.push(1.0);
                } else {
                    let var = vars[k];
                    values.push(encs[var].decode(row[var]));
                    certainty.push(c[k]);
                    k += 1;
                }
            }
            let encoded = vars.iter().map(|&v| row[v]).collect();
            ids.push(run.synth[yi].len() as u64);
            run.synth[yi].push(SynthRow {
                values,
                encoded,
                certainty,
            });
        }
        Ok(ids)
    }

    fn rng(&self, tag: &str, n: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix(self.config.seed, tag, n))
    }

    fn key_of(&self, run: &Run, ti: usize, src: &RowSource) -> Result<Option<String>> {
        Ok(match src {
            RowSource::Existing(r) | RowSource::Replaced { row: r, .. } => {
                Some(self.dataset.table(&run.tables[ti])?.pk(*r).to_string())
            }
            RowSource::Synthesized { key, .. } => key.clone(),
        })
    }

    fn fan_out(&self, run: &mut Run, step: &PlanStep, xi: usize, yi: usize) -> Result<()> {
        let fk = self
            .schema
            .fk(&step.fk)
            .ok_or_else(|| Error::Completion(format!("unknown relationship {}", step.fk)))?
            .clone();
        let (groups, of_row) = group_by_source(&run.rows, xi);
        let mut partners: Vec<Vec<RowSource>> = Vec::with_capacity(groups.len());
        let mut parent_keys = Vec::with_capacity(groups.len());
        for s in &groups {
            let key = self.key_of(run, xi, s)?;
            let kids = key
                .as_deref()
                .map(|k| self.index.children(&fk.id(), k))
                .unwrap_or(&[]);
            partners.push(kids.iter().map(|&c| RowSource::Existing(c)).collect());
            parent_keys.push(key);
        }
        if let Some(mu) = &step.model {
            let model = self.model(mu)?;
            let pos = mu.position;
            let first: Vec<usize> = {
                let mut f = vec![usize::MAX; groups.len()];
                for (i, &g) in of_row.iter().enumerate() {
                    if f[g] == usize::MAX {
                        f[g] = i;
                    }
                }
                f
            };
            let mut evidence = Vec::with_capacity(groups.len());
            for &i in &first {
                let row = run.rows[i].clone();
                evidence.push(self.evidence_row(run, model, pos, &row)?);
            }
            let ctx = self.contexts(model, &groups)?;
            // Tuple factors: known, or drawn from the model's prediction.
            let mut totals: Vec<Option<u32>> = groups.iter().map(|s| self.known_tf(&fk.id(), s)).collect();
            let unknown: Vec<usize> = (0..groups.len()).filter(|&g| totals[g].is_none()).collect();
            if !unknown.is_empty() {
                let rows: Vec<Vec<u32>> = unknown.iter().map(|&g| evidence[g].clone()).collect();
                let preds = match (model, &ctx) {
                    (CompletionModel::Ar(m), _) => m.predict_tuple_factor(&rows, pos)?,
                    (CompletionModel::Ssar(m), Some(c)) => {
                        let sub = c.select(ndarray::Axis(0), &unknown);
                        m.predict_tuple_factor(&rows, sub.view())?
                    }
                    (CompletionModel::Ssar(_), None) => unreachable!(),
                };
                for (&g, p) in unknown.iter().zip(preds) {
                    let mut rng = self.rng(&format!("tf/{}/{}", fk.id(), source_tag(&groups[g])), 0);
                    totals[g] = Some(draw(&p.probs, &mut rng) as u32);
                }
            }
            let mut ev_rows = Vec::new();
            let mut ctx_of = Vec::new();
            let mut rngs = Vec::new();
            let mut keys = Vec::new();
            let mut owner = Vec::new();
            for g in 0..groups.len() {
                let total = totals[g].unwrap() as i64;
                let deficit = total - partners[g].len() as i64;
                if deficit < 0 {
                    run.negative += 1;
                }
                for k in 0..deficit.max(0) as usize {
                    ev_rows.push(evidence[g].clone());
                    ctx_of.push(g);
                    rngs.push(self.rng(&format!("row/{}/{}", fk.id(), source_tag(&groups[g])), k));
                    let fkv = parent_keys[g].clone().map(Value::Str).unwrap_or(Value::Null);
                    keys.push((None, vec![(fk.child_column.clone(), fkv)]));
                    owner.push(g);
                }
            }
            let ids = self.synthesize(run, model, pos, yi, ev_rows, ctx.as_ref(), &ctx_of, rngs, keys)?;
            for (g, id) in owner.into_iter().zip(ids) {
                partners[g].push(RowSource::Synthesized { id, key: None });
            }
        }
        let mut rows = Vec::new();
        for (row, &g) in run.rows.iter().zip(&of_row) {
            for p in &partners[g] {
                let mut r = row.clone();
                r.push(p.clone());
                rows.push(r);
            }
        }
        run.rows = rows;
        Ok(())
    }

    fn many_to_one(&self, run: &mut Run, step: &PlanStep, xi: usize, yi: usize) -> Result<()> {
        let fk = self
            .schema
            .fk(&step.fk)
            .ok_or_else(|| Error::Completion(format!("unknown relationship {}", step.fk)))?
            .clone();
        let x_tab = self.dataset.table(&run.tables[xi])?;
        let y_tab = self.dataset.table(&run.tables[yi])?;
        let y_complete = self.schema.is_complete(&run.tables[yi]);
        let fk_col = x_tab.column_or_err(&fk.child_column)?;
        let (groups, of_row) = group_by_source(&run.rows, xi);
        let mut partner: Vec<Option<RowSource>> = vec![None; groups.len()];
        // Rows to synthesize: (group providing evidence, dangling key).
        let mut pending: Vec<(usize, Option<String>)> = Vec::new();
        let mut dangling: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (g, s) in groups.iter().enumerate() {
            match s {
                RowSource::Existing(r) | RowSource::Replaced { row: r, .. } => match fk_col.key(*r) {
                    Some(k) => match y_tab.row_of_key(k) {
                        Some(yr) => partner[g] = Some(RowSource::Existing(yr)),
                        None if step.model.is_some() => dangling.entry(k.to_string()).or_default().push(g),
                        None => {}
                    },
                    None => {}
                },
                RowSource::Synthesized { .. } => pending.push((g, None)),
            }
        }
        let dangling_groups: Vec<(String, Vec<usize>)> = dangling.into_iter().collect();
        for (k, gs) in &dangling_groups {
            pending.push((gs[0], Some(k.clone())));
        }
        if let (Some(mu), false) = (&step.model, pending.is_empty()) {
            let model = self.model(mu)?;
            let pos = mu.position;
            let first: Vec<usize> = {
                let mut f = vec![usize::MAX; groups.len()];
                for (i, &g) in of_row.iter().enumerate() {
                    if f[g] == usize::MAX {
                        f[g] = i;
                    }
                }
                f
            };
            let mut evidence = Vec::with_capacity(pending.len());
            for (g, _) in &pending {
                let row = run.rows[first[*g]].clone();
                evidence.push(self.evidence_row(run, model, pos, &row)?);
            }
            let anchors: Vec<RowSource> = pending.iter().map(|(g, _)| groups[*g].clone()).collect();
            let ctx = self.contexts(model, &anchors)?;
            let ctx_of: Vec<usize> = (0..pending.len()).collect();
            let rngs = pending
                .iter()
                .map(|(g, k)| {
                    let tag = match k {
                        Some(k) => format!("key/{}/{k}", fk.id()),
                        None => format!("row/{}/{}", fk.id(), source_tag(&groups[*g])),
                    };
                    self.rng(&tag, 0)
                })
                .collect();
            let keys = pending.iter().map(|(_, k)| (k.clone(), Vec::new())).collect();
            let ids = self.synthesize(run, model, pos, yi, evidence, ctx.as_ref(), &ctx_of, rngs, keys)?;
            let srcs: Vec<RowSource> = if y_complete {
                let queries: Vec<Vec<u32>> = ids.iter().map(|&id| run.synth[yi][id as usize].encoded.clone()).collect();
                let found = self.nn_lookup(&run.tables[yi], &queries)?;
                ids.iter()
                    .zip(found)
                    .map(|(&id, row)| RowSource::Replaced { row, synth: id })
                    .collect()
            } else {
                self.capacity_replace(run, &fk.id(), yi, &pending, &ids)?
            };
            for ((g, key), src) in pending.iter().zip(srcs) {
                match key {
                    Some(k) => {
                        let gs = &dangling_groups.iter().find(|(dk, _)| dk == k).unwrap().1;
                        for &g in gs {
                            partner[g] = Some(src.clone());
                        }
                    }
                    None => partner[*g] = Some(src),
                }
            }
        }
        let mut rows = Vec::new();
        for (row, &g) in run.rows.iter().zip(&of_row) {
            if let Some(p) = &partner[g] {
                let mut r = row.clone();
                r.push(p.clone());
                rows.push(r);
            }
        }
        run.rows = rows;
        Ok(())
    }

    /// Parents in an incomplete table: rows standing in for a dangling key
    /// stay synthesized. Other rows go to the nearest existing parent that
    /// still lacks children according to its known tuple factor, or stay
    /// synthesized when no such parent is left.
    fn capacity_replace(
        &self,
        run: &Run,
        fk_id: &str,
        yi: usize,
        pending: &[(usize, Option<String>)],
        ids: &[u64],
    ) -> Result<Vec<RowSource>> {
        let y_tab = self.dataset.table(&run.tables[yi])?;
        let mut capacity: Vec<(usize, u32)> = (0..y_tab.n_rows())
            .filter_map(|r| {
                let tf = self.dataset.tuple_factor(fk_id, r)?;
                let have = self.index.children(fk_id, y_tab.pk(r)).len() as u32;
                (tf > have).then_some((r, tf - have))
            })
            .collect();
        let (emb, points) = if capacity.is_empty() {
            (None, Vec::new())
        } else {
            let encs: Vec<_> = self
                .schema
                .table_or_err(&run.tables[yi])?
                .attributes()
                .map(|c| self.catalog.encoders.get(&run.tables[yi], &c.name).cloned())
                .collect::<Result<_>>()?;
            let emb = nn::Embedding::new(&encs);
            let pts: Vec<Vec<f64>> = capacity
                .iter()
                .map(|(r, _)| Ok(emb.embed(&self.catalog.encoders.encode_table_row(self.schema, y_tab, *r)?)))
                .collect::<Result<_>>()?;
            (Some(emb), pts)
        };
        let mut out = Vec::with_capacity(pending.len());
        for ((_, key), &id) in pending.iter().zip(ids) {
            if key.is_some() || emb.is_none() {
                out.push(RowSource::Synthesized { id, key: key.clone() });
                continue;
            }
            let q = emb.as_ref().unwrap().embed(&run.synth[yi][id as usize].encoded);
            let best = capacity
                .iter()
                .enumerate()
                .filter(|(_, (_, c))| *c > 0)
                .map(|(i, _)| (i, points[i].iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            match best {
                Some((i, _)) => {
                    capacity[i].1 -= 1;
                    out.push(RowSource::Replaced { row: capacity[i].0, synth: id });
                }
                None => out.push(RowSource::Synthesized { id, key: None }),
            }
        }
        Ok(out)
    }

    fn nn_lookup(&self, table: &str, queries: &[Vec<u32>]) -> Result<Vec<usize>> {
        let entry = {
            let mut cache = self.nn_cache.lock().expect("index cache lock");
            match cache.get(table) {
                Some(e) => e.clone(),
                None => {
                    let t = self.dataset.table(table)?;
                    let encs: Vec<_> = self
                        .schema
                        .table_or_err(table)?
                        .attributes()
                        .map(|c| self.catalog.encoders.get(table, &c.name).cloned())
                        .collect::<Result<_>>()?;
                    let emb = nn::Embedding::new(&encs);
                    let pts: Vec<Vec<f64>> = (0..t.n_rows())
                        .map(|r| Ok(emb.embed(&self.catalog.encoders.encode_table_row(self.schema, t, r)?)))
                        .collect::<Result<_>>()?;
                    let idx = NnIndex::build(pts, mix(self.config.seed, table, 0))?;
                    let e = Arc::new((emb, idx));
                    cache.insert(table.to_string(), e.clone());
                    e
                }
            }
        };
        let (emb, idx) = &*entry;
        let qs: Vec<Vec<f64>> = queries.iter().map(|q| emb.embed(q)).collect();
        Ok(idx.query_batch(&qs, &self.config.nn))
    }

    fn materialize(&self, run: &Run) -> Result<CompletedJoin> {
        let mut columns = Vec::new();
        let mut tabs: Vec<&Table> = Vec::new();
        for t in &run.tables {
            let def = self.schema.table_or_err(t)?;
            tabs.push(self.dataset.table(t)?);
            for c in &def.columns {
                columns.push(JoinColumn {
                    table: t.clone(),
                    column: c.name.clone(),
                    ty: c.ty,
                });
            }
        }
        let defs: Vec<_> = run.tables.iter().map(|t| self.schema.table_or_err(t)).collect::<Result<_>>()?;
        let offsets: Vec<usize> = defs
            .iter()
            .scan(0, |acc, d| {
                let o = *acc;
                *acc += d.columns.len();
                Some(o)
            })
            .collect();
        // Foreign keys inside the join as (child table, child column index,
        // parent column index); a synthesized child takes its parent's key.
        let mut links = Vec::new();
        for fk in &self.schema.relationships {
            let (Some(ci), Some(pi)) = (
                run.tables.iter().position(|t| *t == fk.child_table),
                run.tables.iter().position(|t| *t == fk.parent_table),
            ) else {
                continue;
            };
            let cc = defs[ci].columns.iter().position(|c| c.name == fk.child_column);
            let pc = defs[pi].columns.iter().position(|c| c.name == defs[pi].primary_key);
            if let (Some(cc), Some(pc)) = (cc, pc) {
                links.push((ci, offsets[ci] + cc, offsets[pi] + pc));
            }
        }
        let rows = run
            .rows
            .par_iter()
            .map(|sources| {
                let mut values = Vec::with_capacity(columns.len());
                let mut certainty = Vec::with_capacity(columns.len());
                for (ti, s) in sources.iter().enumerate() {
                    match s {
                        RowSource::Existing(r) => {
                            for c in &defs[ti].columns {
                                values.push(tabs[ti].value(&c.name, *r));
                                certainty.push(1.0);
                            }
                        }
                        RowSource::Replaced { row, synth } => {
                            let sr = &run.synth[ti][*synth as usize];
                            for (k, c) in defs[ti].columns.iter().enumerate() {
                                values.push(tabs[ti].value(&c.name, *row));
                                certainty.push(sr.certainty[k]);
                            }
                        }
                        RowSource::Synthesized { id, .. } => {
                            let sr = &run.synth[ti][*id as usize];
                            values.extend(sr.values.iter().cloned());
                            certainty.extend(sr.certainty.iter().cloned());
                        }
                    }
                }
                for &(ci, child, parent) in &links {
                    if matches!(sources[ci], RowSource::Synthesized { .. }) {
                        values[child] = values[parent].clone();
                    }
                }
                let origin = if sources.iter().all(|s| s.is_existing()) {
                    Origin::Existing
                } else {
                    Origin::Synthesized
                };
                JoinRow {
                    values,
                    sources: sources.clone(),
                    origin,
                    weight: 1.0,
                    certainty,
                }
            })
            .collect();
        Ok(CompletedJoin {
            path: run.tables.clone(),
            columns,
            rows,
            negative_deficits: run.negative,
        })
    }
}

/// Plan that joins `tables` without synthesis.
pub fn plain_plan(schema: &AnnotatedSchema, tables: &[String]) -> Result<CompletionPlan> {
    let first = tables
        .first()
        .ok_or_else(|| Error::Query("no tables to join".into()))?;
    let set = tables.iter().cloned().collect();
    let hops = join_tree(schema, first, &set)
        .ok_or_else(|| Error::Query(format!("tables {} are not joined by a tree of foreign keys", tables.join(", "))))?;
    let steps = hops
        .into_iter()
        .map(|(from, to, fk)| {
            let kind = schema.hop_kind(&from, &to).expect("joined tables are adjacent");
            PlanStep {
                from,
                to,
                fk,
                kind,
                model: None,
            }
        })
        .collect();
    Ok(CompletionPlan {
        query_tables: tables.to_vec(),
        root: first.clone(),
        steps,
        completion_order: Vec::new(),
        primary: None,
    })
}

#[cfg(test)]
pub(crate) mod tests;
