//! Aggregate queries over completed joins.
//!
//! Filters, groups and aggregates are applied to the weighted rows of a
//! [`CompletedJoin`]. With a confidence level, every result row carries an
//! interval built from the certainties of the synthesized values it
//! depends on; groups are bounded independently of each other.

pub mod confidence;
pub mod parser;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::completion::offline::complete_cached;
use crate::completion::{plain_plan, CompletionConfig, Completer, Pushdown};
use crate::error::{Error, Result};
use crate::ingest::{CompletedJoin, Dataset, Origin, Value};
use crate::planner::{advanced_select, select_plan, BiasHint, ModelCatalog, PlannerConfig};
use crate::schema::{AnnotatedSchema, HopKind};

pub use confidence::{
    avg_interval, certainty, count_fraction_interval, count_interval, sum_interval, AvgRow, ConfidenceInterval,
    CountRow, ValueBounds,
};
pub use parser::{check_join_tree, parse_query, Aggregate, AggregateQuery, CmpOp, ColumnRef, Predicate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub group: Vec<Value>,
    /// `None` for SUM and AVG without values, and for queries without an
    /// aggregate.
    pub estimate: Option<f64>,
    /// Weighted number of rows in the group.
    pub count: f64,
    pub synthesized_fraction: f64,
    pub interval: Option<ConfidenceInterval>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub group_columns: Vec<ColumnRef>,
    pub aggregate: Aggregate,
    pub rows: Vec<ResultRow>,
    /// Weighted share of synthesized rows among all rows passing the filters.
    pub synthesized_fraction: f64,
    pub plan: Option<String>,
    pub negative_deficits: u64,
}

impl QueryResult {
    pub fn row(&self, group: &[Value]) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.group == group)
    }

    /// The estimate of a query without GROUP BY.
    pub fn scalar(&self) -> Option<f64> {
        self.rows.first().and_then(|r| r.estimate)
    }

    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = self.group_columns.iter().map(|c| c.to_string()).collect();
        h.extend(["estimate", "lower", "upper", "count", "synthesized_fraction"].map(String::from));
        h
    }

    fn cells(&self) -> Vec<Vec<String>> {
        let num = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        self.rows
            .iter()
            .map(|r| {
                let mut c: Vec<String> = r.group.iter().map(|v| v.to_string()).collect();
                c.push(num(r.estimate));
                c.push(num(r.interval.as_ref().map(|i| i.lower)));
                c.push(num(r.interval.as_ref().map(|i| i.upper)));
                c.push(num(Some(r.count)));
                c.push(num(Some(r.synthesized_fraction)));
                c
            })
            .collect()
    }

    /// Aligned text table.
    pub fn render(&self) -> String {
        let header = self.header();
        let cells = self.cells();
        let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for row in &cells {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let line = |row: &[String]| {
            row.iter()
                .zip(&width)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = line(&header);
        out.push('\n');
        out.push_str(&width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        out.push('\n');
        for row in &cells {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for row in self.cells() {
            w.write_record(row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[derive(Default)]
struct Group {
    count: Vec<CountRow>,
    avg: Vec<AvgRow>,
    weight: f64,
    synth: f64,
}

fn column(join: &CompletedJoin, c: &ColumnRef) -> Result<usize> {
    join.column_index(&c.table, &c.column)
        .ok_or_else(|| Error::Query(format!("column {c} is not part of the completed join")))
}

/// Applies the query to a completed join. `bounds` describes the
/// aggregated attribute for interval construction; when absent it is
/// taken from the join's observed values.
pub fn evaluate(
    query: &AggregateQuery,
    join: &CompletedJoin,
    level: Option<f64>,
    bounds: Option<&ValueBounds>,
) -> Result<QueryResult> {
    if let Some(l) = level {
        if !(l > 0.0 && l < 1.0) {
            return Err(Error::Query(format!("confidence level {l} is outside (0, 1)")));
        }
    }
    let filters: Vec<(usize, &Predicate)> =
        query.filters.iter().map(|p| Ok((column(join, &p.column)?, p))).collect::<Result<_>>()?;
    let group_cols: Vec<usize> = query.group_by.iter().map(|c| column(join, c)).collect::<Result<_>>()?;
    let agg_col = query.aggregate_column().map(|c| column(join, c)).transpose()?;

    // Group keys in output order: members only, so empty groups are absent.
    let mut groups: BTreeMap<Vec<Value>, Group> = BTreeMap::new();
    if query.group_by.is_empty() {
        groups.insert(Vec::new(), Group::default());
    }
    let passes = |r: &crate::ingest::JoinRow| -> Vec<bool> {
        filters.iter().map(|(i, p)| p.op.eval(&r.values[*i], &p.value)).collect()
    };
    for r in &join.rows {
        if passes(r).iter().all(|&b| b) {
            groups.entry(group_cols.iter().map(|&i| r.values[i].clone()).collect()).or_default();
        }
    }

    let membership: Vec<usize> = filters.iter().map(|f| f.0).chain(group_cols.iter().copied()).collect();
    let (mut passed_w, mut passed_synth) = (0.0, 0.0);
    for r in &join.rows {
        let pass = passes(r);
        let key: Vec<Value> = group_cols.iter().map(|&i| r.values[i].clone()).collect();
        let c: f64 = membership.iter().map(|&i| r.certainty[i]).product();
        let filters_ok = pass.iter().all(|&b| b);
        // Columns that would have to change for the row to reach a group
        // other than its own must all be synthesized.
        let failing_filters_uncertain = filters.iter().zip(&pass).all(|((i, _), &ok)| ok || r.certainty[*i] < 1.0);
        let synth = r.origin == Origin::Synthesized;
        if filters_ok {
            passed_w += r.weight;
            if synth {
                passed_synth += r.weight;
            }
            let acc = groups.get_mut(&key).expect("groups hold every member key");
            acc.weight += r.weight;
            if synth {
                acc.synth += r.weight;
            }
            if let Some(a) = agg_col {
                if let Some(v) = r.values[a].as_f64() {
                    acc.avg.push(AvgRow { weight: r.weight, value: v, certainty: r.certainty[a] });
                }
            }
        }
        if level.is_none() {
            continue;
        }
        for (g, acc) in groups.iter_mut() {
            let in_group = filters_ok && *g == key;
            let group_reachable = group_cols
                .iter()
                .zip(g)
                .all(|(&i, v)| r.values[i] == *v || r.certainty[i] < 1.0);
            acc.count.push(CountRow {
                weight: r.weight,
                certainty: c,
                member: in_group,
                possible: !in_group && failing_filters_uncertain && group_reachable,
            });
        }
    }

    let observed: Vec<f64>;
    let derived;
    let bounds = match (bounds, agg_col, level) {
        (Some(b), _, _) => Some(b),
        (None, Some(a), Some(l)) => {
            observed = join
                .rows
                .iter()
                .filter(|r| r.certainty[a] >= 1.0)
                .filter_map(|r| r.values[a].as_f64())
                .collect();
            derived = ValueBounds::from_values(&observed, l);
            derived.as_ref()
        }
        _ => None,
    };

    let mut rows = Vec::with_capacity(groups.len());
    for (group, acc) in groups {
        let value_sum: f64 = acc.avg.iter().map(|r| r.weight * r.value).sum();
        let value_weight: f64 = acc.avg.iter().map(|r| r.weight).sum();
        let estimate = match &query.aggregate {
            Aggregate::Count => Some(acc.weight),
            Aggregate::Sum(_) => (!acc.avg.is_empty()).then_some(value_sum),
            Aggregate::Avg(_) => (!acc.avg.is_empty()).then(|| value_sum / value_weight),
            Aggregate::None => None,
        };
        let interval = level.and_then(|l| {
            let (_, count_ci) = count_interval(acc.count.iter().copied(), l);
            match &query.aggregate {
                Aggregate::Count => Some(count_ci),
                Aggregate::Avg(_) => avg_interval(&acc.avg, bounds?, l).map(|x| x.1),
                Aggregate::Sum(_) => {
                    let (_, avg_ci) = avg_interval(&acc.avg, bounds?, l)?;
                    // Count bounds of the rows that carry a value.
                    let share = value_weight / acc.weight;
                    let scaled = ConfidenceInterval {
                        level: l,
                        lower: count_ci.lower * share,
                        upper: count_ci.upper * share,
                        theoretical_min: count_ci.theoretical_min * share,
                        theoretical_max: count_ci.theoretical_max * share,
                    };
                    Some(sum_interval(&scaled, &avg_ci))
                }
                Aggregate::None => None,
            }
        });
        rows.push(ResultRow {
            group,
            estimate,
            count: acc.weight,
            synthesized_fraction: if acc.weight > 0.0 { (acc.synth / acc.weight).clamp(0.0, 1.0) } else { 0.0 },
            interval,
        });
    }
    Ok(QueryResult {
        group_columns: query.group_by.clone(),
        aggregate: query.aggregate.clone(),
        rows,
        synthesized_fraction: if passed_w > 0.0 { (passed_synth / passed_w).clamp(0.0, 1.0) } else { 0.0 },
        plan: None,
        negative_deficits: join.negative_deficits,
    })
}

/// How a query is planned and completed.
#[derive(Clone, Debug)]
pub struct ExecuteOptions {
    pub seed: u64,
    pub level: Option<f64>,
    pub hint: Option<BiasHint>,
    /// Score candidate plans on derived scenarios instead of taking the
    /// lowest-loss plan.
    pub advanced: bool,
    /// Completed joins are read from and written to this directory.
    pub cache_root: Option<PathBuf>,
    pub planner: PlannerConfig,
    pub completion: CompletionConfig,
}

impl Default for ExecuteOptions {
    fn default() -> Self {
        ExecuteOptions {
            seed: 0,
            level: None,
            hint: None,
            advanced: false,
            cache_root: None,
            planner: PlannerConfig::default(),
            completion: CompletionConfig::default(),
        }
    }
}

/// Plans, completes and evaluates `query`.
pub fn execute(
    query: &AggregateQuery,
    dataset: &Dataset,
    schema: &AnnotatedSchema,
    catalog: &ModelCatalog,
    options: &ExecuteOptions,
) -> Result<QueryResult> {
    let completion = CompletionConfig { seed: options.seed, ..options.completion.clone() };
    let completer = Completer::new(dataset, schema, catalog, completion)?;
    let all_complete = query.tables.iter().all(|t| schema.is_complete(t));
    let plan = if all_complete {
        plain_plan(schema, &query.tables)?
    } else if options.advanced || options.hint.is_some() {
        advanced_select(&completer, &query.tables, options.hint.as_ref(), &options.planner)?
    } else {
        select_plan(schema, catalog, &query.tables, options.planner.threshold)?
    };
    let join = match &options.cache_root {
        Some(root) if !all_complete => complete_cached(&completer, &plan, root)?.0,
        _ => {
            // Equality filters on the root table shrink the evidence. Fan-out
            // rows are generated from per-row seeds, so the surviving rows
            // match the unfiltered completion; n:1 hops share synthesized
            // parents across rows and get no push-down.
            let fan_out_only = plan.steps.iter().all(|s| s.kind == HopKind::FanOut);
            let pushdown: Vec<Pushdown> = query
                .filters
                .iter()
                .filter(|p| fan_out_only && p.op == CmpOp::Eq && p.column.table == plan.root)
                .map(|p| Pushdown { column: p.column.column.clone(), value: p.value.clone() })
                .collect();
            completer.complete_plan(&plan, &pushdown)?
        }
    };
    let bounds = match (query.aggregate_column(), options.level) {
        (Some(c), Some(l)) => {
            let t = dataset.table(&c.table)?;
            let col = t.column_or_err(&c.column)?;
            let vals: Vec<f64> = (0..t.n_rows()).filter_map(|r| col.value(r).as_f64()).collect();
            ValueBounds::from_values(&vals, l)
        }
        _ => None,
    };
    let mut result = evaluate(query, &join, options.level, bounds.as_ref())?;
    if !all_complete {
        result.plan = Some(plan.describe());
    }
    Ok(result)
}
