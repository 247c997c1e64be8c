//! Experiment tooling: synthetic databases, biased removal, the metrics
//! that compare complete, incomplete and completed databases, and
//! workload runs.

pub mod removal;
pub mod synthetic;

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::completion::{CompletionConfig, Completer};
use crate::encoding::mix;
use crate::error::{Error, Result};
use crate::ingest::{CompletedJoin, Dataset, Value};
use crate::planner::{candidate_plans, plan_models, train_all, CompletionPlan, ModelCatalog, ModelKind, PlannerConfig};
use crate::query::{
    count_fraction_interval, evaluate, execute, parse_query, ConfidenceInterval, CountRow, ExecuteOptions, QueryResult,
};
use crate::schema::{AnnotatedSchema, ColumnType};

pub use removal::{biased_removal, most_frequent, RemovalRecord, RemovalSpec};
pub use synthetic::{
    generate_housing, generate_synthetic, housing_schema, housing_workload, HousingSpec, SyntheticSpec, TfLaw,
};

/// `1 - |completed - truth| / |truth - incomplete|`; `None` without an
/// initial bias.
pub fn bias_reduction(truth: f64, incomplete: f64, completed: f64) -> Option<f64> {
    let denom = (truth - incomplete).abs();
    (denom > 1e-12).then(|| 1.0 - (completed - truth).abs() / denom)
}

/// `1 - |completed - truth| / |incomplete - truth|` over table sizes;
/// `None` when nothing is missing.
pub fn cardinality_correction(complete: f64, incomplete: f64, completed: f64) -> Option<f64> {
    bias_reduction(complete, incomplete, completed)
}

/// Mean relative error of `result` against `truth` over the union of their
/// groups. A group missing on either side counts as error 1; groups whose
/// true value is zero are skipped and counted in the second component.
pub fn relative_error(result: &QueryResult, truth: &QueryResult) -> (Option<f64>, usize) {
    let groups: BTreeSet<&Vec<Value>> = result.rows.iter().chain(&truth.rows).map(|r| &r.group).collect();
    let (mut sum, mut n, mut skipped) = (0.0, 0usize, 0usize);
    for g in groups {
        let t = truth.row(g).and_then(|r| r.estimate);
        let x = result.row(g).and_then(|r| r.estimate);
        let e = match (t, x) {
            (Some(t), _) if t == 0.0 => {
                skipped += 1;
                continue;
            }
            (Some(t), Some(x)) => (x - t).abs() / t.abs(),
            (None, None) => continue,
            _ => 1.0,
        };
        sum += e;
        n += 1;
    }
    ((n > 0).then(|| sum / n as f64), skipped)
}

/// Relative error of the incomplete answer minus that of the completed one.
pub fn relative_error_reduction(truth: &QueryResult, incomplete: &QueryResult, completed: &QueryResult) -> Option<f64> {
    Some(relative_error(incomplete, truth).0? - relative_error(completed, truth).0?)
}

/// Average of a continuous column, or the share of `value` in a
/// categorical one, over a dataset table.
pub fn table_statistic(dataset: &Dataset, table: &str, column: &str, value: Option<&str>) -> Result<Option<f64>> {
    let t = dataset.table(table)?;
    let col = t.column_or_err(column)?;
    let (mut num, mut den) = (0.0, 0.0);
    for r in 0..t.n_rows() {
        let v = col.value(r);
        match (col.ty(), value) {
            (ColumnType::Continuous, _) => {
                if let Some(x) = v.as_f64() {
                    num += x;
                    den += 1.0;
                }
            }
            (_, Some(target)) => {
                if !v.is_null() {
                    num += (v.as_str() == Some(target)) as u8 as f64;
                    den += 1.0;
                }
            }
            (_, None) => return Err(Error::Config(format!("{table}.{column} is categorical; name a value"))),
        }
    }
    Ok((den > 0.0).then(|| num / den))
}

/// Weighted version of [`table_statistic`] over a completed join.
pub fn join_statistic(join: &CompletedJoin, table: &str, column: &str, value: Option<&str>) -> Result<Option<f64>> {
    let i = join
        .column_index(table, column)
        .ok_or_else(|| Error::Query(format!("{table}.{column} is not in the join")))?;
    let (mut num, mut den) = (0.0, 0.0);
    for r in &join.rows {
        let v = &r.values[i];
        if v.is_null() {
            continue;
        }
        let x = match (join.columns[i].ty, value) {
            (ColumnType::Continuous, _) => v.as_f64().unwrap_or(0.0),
            (_, Some(target)) => (v.as_str() == Some(target)) as u8 as f64,
            (_, None) => return Err(Error::Config(format!("{table}.{column} is categorical; name a value"))),
        };
        num += r.weight * x;
        den += r.weight;
    }
    Ok((den > 0.0).then(|| num / den))
}

/// Per-query outcome of a workload run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryReport {
    pub sql: String,
    pub truth: Option<f64>,
    pub incomplete: Option<f64>,
    pub completed: Option<f64>,
    pub error_incomplete: Option<f64>,
    pub error_completed: Option<f64>,
    pub reduction: Option<f64>,
    /// Result rows skipped because their true value is zero.
    pub skipped_zero: usize,
    pub plan: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub queries: Vec<QueryReport>,
    /// Mean over the queries with a defined reduction.
    pub relative_error_reduction: Option<f64>,
    pub bias_reduction: Option<f64>,
    pub cardinality_correction: Option<f64>,
}

impl MetricsReport {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["query", "truth", "incomplete", "completed", "error_incomplete", "error_completed", "reduction"])?;
        let f = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for q in &self.queries {
            w.write_record([
                q.sql.clone(),
                f(q.truth),
                f(q.incomplete),
                f(q.completed),
                f(q.error_incomplete),
                f(q.error_completed),
                f(q.reduction),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// The attribute whose bias a workload run reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasTarget {
    pub table: String,
    pub attribute: String,
    pub value: Option<String>,
}

#[derive(Clone, Debug)]
pub struct WorkloadConfig {
    pub planner: PlannerConfig,
    pub seed: u64,
    pub bias: Option<BiasTarget>,
}

fn scalar(r: &QueryResult) -> Option<f64> {
    if r.group_columns.is_empty() {
        r.scalar()
    } else {
        None
    }
}

/// Completes `table` alone along the best plan and returns the join.
pub fn complete_table(completer: &Completer, table: &str, threshold: f64) -> Result<CompletedJoin> {
    let plan = crate::planner::select_plan(completer.schema, completer.catalog, &[table.to_string()], threshold)?;
    completer.complete_plan(&plan, &[])
}

/// Trains on the incomplete database, then answers every query on the
/// complete, incomplete and completed databases.
pub fn run_workload(
    queries: &[String],
    complete: &Dataset,
    incomplete: &Dataset,
    schema: &AnnotatedSchema,
    config: &WorkloadConfig,
) -> Result<MetricsReport> {
    if queries.is_empty() {
        return Ok(MetricsReport::default());
    }
    let full_schema = schema.with_complete_tables();
    let truth_data = crate::ingest::compute_tuple_factors(complete, &full_schema)?;
    let catalog = train_all(incomplete, schema, &plan_models(schema), &config.planner)?;
    let empty = ModelCatalog::default();
    let opts = ExecuteOptions { seed: config.seed, planner: config.planner.clone(), ..Default::default() };
    let inc_completer = Completer::new(incomplete, schema, &empty, CompletionConfig::default())?;
    let mut report = MetricsReport::default();
    for sql in queries {
        let q = parse_query(sql, schema)?;
        let truth = execute(&q, &truth_data, &full_schema, &empty, &opts)?;
        let inc = evaluate(&q, &inc_completer.plain_join(&q.tables)?, None, None)?;
        let done = execute(&q, incomplete, schema, &catalog, &opts)?;
        let (error_incomplete, skipped_zero) = relative_error(&inc, &truth);
        let error_completed = relative_error(&done, &truth).0;
        report.queries.push(QueryReport {
            sql: sql.clone(),
            truth: scalar(&truth),
            incomplete: scalar(&inc),
            completed: scalar(&done),
            error_incomplete,
            error_completed,
            reduction: relative_error_reduction(&truth, &inc, &done),
            skipped_zero,
            plan: done.plan.clone(),
        });
    }
    let reductions: Vec<f64> = report.queries.iter().filter_map(|q| q.reduction).collect();
    report.relative_error_reduction =
        (!reductions.is_empty()).then(|| reductions.iter().sum::<f64>() / reductions.len() as f64);
    if let Some(b) = &config.bias {
        let completer = Completer::new(
            incomplete,
            schema,
            &catalog,
            CompletionConfig { seed: config.seed, ..Default::default() },
        )?;
        let join = complete_table(&completer, &b.table, config.planner.threshold)?;
        let v = b.value.as_deref();
        let t = table_statistic(complete, &b.table, &b.attribute, v)?;
        let i = table_statistic(incomplete, &b.table, &b.attribute, v)?;
        let c = join_statistic(&join, &b.table, &b.attribute, v)?;
        if let (Some(t), Some(i), Some(c)) = (t, i, c) {
            report.bias_reduction = bias_reduction(t, i, c);
        }
        report.cardinality_correction = cardinality_correction(
            complete.table(&b.table)?.n_rows() as f64,
            incomplete.table(&b.table)?.n_rows() as f64,
            join.weighted_count(),
        );
    }
    Ok(report)
}

/// Outcome of one synthetic removal-and-completion run on table `b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    /// Some model of the requested kind passed the loss threshold.
    pub admissible: bool,
    /// Best held-out loss over marginal baseline for `b`.
    pub loss_ratio: Option<f64>,
    pub truth: f64,
    pub incomplete: f64,
    pub completed: Option<f64>,
    pub bias_reduction: Option<f64>,
    pub cardinality_correction: Option<f64>,
    pub plan: Option<String>,
}

/// Generates a synthetic database, removes rows of `b`, trains, completes
/// `b` with the best admissible plan whose model is of `kind` (any kind
/// when `None`), and measures the share of the designated value.
pub fn bias_experiment(
    data: &SyntheticSpec,
    removal: &RemovalSpec,
    planner: &PlannerConfig,
    kind: Option<ModelKind>,
    seed: u64,
) -> Result<ExperimentOutcome> {
    let (full, schema) = generate_synthetic(data, mix(seed, "data", 0))?;
    let removal = RemovalSpec { seed: mix(seed, "removal", 0), ..removal.clone() };
    let (inc, inc_schema, record) = biased_removal(&full, &schema, &removal)?;
    let value = record.designated.clone();
    let v = value.as_deref();
    let truth = table_statistic(&full, &removal.table, &removal.attribute, v)?.unwrap_or(0.0);
    let incomplete = table_statistic(&inc, &removal.table, &removal.attribute, v)?.unwrap_or(0.0);
    let mut planner = planner.clone();
    planner.train.fit.seed = mix(seed, "train", 0);
    if kind == Some(ModelKind::Ar) {
        planner.ssar = false;
    }
    let catalog = train_all(&inc, &inc_schema, &plan_models(&inc_schema), &planner)?;
    let loss_ratio = catalog
        .entries
        .iter()
        .filter(|e| e.targets.contains(&removal.table) && kind.is_none_or(|k| e.key.kind == k))
        .map(|e| e.loss_ratio(&removal.table))
        .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.min(r))));
    let tables = vec![removal.table.clone()];
    let plans: Vec<CompletionPlan> = match candidate_plans(&inc_schema, &catalog, &tables, planner.threshold) {
        Ok(p) => p,
        Err(Error::NoAdmissibleModel { .. }) => Vec::new(),
        Err(e) => return Err(e),
    };
    let plan = plans
        .into_iter()
        .find(|p| kind.is_none_or(|k| p.primary.as_ref().is_some_and(|(_, key)| key.kind == k)));
    let mut out = ExperimentOutcome {
        admissible: plan.is_some(),
        loss_ratio,
        truth,
        incomplete,
        completed: None,
        bias_reduction: None,
        cardinality_correction: None,
        plan: None,
    };
    let Some(plan) = plan else {
        return Ok(out);
    };
    let completer =
        Completer::new(&inc, &inc_schema, &catalog, CompletionConfig { seed: mix(seed, "complete", 0), ..Default::default() })?;
    let join = completer.complete_plan(&plan, &[])?;
    out.completed = join_statistic(&join, &removal.table, &removal.attribute, v)?;
    out.bias_reduction = out.completed.and_then(|c| bias_reduction(truth, incomplete, c));
    out.cardinality_correction = cardinality_correction(
        full.table(&removal.table)?.n_rows() as f64,
        inc.table(&removal.table)?.n_rows() as f64,
        join.weighted_count(),
    );
    out.plan = Some(plan.describe());
    Ok(out)
}

/// One trial of the count-fraction protocol: the share of the designated
/// value among the rows of `b`, answered on the completed table with
/// bounds, next to the true share.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractionTrial {
    pub truth: f64,
    pub estimate: f64,
    pub interval: ConfidenceInterval,
}

pub fn count_fraction_trial(
    data: &SyntheticSpec,
    removal: &RemovalSpec,
    planner: &PlannerConfig,
    level: f64,
    seed: u64,
) -> Result<Option<FractionTrial>> {
    let (full, schema) = generate_synthetic(data, mix(seed, "data", 0))?;
    let removal = RemovalSpec { seed: mix(seed, "removal", 0), ..removal.clone() };
    let (inc, inc_schema, record) = biased_removal(&full, &schema, &removal)?;
    let Some(value) = record.designated.clone() else {
        return Ok(None);
    };
    let truth = table_statistic(&full, &removal.table, &removal.attribute, Some(&value))?.unwrap_or(0.0);
    let mut planner = planner.clone();
    planner.train.fit.seed = mix(seed, "train", 0);
    let catalog = train_all(&inc, &inc_schema, &plan_models(&inc_schema), &planner)?;
    let plans = match candidate_plans(&inc_schema, &catalog, std::slice::from_ref(&removal.table), planner.threshold) {
        Ok(p) => p,
        Err(Error::NoAdmissibleModel { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let completer =
        Completer::new(&inc, &inc_schema, &catalog, CompletionConfig { seed: mix(seed, "complete", 0), ..Default::default() })?;
    let join = completer.complete_plan(&plans[0], &[])?;
    let i = join
        .column_index(&removal.table, &removal.attribute)
        .ok_or_else(|| Error::Query("bias attribute missing from the join".into()))?;
    let rows: Vec<CountRow> = join
        .rows
        .iter()
        .map(|r| {
            let member = r.values[i].as_str() == Some(value.as_str());
            CountRow { weight: r.weight, certainty: r.certainty[i], member, possible: !member }
        })
        .collect();
    Ok(count_fraction_interval(&rows, level).map(|(estimate, interval)| FractionTrial { truth, estimate, interval }))
}

#[cfg(test)]
mod tests;
