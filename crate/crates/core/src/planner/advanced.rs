//! Plan choice by self-supervised scenarios.
//!
//! The available data stands in for the complete database: rows of the
//! target table are removed again with a bias, the plan's models are
//! retrained on what is left, and the plan is scored by how much of the
//! induced bias its completion removes. A user hint about the direction of
//! the real bias filters the candidates first.

use serde::{Deserialize, Serialize};

use super::{candidate_plans, BiasDirection, BiasHint, CatalogEntry, CompletionModel, CompletionPlan, ModelCatalog, PlannerConfig};
use crate::armodel::train_on_sequence;
use crate::completion::{CompletionConfig, Completer};
use crate::encoding::mix;
use crate::error::Result;
use crate::evalharness::{bias_reduction, biased_removal, join_statistic, RemovalSpec};
use crate::ingest::{ColumnData, Dataset};
use crate::schema::ColumnType;
use crate::ssarmodel::train_ssar;

/// Secondary removal applied to the available data.
const SCENARIO_KEEP_RATE: f64 = 0.5;
const SCENARIO_CORRELATION: f64 = 0.4;
const SCENARIO_TF_KEEP_RATE: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPlan {
    pub plan: CompletionPlan,
    /// Mean bias reduction over the scenarios; `None` when no scenario
    /// produced a measurable bias.
    pub score: Option<f64>,
    /// Change of the hinted statistic caused by completing the real data.
    pub shift: Option<f64>,
    /// The shift agrees with the hint, or there is no applicable hint.
    pub conforms: bool,
}

/// Values of a categorical column by decreasing frequency, ties by value.
fn by_frequency(col: &ColumnData, n: usize) -> Vec<String> {
    let mut counts: std::collections::BTreeMap<String, usize> = Default::default();
    for r in 0..n {
        if let Some(s) = col.value(r).as_str() {
            *counts.entry(s.to_string()).or_default() += 1;
        }
    }
    let mut v: Vec<(String, usize)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.into_iter().map(|x| x.0).collect()
}

/// The catalog with the plan's models retrained on `data`.
fn retrain(
    catalog: &ModelCatalog,
    plan: &CompletionPlan,
    data: &Dataset,
    schema: &crate::schema::AnnotatedSchema,
    config: &PlannerConfig,
    scenario: u64,
) -> Result<ModelCatalog> {
    let mut entries = Vec::new();
    for m in plan.models() {
        if entries.iter().any(|e: &CatalogEntry| e.key == m.key) {
            continue;
        }
        let Some(entry) = catalog.get(&m.key) else {
            continue;
        };
        let mut cfg = config.train.clone();
        cfg.fit.seed = mix(config.train.fit.seed, &format!("{}/{scenario}", m.key), 0);
        let model = match &entry.model {
            CompletionModel::Ar(_) => {
                CompletionModel::Ar(train_on_sequence(data, schema, &m.key.tables, &catalog.encoders, &cfg)?)
            }
            CompletionModel::Ssar(s) => {
                CompletionModel::Ssar(train_ssar(data, schema, &s.path, &s.walk, &catalog.encoders, &cfg)?)
            }
        };
        entries.push(CatalogEntry { key: m.key.clone(), targets: entry.targets.clone(), model });
    }
    Ok(ModelCatalog { encoders: catalog.encoders.clone(), specs: Vec::new(), entries })
}

/// The attribute a plan is scored on: the hinted one when it belongs to the
/// target table, else the target's first attribute.
fn scored_attribute(
    completer: &Completer,
    target: &str,
    hint: Option<&BiasHint>,
) -> Result<Option<(String, ColumnType)>> {
    let def = completer.schema.table_or_err(target)?;
    if let Some(h) = hint.filter(|h| h.table == target) {
        if let Some(c) = def.column(&h.attribute) {
            return Ok(Some((c.name.clone(), c.ty)));
        }
    }
    Ok(def.attributes().next().map(|c| (c.name.clone(), c.ty)))
}

fn score(completer: &Completer, plan: &CompletionPlan, hint: Option<&BiasHint>, config: &PlannerConfig) -> Result<Option<f64>> {
    let Some((path, _)) = &plan.primary else {
        return Ok(None);
    };
    let target = path.target.as_str();
    let Some((attr, ty)) = scored_attribute(completer, target, hint)? else {
        return Ok(None);
    };
    let table = completer.dataset.table(target)?;
    let ranked = match ty {
        ColumnType::Categorical => by_frequency(table.column_or_err(&attr)?, table.n_rows()),
        _ => Vec::new(),
    };
    let seed = completer.config.seed;
    let truth_join = completer.plain_join(&plan.query_tables)?;
    let mut scores = Vec::new();
    for s in 0..config.scenarios as u64 {
        let designated = (!ranked.is_empty()).then(|| ranked[s as usize % ranked.len()].clone());
        let spec = RemovalSpec {
            table: target.to_string(),
            attribute: attr.clone(),
            keep_rate: SCENARIO_KEEP_RATE,
            removal_correlation: SCENARIO_CORRELATION,
            tf_keep_rate: SCENARIO_TF_KEEP_RATE,
            designated: designated.clone(),
            cascade: false,
            seed: mix(seed, "scenario", s as usize),
        };
        let (data, schema, _) = biased_removal(completer.dataset, completer.schema, &spec)?;
        let catalog = retrain(completer.catalog, plan, &data, &schema, config, s)?;
        let inner = Completer::new(
            &data,
            &schema,
            &catalog,
            CompletionConfig { seed: mix(seed, "scenario-completion", s as usize), ..completer.config.clone() },
        )?;
        let v = designated.as_deref();
        let truth = join_statistic(&truth_join, target, &attr, v)?;
        let incomplete = join_statistic(&inner.plain_join(&plan.query_tables)?, target, &attr, v)?;
        let completed = join_statistic(&inner.complete_plan(plan, &[])?, target, &attr, v)?;
        if let (Some(t), Some(i), Some(c)) = (truth, incomplete, completed) {
            if let Some(b) = bias_reduction(t, i, c) {
                scores.push(b);
            }
        }
    }
    Ok((!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64))
}

/// Shift of the hinted statistic from the available join to the completed
/// one, when the hint's table is part of the query.
fn hint_shift(completer: &Completer, plan: &CompletionPlan, hint: &BiasHint) -> Result<Option<f64>> {
    if !plan.query_tables.contains(&hint.table) {
        return Ok(None);
    }
    let def = completer.schema.table_or_err(&hint.table)?;
    let Some(col) = def.column(&hint.attribute) else {
        return Ok(None);
    };
    let value = match (&hint.value, col.ty) {
        (Some(v), _) => Some(v.clone()),
        (None, ColumnType::Continuous) => None,
        (None, _) => {
            let t = completer.dataset.table(&hint.table)?;
            by_frequency(t.column_or_err(&hint.attribute)?, t.n_rows()).into_iter().next()
        }
    };
    let v = value.as_deref();
    let before = join_statistic(&completer.plain_join(&plan.query_tables)?, &hint.table, &hint.attribute, v)?;
    let after = join_statistic(&completer.complete_plan(plan, &[])?, &hint.table, &hint.attribute, v)?;
    Ok(before.zip(after).map(|(b, a)| a - b))
}

/// Scores every candidate plan for the query.
pub fn score_plans(
    completer: &Completer,
    query_tables: &[String],
    hint: Option<&BiasHint>,
    config: &PlannerConfig,
) -> Result<Vec<ScoredPlan>> {
    let plans = candidate_plans(completer.schema, completer.catalog, query_tables, config.threshold)?;
    plans
        .into_iter()
        .map(|plan| {
            let score = score(completer, &plan, hint, config)?;
            let (shift, conforms) = match hint {
                Some(h) if plan.query_tables.contains(&h.table) => {
                    let shift = hint_shift(completer, &plan, h)?;
                    let ok = shift.is_some_and(|s| match h.direction {
                        // Overestimated in the available data: completion
                        // must lower the statistic.
                        BiasDirection::Overestimated => s < 0.0,
                        BiasDirection::Underestimated => s > 0.0,
                    });
                    (shift, ok)
                }
                _ => (None, true),
            };
            Ok(ScoredPlan { plan, score, shift, conforms })
        })
        .collect()
}

/// The best-scoring plan among those agreeing with the hint, or among all
/// plans when none agrees. A single candidate is returned without scoring;
/// ties keep the basic selection order.
pub fn advanced_select(
    completer: &Completer,
    query_tables: &[String],
    hint: Option<&BiasHint>,
    config: &PlannerConfig,
) -> Result<CompletionPlan> {
    let mut plans = candidate_plans(completer.schema, completer.catalog, query_tables, config.threshold)?;
    if plans.len() == 1 {
        return Ok(plans.remove(0));
    }
    let scored = score_plans(completer, query_tables, hint, config)?;
    let any_conforming = scored.iter().any(|s| s.conforms);
    let mut best: Option<&ScoredPlan> = None;
    for s in scored.iter().filter(|s| s.conforms || !any_conforming) {
        let v = s.score.unwrap_or(f64::NEG_INFINITY);
        if best.is_none_or(|b| v > b.score.unwrap_or(f64::NEG_INFINITY)) {
            best = Some(s);
        }
    }
    Ok(best.expect("at least two candidates").plan.clone())
}
