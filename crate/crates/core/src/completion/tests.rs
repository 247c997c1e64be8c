use std::collections::{BTreeMap, HashSet};
use std::sync::OnceLock;

use super::*;
use crate::evalharness::{biased_removal, generate_housing, HousingSpec, RemovalSpec, TfLaw};
use crate::ingest::tests::housing_data;
use crate::ingest::compute_tuple_factors;
use crate::planner::{build_plan, plan_models, train_all, ModelKey, ModelKind, PlannerConfig};
use crate::schema::tests::housing;

pub(crate) fn quick_planner() -> PlannerConfig {
    let mut c = PlannerConfig::default();
    c.train.hidden = 32;
    c.train.emb_dim = 8;
    c.train.fit.epochs = 8;
    c
}

pub(crate) struct Fixture {
    pub full: Dataset,
    pub data: Dataset,
    pub schema: AnnotatedSchema,
    pub catalog: ModelCatalog,
}

/// Housing-like database with 40% of the apartments removed, and models
/// trained on the rest.
pub(crate) fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let spec = HousingSpec {
            n_neighborhoods: 80,
            n_landlords: 30,
            apartments_per_neighborhood: TfLaw::ShiftedPoisson { mean: 4.0 },
            ..Default::default()
        };
        let (full, s) = generate_housing(&spec, 11).unwrap();
        let rm = RemovalSpec {
            table: "apartment".into(),
            attribute: "room_type".into(),
            keep_rate: 0.6,
            removal_correlation: 0.3,
            tf_keep_rate: 0.5,
            seed: 2,
            ..Default::default()
        };
        let (data, schema, _) = biased_removal(&full, &s, &rm).unwrap();
        let catalog = train_all(&data, &schema, &plan_models(&schema), &quick_planner()).unwrap();
        Fixture { full, data, schema, catalog }
    })
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Plan for `tables` whose apartment model is the masked model on `chain`
/// followed by apartment, ignoring the loss threshold.
fn plan_via(schema: &AnnotatedSchema, catalog: &ModelCatalog, tables: &[&str], chain: &[&str]) -> CompletionPlan {
    let (path, key) = catalog
        .paths_for(schema, "apartment")
        .into_iter()
        .find(|(p, k)| p.evidence_chain == strings(chain) && k.kind == ModelKind::Ar)
        .expect("catalog has the path");
    let all = |_: &ModelKey, _: &str| true;
    build_plan(schema, catalog, &strings(tables), &strings(chain), chain[0], Some((path, key)), &all).unwrap()
}

/// Reference join of the available data: nested loops over apartments.
fn reference_join_size(d: &Dataset, with_landlord: bool) -> usize {
    let a = d.table("apartment").unwrap();
    let n = d.table("neighborhood").unwrap();
    let l = d.table("landlord").unwrap();
    (0..a.n_rows())
        .filter(|&r| {
            let nk = a.value("neighborhood_id", r).to_string();
            let lk = a.value("landlord_id", r).to_string();
            (0..n.n_rows()).any(|p| n.pk(p) == nk) && (!with_landlord || (0..l.n_rows()).any(|p| l.pk(p) == lk))
        })
        .count()
}

#[test]
fn missing_children_are_synthesized_from_the_tuple_factor() {
    let s = housing();
    let mut d = housing_data();
    // n1 has three apartments, n2 one; both should have three.
    d.tuple_factors.insert("apartment.neighborhood_id".into(), vec![Some(3), Some(3)]);
    let d = compute_tuple_factors(&d, &s).unwrap();
    let catalog = train_all(&d, &s, &plan_models(&s), &quick_planner()).unwrap();
    let plan = plan_via(&s, &catalog, &["apartment"], &["neighborhood"]);
    let c = Completer::new(&d, &s, &catalog, CompletionConfig::default()).unwrap();
    let j = c.complete_plan(&plan, &[]).unwrap();
    assert_eq!(j.existing_count(), 4);
    assert_eq!(j.synthesized_count(), 2);
    let nb = j.column_index("apartment", "neighborhood_id").unwrap();
    let in_n2 = j.rows.iter().filter(|r| r.values[nb] == Value::Str("n2".into())).count();
    assert_eq!(in_n2, 3);
    assert_eq!(j.negative_deficits, 0);
}

#[test]
fn too_many_children_are_counted_not_removed() {
    let s = housing();
    let mut d = housing_data();
    d.tuple_factors.insert("apartment.neighborhood_id".into(), vec![Some(1), Some(1)]);
    let d = compute_tuple_factors(&d, &s).unwrap();
    let catalog = train_all(&d, &s, &plan_models(&s), &quick_planner()).unwrap();
    let plan = plan_via(&s, &catalog, &["apartment"], &["neighborhood"]);
    let j = Completer::new(&d, &s, &catalog, CompletionConfig::default()).unwrap().complete_plan(&plan, &[]).unwrap();
    assert_eq!(j.negative_deficits, 1);
    assert_eq!(j.existing_count(), 4);
    assert_eq!(j.synthesized_count(), 0);
}

#[test]
fn complete_database_gives_the_plain_join() {
    let f = fixture();
    // The full data under the incomplete annotation, with every tuple
    // factor known: nothing is missing.
    let mut full = f.full.clone();
    full.tuple_factors.clear();
    full.row_complete.insert("apartment.neighborhood_id".into(), vec![true; full.table("neighborhood").unwrap().n_rows()]);
    full.row_complete.insert("apartment.landlord_id".into(), vec![true; full.table("landlord").unwrap().n_rows()]);
    let full = compute_tuple_factors(&full, &f.schema).unwrap();
    let c = Completer::new(&full, &f.schema, &f.catalog, CompletionConfig::default()).unwrap();
    for (tables, chain) in [
        (vec!["apartment"], vec!["neighborhood"]),
        (vec!["apartment", "landlord"], vec!["neighborhood"]),
        (vec!["apartment", "neighborhood"], vec!["landlord"]),
    ] {
        let plan = plan_via(&f.schema, &f.catalog, &tables, &chain);
        let got = c.complete_plan(&plan, &[]).unwrap();
        let plain = c.plain_join(&strings(&tables)).unwrap();
        assert_eq!(got.synthesized_count(), 0, "{tables:?}");
        let bag = |j: &CompletedJoin| {
            let mut v: Vec<String> = j.rows.iter().map(|r| format!("{:?}", r.values)).collect();
            v.sort();
            v
        };
        assert_eq!(bag(&got), bag(&plain), "{tables:?}");
    }
}

#[test]
fn existing_rows_match_the_available_join() {
    let f = fixture();
    let c = Completer::new(&f.data, &f.schema, &f.catalog, CompletionConfig::default()).unwrap();
    let plan = plan_via(&f.schema, &f.catalog, &["apartment", "landlord"], &["neighborhood"]);
    let j = c.complete_plan(&plan, &[]).unwrap();
    assert_eq!(j.existing_count(), reference_join_size(&f.data, true));
    assert!(j.synthesized_count() > 0);
    assert!(j.columns.iter().all(|c| c.table != "neighborhood"));
    let plain = c.plain_join(&strings(&["apartment"])).unwrap();
    assert_eq!(plain.rows.len(), reference_join_size(&f.data, false));
}

#[test]
fn completion_is_deterministic() {
    let f = fixture();
    let cfg = CompletionConfig { seed: 5, ..Default::default() };
    let plan = plan_via(&f.schema, &f.catalog, &["apartment", "landlord"], &["neighborhood"]);
    let a = Completer::new(&f.data, &f.schema, &f.catalog, cfg.clone()).unwrap().complete_plan(&plan, &[]).unwrap();
    let b = Completer::new(&f.data, &f.schema, &f.catalog, cfg).unwrap().complete_plan(&plan, &[]).unwrap();
    assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    let other = CompletionConfig { seed: 6, ..Default::default() };
    let c = Completer::new(&f.data, &f.schema, &f.catalog, other).unwrap().complete_plan(&plan, &[]).unwrap();
    assert_ne!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&c).unwrap());
}

#[test]
fn replaced_landlords_exist() {
    let f = fixture();
    let c = Completer::new(&f.data, &f.schema, &f.catalog, CompletionConfig::default()).unwrap();
    let plan = plan_via(&f.schema, &f.catalog, &["apartment", "landlord"], &["neighborhood"]);
    let j = c.complete_plan(&plan, &[]).unwrap();
    let landlords = f.data.table("landlord").unwrap();
    let keys: HashSet<&str> = (0..landlords.n_rows()).map(|r| landlords.pk(r)).collect();
    let id = j.column_index("landlord", "id").unwrap();
    let fk = j.column_index("apartment", "landlord_id").unwrap();
    for r in &j.rows {
        assert!(keys.contains(r.values[id].to_string().as_str()));
        assert_eq!(r.values[id], r.values[fk]);
    }
}

#[test]
fn pushdown_keeps_the_matching_rows() {
    let f = fixture();
    let c = Completer::new(&f.data, &f.schema, &f.catalog, CompletionConfig::default()).unwrap();
    let plan = plan_via(&f.schema, &f.catalog, &["apartment", "neighborhood"], &["neighborhood"]);
    let all = c.complete_plan(&plan, &[]).unwrap();
    let push = [Pushdown { column: "density".into(), value: Value::Str("high".into()) }];
    let some = c.complete_plan(&plan, &push).unwrap();
    let d = all.column_index("neighborhood", "density").unwrap();
    let filtered: Vec<&JoinRow> = all.rows.iter().filter(|r| r.values[d] == push[0].value).collect();
    assert_eq!(filtered.len(), some.rows.len());
    for (a, b) in filtered.iter().zip(&some.rows) {
        assert_eq!(a.values, b.values);
    }
}

#[test]
fn multi_path_keeps_existing_rows_once() {
    let f = fixture();
    let c = Completer::new(&f.data, &f.schema, &f.catalog, CompletionConfig::default()).unwrap();
    let via_n = plan_via(&f.schema, &f.catalog, &["apartment"], &["neighborhood"]);
    let via_l = plan_via(&f.schema, &f.catalog, &["apartment"], &["landlord"]);
    let single = c.multi_path_complete(std::slice::from_ref(&via_n)).unwrap();
    assert_eq!(single, c.complete_plan(&via_n, &[]).unwrap());
    let both = c.multi_path_complete(&[via_n.clone(), via_l.clone()]).unwrap();
    assert_eq!(both.existing_count(), f.data.table("apartment").unwrap().n_rows());
    let a = c.complete_plan(&via_n, &[]).unwrap().weighted_count();
    let b = c.complete_plan(&via_l, &[]).unwrap().weighted_count();
    let w = both.weighted_count();
    assert!(w <= a.max(b) + 1e-9 && w + 1e-9 >= a.min(b).min(both.existing_count() as f64), "{w} {a} {b}");
}

#[test]
fn offline_cache_serves_identical_joins() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let c = Completer::new(&f.data, &f.schema, &f.catalog, CompletionConfig::default()).unwrap();
    let entries = offline_complete(&c, dir.path(), &[], 1.0).unwrap();
    assert_eq!(entries.len(), 2);
    let mut by_tables: BTreeMap<Vec<String>, usize> = BTreeMap::new();
    for e in &entries {
        by_tables.insert(e.tables.clone(), e.rows);
    }
    assert!(by_tables.contains_key(&strings(&["neighborhood", "apartment"])));
    let tables = strings(&["neighborhood", "apartment"]);
    let plan = crate::planner::select_plan(&f.schema, &f.catalog, &tables, 1.0).unwrap();
    let (cached, hit) = offline::complete_cached(&c, &plan, dir.path()).unwrap();
    assert!(hit);
    let online = c.complete_plan(&plan, &[]).unwrap();
    assert_eq!(serde_json::to_vec(&cached).unwrap(), serde_json::to_vec(&online).unwrap());
    let projected = project_cached(&c, dir.path(), &strings(&["apartment"])).unwrap().unwrap();
    assert!(projected.columns.iter().all(|c| c.table == "apartment"));
    let empty = tempfile::tempdir().unwrap();
    assert!(project_cached(&c, empty.path(), &strings(&["apartment"])).unwrap().is_none());
}

#[test]
fn no_incomplete_tables_means_nothing_to_cache() {
    let s = housing().with_complete_tables();
    let d = compute_tuple_factors(&housing_data(), &s).unwrap();
    let cat = ModelCatalog::default();
    let c = Completer::new(&d, &s, &cat, CompletionConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert!(offline_complete(&c, dir.path(), &[], 0.9).unwrap().is_empty());
}
