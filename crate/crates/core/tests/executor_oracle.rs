//! The executor agrees with nested-loop enumeration on random complete
//! databases, with and without a trained catalog.

mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use relcomp_core::planner::ModelCatalog;
use relcomp_core::query::{execute, parse_query, ExecuteOptions};

fn engine(db: &common::RandomDb, sql: &str, seed: u64) -> BTreeMap<Option<Option<String>>, Option<f64>> {
    let q = parse_query(sql, &db.schema).unwrap_or_else(|e| panic!("{sql}: {e}"));
    let opts = ExecuteOptions { seed, ..Default::default() };
    let r = execute(&q, &db.dataset, &db.schema, &ModelCatalog::default(), &opts)
        .unwrap_or_else(|e| panic!("{sql}: {e}"));
    r.rows.iter().map(|row| (common::group_key(&row.group), row.estimate)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn execute_matches_nested_loop(db_seed in any::<u64>(), query_seed in any::<u64>(), max_rows in 1usize..60) {
        let db = common::random_db(db_seed, max_rows);
        let q = common::random_query(&db, query_seed);
        let sql = q.sql();
        prop_assert_eq!(engine(&db, &sql, 0), common::nested_loop(&db, &q), "{}", sql);
    }

    /// Complete data leaves nothing to sample, so the seed is irrelevant.
    #[test]
    fn seed_does_not_change_complete_answers(db_seed in any::<u64>(), seed in any::<u64>()) {
        let db = common::random_db(db_seed, 20);
        let sql = common::random_query(&db, db_seed).sql();
        prop_assert_eq!(engine(&db, &sql, 0), engine(&db, &sql, seed));
    }
}
