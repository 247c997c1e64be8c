use std::collections::HashMap;

use super::*;
use crate::query::{Aggregate, ResultRow};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Plug-in estimate of I(A;B) and H(B) in nats over the joined rows.
fn mutual_information(d: &Dataset) -> (f64, f64) {
    let a = d.table("a").unwrap();
    let b = d.table("b").unwrap();
    let mut joint: HashMap<(String, String), f64> = HashMap::new();
    for r in 0..b.n_rows() {
        let key = b.value("a_id", r).to_string();
        let pa = a.row_of_key(&key).unwrap();
        *joint.entry((a.value("a", pa).to_string(), b.value("b", r).to_string())).or_default() += 1.0;
    }
    let n: f64 = joint.values().sum();
    let mut pa: HashMap<&str, f64> = HashMap::new();
    let mut pb: HashMap<&str, f64> = HashMap::new();
    for ((x, y), c) in &joint {
        *pa.entry(x).or_default() += c / n;
        *pb.entry(y).or_default() += c / n;
    }
    let mi = joint
        .iter()
        .map(|((x, y), c)| {
            let p = c / n;
            p * (p / (pa[x.as_str()] * pb[y.as_str()])).ln()
        })
        .sum();
    let h = -pb.values().map(|p| p * p.ln()).sum::<f64>();
    (mi, h)
}

fn spec(predictability: f64, skew: f64) -> SyntheticSpec {
    SyntheticSpec { n_parents: 10_000, predictability, skew, tf_law: TfLaw::Constant { value: 1 }, ..Default::default() }
}

#[test]
fn full_predictability_gives_maximal_information() {
    let (d, _) = generate_synthetic(&spec(1.0, 0.0), 1).unwrap();
    let (mi, h) = mutual_information(&d);
    assert!((mi - h).abs() <= 0.01, "{mi} vs {h}");
}

#[test]
fn zero_predictability_gives_no_information() {
    let (d, _) = generate_synthetic(&spec(0.0, 0.0), 2).unwrap();
    let (mi, _) = mutual_information(&d);
    assert!(mi <= 0.02, "{mi}");
}

#[test]
fn zero_skew_is_uniform() {
    let (d, _) = generate_synthetic(&spec(1.0, 0.0), 3).unwrap();
    let a = d.table("a").unwrap();
    let mut counts: HashMap<String, f64> = HashMap::new();
    for r in 0..a.n_rows() {
        *counts.entry(a.value("a", r).to_string()).or_default() += 1.0;
    }
    assert_eq!(counts.len(), 20);
    let e = a.n_rows() as f64 / 20.0;
    let stat: f64 = counts.values().map(|c| (c - e).powi(2) / e).sum();
    let p = 1.0 - ChiSquared::new(19.0).unwrap().cdf(stat);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn skew_concentrates_mass() {
    let (d, _) = generate_synthetic(&spec(1.0, 1.5), 3).unwrap();
    let a = d.table("a").unwrap();
    let first = (0..a.n_rows()).filter(|&r| a.value("a", r).to_string() == "v0").count() as f64;
    // Zipf(1.5) over 20 values puts about 41% on the first one.
    let w = synthetic::zipf_weights(20, 1.5);
    let expected = w[0] / w.iter().sum::<f64>();
    assert!((first / a.n_rows() as f64 - expected).abs() < 0.02);
}

#[test]
fn generator_is_deterministic() {
    let s = SyntheticSpec { n_parents: 300, tf_law: TfLaw::ShiftedPoisson { mean: 3.0 }, numeric: true, ..Default::default() };
    let (a, _) = generate_synthetic(&s, 7).unwrap();
    let (b, _) = generate_synthetic(&s, 7).unwrap();
    let (c, _) = generate_synthetic(&s, 8).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert_ne!(a.fingerprint(), c.fingerprint());
    let (h1, _) = generate_housing(&HousingSpec::default(), 1).unwrap();
    let (h2, _) = generate_housing(&HousingSpec::default(), 1).unwrap();
    assert_eq!(h1.fingerprint(), h2.fingerprint());
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(generate_synthetic(&SyntheticSpec { predictability: 1.5, ..Default::default() }, 0).is_err());
    assert!(generate_synthetic(&SyntheticSpec { skew: -1.0, ..Default::default() }, 0).is_err());
}

#[test]
fn bias_reduction_micro_cases() {
    assert_eq!(bias_reduction(10.0, 6.0, 10.0), Some(1.0));
    assert_eq!(bias_reduction(10.0, 6.0, 6.0), Some(0.0));
    assert_eq!(bias_reduction(10.0, 6.0, 9.0), Some(0.75));
    assert_eq!(bias_reduction(10.0, 10.0, 9.0), None);
}

#[test]
fn cardinality_correction_micro_cases() {
    assert_eq!(cardinality_correction(1000.0, 600.0, 1000.0), Some(1.0));
    assert_eq!(cardinality_correction(1000.0, 600.0, 600.0), Some(0.0));
    assert_eq!(cardinality_correction(1000.0, 600.0, 950.0), Some(0.875));
    assert_eq!(cardinality_correction(1000.0, 1000.0, 950.0), None);
}

fn result(rows: &[(&str, f64)]) -> QueryResult {
    QueryResult {
        group_columns: vec![],
        aggregate: Aggregate::Count,
        rows: rows
            .iter()
            .map(|(g, v)| ResultRow {
                group: if g.is_empty() { vec![] } else { vec![Value::Str(g.to_string())] },
                estimate: Some(*v),
                count: *v,
                synthesized_fraction: 0.0,
                interval: None,
            })
            .collect(),
        synthesized_fraction: 0.0,
        plan: None,
        negative_deficits: 0,
    }
}

#[test]
fn relative_error_reduction_micro_cases() {
    let t = result(&[("", 100.0)]);
    let i = result(&[("", 60.0)]);
    let c = result(&[("", 90.0)]);
    assert!((relative_error_reduction(&t, &i, &c).unwrap() - 0.3).abs() < 1e-12);
    assert!((relative_error_reduction(&t, &i, &t).unwrap() - 0.4).abs() < 1e-12);
    assert_eq!(relative_error_reduction(&t, &i, &i), Some(0.0));
    // Group y is missing from the incomplete answer: error 1 there.
    let t = result(&[("x", 10.0), ("y", 4.0)]);
    let i = result(&[("x", 5.0)]);
    assert_eq!(relative_error(&i, &t), (Some(0.75), 0));
    // Zero truth is skipped and reported.
    let t = result(&[("x", 0.0), ("y", 4.0)]);
    let i = result(&[("x", 1.0), ("y", 2.0)]);
    assert_eq!(relative_error(&i, &t), (Some(0.5), 1));
}

#[test]
fn empty_workload_gives_an_empty_report() {
    let (d, s) = generate_synthetic(&SyntheticSpec { n_parents: 20, ..Default::default() }, 0).unwrap();
    let cfg = WorkloadConfig { planner: PlannerConfig::default(), seed: 0, bias: None };
    let r = run_workload(&[], &d, &d, &s, &cfg).unwrap();
    assert!(r.queries.is_empty());
    assert_eq!(r.relative_error_reduction, None);
}

#[test]
fn statistics_over_tables_and_joins() {
    let (d, _) = generate_synthetic(&SyntheticSpec { n_parents: 50, numeric: true, ..Default::default() }, 4).unwrap();
    let share = table_statistic(&d, "b", "b", Some("w0")).unwrap().unwrap();
    assert!((0.0..=1.0).contains(&share));
    assert!(table_statistic(&d, "b", "b", None).is_err());
    assert!(table_statistic(&d, "b", "x", None).unwrap().is_some());
}
