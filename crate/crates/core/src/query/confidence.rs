//! Completion certainty and confidence bounds for aggregates.

use serde::{Deserialize, Serialize};

const SMOOTHING: f64 = 1e-9;

/// `1 - exp(-KL(model || marginal))` after additive smoothing of both
/// distributions. Zero when the model merely reproduces the marginal.
pub fn certainty(model: &[f64], marginal: &[f64]) -> f64 {
    debug_assert_eq!(model.len(), marginal.len());
    let zp: f64 = model.iter().map(|p| p + SMOOTHING).sum();
    let zq: f64 = marginal.iter().map(|q| q + SMOOTHING).sum();
    let kl: f64 = model
        .iter()
        .zip(marginal)
        .map(|(p, q)| {
            let p = (p + SMOOTHING) / zp;
            let q = (q + SMOOTHING) / zq;
            p * (p / q).ln()
        })
        .sum();
    1.0 - (-kl.max(0.0)).exp()
}

/// Bounds on one aggregate result.
///
/// `lower` and `upper` blend each synthesized value with a bound
/// distribution weighted by its certainty; `theoretical_min` and
/// `theoretical_max` replace every uncertain value by its most extreme
/// alternative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
    pub theoretical_min: f64,
    pub theoretical_max: f64,
}

impl ConfidenceInterval {
    pub fn exact(v: f64, level: f64) -> Self {
        ConfidenceInterval { level, lower: v, upper: v, theoretical_min: v, theoretical_max: v }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }

    fn scaled(&self, by: f64) -> Self {
        ConfidenceInterval {
            level: self.level,
            lower: self.lower * by,
            upper: self.upper * by,
            theoretical_min: self.theoretical_min * by,
            theoretical_max: self.theoretical_max * by,
        }
    }
}

/// One row's contribution to a COUNT.
#[derive(Clone, Copy, Debug)]
pub struct CountRow {
    pub weight: f64,
    /// Product of the certainties of the columns deciding membership, so
    /// that values of different tables are treated as fully correlated.
    pub certainty: f64,
    /// Currently a member of the group.
    pub member: bool,
    /// Not a member, but every column excluding it is synthesized.
    pub possible: bool,
}

/// COUNT bounds. The query-favoring value of a row is the one that makes
/// it a member: the upper bound distribution puts mass `level` on
/// membership, the lower bound distribution puts mass `1 - level` on it.
/// Members contribute at most their weight, so the estimate always lies in
/// the interval.
pub fn count_interval(rows: impl IntoIterator<Item = CountRow>, level: f64) -> (f64, ConfidenceInterval) {
    let (mut est, mut lo, mut hi, mut tmin, mut tmax) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for r in rows {
        let c = r.certainty.clamp(0.0, 1.0);
        if r.member {
            est += r.weight;
            hi += r.weight;
            tmax += r.weight;
            if c >= 1.0 {
                lo += r.weight;
                tmin += r.weight;
            } else {
                lo += r.weight * (c + (1.0 - c) * (1.0 - level));
            }
        } else if r.possible && c < 1.0 {
            hi += r.weight * (1.0 - c) * level;
            tmax += r.weight;
        }
    }
    (est, ConfidenceInterval { level, lower: lo, upper: hi, theoretical_min: tmin, theoretical_max: tmax })
}

/// Fraction of the total weight that is a member, with bounds.
pub fn count_fraction_interval(rows: &[CountRow], level: f64) -> Option<(f64, ConfidenceInterval)> {
    let total: f64 = rows.iter().map(|r| r.weight).sum();
    if total <= 0.0 {
        return None;
    }
    let (est, ci) = count_interval(rows.iter().copied(), level);
    Some((est / total, ci.scaled(1.0 / total)))
}

/// Bound distributions for a continuous attribute: point masses at its
/// `1 - level` and `level` quantiles, plus its range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueBounds {
    pub low_quantile: f64,
    pub high_quantile: f64,
    pub min: f64,
    pub max: f64,
}

impl ValueBounds {
    pub fn from_values(values: &[f64], level: f64) -> Option<Self> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let q = |p: f64| v[((p * (v.len() - 1) as f64).round() as usize).min(v.len() - 1)];
        let (a, b) = (q(1.0 - level), q(level));
        Some(ValueBounds {
            low_quantile: a.min(b),
            high_quantile: a.max(b),
            min: v[0],
            max: v[v.len() - 1],
        })
    }
}

/// One member's contribution to an AVG: weight, value and the value's
/// certainty.
#[derive(Clone, Copy, Debug)]
pub struct AvgRow {
    pub weight: f64,
    pub value: f64,
    pub certainty: f64,
}

/// AVG bounds. A synthesized value `v` with certainty `C` is bounded by
/// `C v + (1 - C) min(v, q_low)` and `C v + (1 - C) max(v, q_high)`; the
/// theoretical bounds replace it by the attribute's minimum or maximum.
pub fn avg_interval(rows: &[AvgRow], bounds: &ValueBounds, level: f64) -> Option<(f64, ConfidenceInterval)> {
    let w: f64 = rows.iter().map(|r| r.weight).sum();
    if w <= 0.0 {
        return None;
    }
    let (mut est, mut lo, mut hi, mut tmin, mut tmax) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for r in rows {
        let c = r.certainty.clamp(0.0, 1.0);
        est += r.weight * r.value;
        if c >= 1.0 {
            lo += r.weight * r.value;
            hi += r.weight * r.value;
            tmin += r.weight * r.value;
            tmax += r.weight * r.value;
        } else {
            lo += r.weight * (c * r.value + (1.0 - c) * r.value.min(bounds.low_quantile));
            hi += r.weight * (c * r.value + (1.0 - c) * r.value.max(bounds.high_quantile));
            tmin += r.weight * r.value.min(bounds.min);
            tmax += r.weight * r.value.max(bounds.max);
        }
    }
    Some((
        est / w,
        ConfidenceInterval { level, lower: lo / w, upper: hi / w, theoretical_min: tmin / w, theoretical_max: tmax / w },
    ))
}

/// SUM bounds as the extreme products of COUNT and AVG bounds.
pub fn sum_interval(count: &ConfidenceInterval, avg: &ConfidenceInterval) -> ConfidenceInterval {
    let corners = |a: f64, b: f64, x: f64, y: f64| {
        let p = [a * x, a * y, b * x, b * y];
        (p.iter().cloned().fold(f64::INFINITY, f64::min), p.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
    };
    let (lower, upper) = corners(count.lower, count.upper, avg.lower, avg.upper);
    let (theoretical_min, theoretical_max) =
        corners(count.theoretical_min, count.theoretical_max, avg.theoretical_min, avg.theoretical_max);
    ConfidenceInterval { level: count.level, lower, upper, theoretical_min, theoretical_max }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_distributions_have_zero_certainty() {
        let p = [0.2, 0.3, 0.5];
        assert!(certainty(&p, &p).abs() < 1e-12);
    }

    #[test]
    fn point_mass_against_uniform() {
        let mut p = vec![0.0; 10];
        p[3] = 1.0;
        let q = vec![0.1; 10];
        // KL of a point mass against a uniform over 10 values is ln 10.
        let expected = 1.0 - (-(10f64).ln()).exp();
        assert!((certainty(&p, &q) - expected).abs() < 1e-6, "{}", certainty(&p, &q));
        assert!((expected - 0.9).abs() < 1e-12);
    }

    #[test]
    fn certain_rows_collapse_the_interval() {
        let rows = [CountRow { weight: 1.0, certainty: 1.0, member: true, possible: false }; 5];
        let (est, ci) = count_interval(rows, 0.95);
        assert_eq!(est, 5.0);
        assert_eq!((ci.lower, ci.upper, ci.theoretical_min, ci.theoretical_max), (5.0, 5.0, 5.0, 5.0));
        let avg = [AvgRow { weight: 2.0, value: 3.0, certainty: 1.0 }, AvgRow { weight: 1.0, value: 6.0, certainty: 1.0 }];
        let b = ValueBounds::from_values(&[0.0, 10.0], 0.95).unwrap();
        let (est, ci) = avg_interval(&avg, &b, 0.95).unwrap();
        assert_eq!((est, ci.lower, ci.upper), (4.0, 4.0, 4.0));
    }

    #[test]
    fn hand_computed_count_bounds() {
        let rows = [
            CountRow { weight: 1.0, certainty: 1.0, member: true, possible: false },
            CountRow { weight: 1.0, certainty: 0.5, member: true, possible: false },
            CountRow { weight: 2.0, certainty: 0.0, member: false, possible: true },
        ];
        let (est, ci) = count_interval(rows, 0.9);
        assert_eq!(est, 2.0);
        // 1 + (0.5 + 0.5 * 0.1) and 2 + 2 * 1.0 * 0.9.
        assert!((ci.lower - 1.55).abs() < 1e-12);
        assert!((ci.upper - 3.8).abs() < 1e-12);
        assert_eq!((ci.theoretical_min, ci.theoretical_max), (1.0, 4.0));
    }

    fn count_row() -> impl Strategy<Value = CountRow> {
        (0.1f64..3.0, 0.0f64..=1.0, any::<bool>(), any::<bool>())
            .prop_map(|(weight, certainty, member, possible)| CountRow { weight, certainty, member, possible })
    }

    proptest! {
        #[test]
        fn certainty_is_in_unit_interval(p in prop::collection::vec(0.0f64..1.0, 2..12), q in prop::collection::vec(0.0f64..1.0, 12)) {
            let c = certainty(&p, &q[..p.len()]);
            prop_assert!((0.0..1.0).contains(&c));
        }

        #[test]
        fn certainty_grows_with_divergence(a in 0.0f64..0.45, b in 0.0f64..0.45) {
            // Family (0.5 + x, 0.5 - x) against the uniform pair: KL grows with x.
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let u = [0.5, 0.5];
            prop_assert!(certainty(&[0.5 + lo, 0.5 - lo], &u) <= certainty(&[0.5 + hi, 0.5 - hi], &u) + 1e-12);
        }

        #[test]
        fn count_fraction_is_sandwiched(rows in prop::collection::vec(count_row(), 1..60), level in 0.5f64..0.999) {
            let (est, ci) = count_fraction_interval(&rows, level).unwrap();
            let eps = 1e-12;
            prop_assert!(ci.theoretical_min <= ci.lower + eps);
            prop_assert!(ci.lower <= est + eps);
            prop_assert!(est <= ci.upper + eps);
            prop_assert!(ci.upper <= ci.theoretical_max + eps);
            prop_assert!(ci.theoretical_min >= -eps && ci.theoretical_max <= 1.0 + eps);
        }

        #[test]
        fn avg_and_sum_contain_the_estimate(
            rows in prop::collection::vec((0.1f64..3.0, -50.0f64..50.0, 0.0f64..=1.0), 1..40),
            count in prop::collection::vec(count_row(), 1..40),
            level in 0.5f64..0.999,
        ) {
            let avg: Vec<AvgRow> = rows.iter().map(|&(weight, value, certainty)| AvgRow { weight, value, certainty }).collect();
            let vals: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let b = ValueBounds::from_values(&vals, level).unwrap();
            let (a_est, a_ci) = avg_interval(&avg, &b, level).unwrap();
            prop_assert!(a_ci.theoretical_min <= a_ci.lower + 1e-9 && a_ci.lower <= a_est + 1e-9);
            prop_assert!(a_est <= a_ci.upper + 1e-9 && a_ci.upper <= a_ci.theoretical_max + 1e-9);
            let (c_est, c_ci) = count_interval(count, level);
            let s = sum_interval(&c_ci, &a_ci);
            prop_assert!(s.lower <= c_est * a_est + 1e-9 && c_est * a_est <= s.upper + 1e-9);
            prop_assert!(s.theoretical_min <= s.lower + 1e-9 && s.upper <= s.theoretical_max + 1e-9);
        }
    }
}
