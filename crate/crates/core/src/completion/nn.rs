//! Nearest-neighbour replacement of synthesized rows by rows of a complete
//! table.
//!
//! Rows are embedded with one-hot categoricals and min-max scaled numerics.
//! The approximate index partitions the points around sampled centroids and
//! probes partitions in order of their distance lower bound; it stops once
//! no unprobed partition can hold a point closer than `best / (1 + ε)`, so
//! the returned neighbour is within a factor `1 + ε` of the true nearest.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::AttributeEncoder;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NnConfig {
    pub epsilon: f64,
    /// Queries per parallel batch.
    pub batch: usize,
    /// Upper bound on probed partitions; `None` probes until the bound holds.
    pub max_probes: Option<usize>,
    /// Brute-force search instead of the partition index.
    pub exact: bool,
}

impl Default for NnConfig {
    fn default() -> Self {
        NnConfig {
            epsilon: 0.1,
            batch: 1024,
            max_probes: None,
            exact: false,
        }
    }
}

/// Maps encoded attribute rows to feature vectors.
#[derive(Clone, Debug)]
pub struct Embedding {
    /// Per attribute: offset, and either the one-hot width or the numeric
    /// range.
    parts: Vec<(usize, Part)>,
    pub dim: usize,
}

#[derive(Clone, Debug)]
enum Part {
    OneHot(usize),
    Numeric { lo: f64, span: f64, enc: AttributeEncoder },
}

impl Embedding {
    pub fn new(encoders: &[AttributeEncoder]) -> Self {
        let mut parts = Vec::new();
        let mut dim = 0;
        for e in encoders {
            if e.is_categorical() {
                parts.push((dim, Part::OneHot(e.cardinality())));
                dim += e.cardinality();
            } else {
                let vals: Vec<f64> = (0..e.cardinality() as u32).filter_map(|i| e.numeric(i)).collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let (lo, span) = if lo.is_finite() && hi > lo { (lo, hi - lo) } else { (0.0, 1.0) };
                parts.push((dim, Part::Numeric { lo, span, enc: e.clone() }));
                dim += 1;
            }
        }
        Embedding { parts, dim }
    }

    pub fn embed(&self, encoded: &[u32]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for ((off, part), &x) in self.parts.iter().zip(encoded) {
            match part {
                Part::OneHot(w) => {
                    if (x as usize) < *w {
                        v[off + x as usize] = 1.0;
                    }
                }
                Part::Numeric { lo, span, enc } => {
                    // NULL embeds at the low end.
                    v[*off] = enc.numeric(x).map(|n| ((n - lo) / span).clamp(0.0, 1.0)).unwrap_or(0.0);
                }
            }
        }
        v
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Partition index over the rows of one complete table.
#[derive(Clone, Debug)]
pub struct NnIndex {
    points: Vec<Vec<f64>>,
    centroids: Vec<Vec<f64>>,
    members: Vec<Vec<usize>>,
    radius: Vec<f64>,
}

impl NnIndex {
    pub fn build(points: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Completion("nearest-neighbour index over an empty table".into()));
        }
        let n = points.len();
        let k = ((n as f64).sqrt().ceil() as usize).clamp(1, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut centroids: Vec<Vec<f64>> = sample(&mut rng, n, k).into_iter().map(|i| points[i].clone()).collect();
        let mut assign = vec![0usize; n];
        // Two Lloyd rounds are enough for a usable partition.
        for round in 0..3 {
            assign = points.par_iter().map(|p| nearest_of(&centroids, p).0).collect();
            if round == 2 {
                break;
            }
            let dim = points[0].len();
            let mut sums = vec![vec![0.0; dim]; k];
            let mut counts = vec![0usize; k];
            for (p, &c) in points.iter().zip(&assign) {
                counts[c] += 1;
                for (s, x) in sums[c].iter_mut().zip(p) {
                    *s += x;
                }
            }
            for c in 0..k {
                if counts[c] > 0 {
                    centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                }
            }
        }
        let mut members = vec![Vec::new(); k];
        let mut radius = vec![0.0f64; k];
        for (i, &c) in assign.iter().enumerate() {
            members[c].push(i);
            radius[c] = radius[c].max(dist2(&points[i], &centroids[c]).sqrt());
        }
        Ok(NnIndex {
            points,
            centroids,
            members,
            radius,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    /// Brute-force nearest point; ties go to the lowest index.
    pub fn exact(&self, q: &[f64]) -> (usize, f64) {
        let (i, d) = nearest_of(&self.points, q);
        (i, d.sqrt())
    }

    /// Approximate nearest point and its distance.
    pub fn search(&self, q: &[f64], epsilon: f64, max_probes: Option<usize>) -> (usize, f64) {
        let mut order: Vec<(f64, usize)> = self
            .centroids
            .iter()
            .enumerate()
            .map(|(c, ctr)| ((dist2(q, ctr).sqrt() - self.radius[c]).max(0.0), c))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut best = (usize::MAX, f64::INFINITY);
        for (probed, (lb, c)) in order.into_iter().enumerate() {
            if best.0 != usize::MAX && (max_probes.is_some_and(|m| probed >= m) || best.1 <= (1.0 + epsilon) * lb) {
                break;
            }
            for &i in &self.members[c] {
                let d = dist2(q, &self.points[i]).sqrt();
                if d < best.1 || (d == best.1 && i < best.0) {
                    best = (i, d);
                }
            }
        }
        best
    }

    /// Batched lookups, in parallel per batch.
    pub fn query_batch(&self, queries: &[Vec<f64>], cfg: &NnConfig) -> Vec<usize> {
        queries
            .par_chunks(cfg.batch.max(1))
            .flat_map_iter(|chunk| {
                chunk.iter().map(|q| {
                    if cfg.exact {
                        self.exact(q).0
                    } else {
                        self.search(q, cfg.epsilon, cfg.max_probes).0
                    }
                })
            })
            .collect()
    }
}

fn nearest_of(points: &[Vec<f64>], q: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d = dist2(q, p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Replaces every synthesized row (encoded attributes of the complete
/// table) by the index of an existing row.
pub fn nearest_neighbor_replace(
    existing: &[Vec<u32>],
    synthesized: &[Vec<u32>],
    encoders: &[AttributeEncoder],
    cfg: &NnConfig,
    seed: u64,
) -> Result<Vec<usize>> {
    let emb = Embedding::new(encoders);
    let index = NnIndex::build(existing.iter().map(|r| emb.embed(r)).collect(), seed)?;
    let queries: Vec<Vec<f64>> = synthesized.iter().map(|r| emb.embed(r)).collect();
    Ok(index.query_batch(&queries, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use crate::ingest::Value;

    fn cloud(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect()
    }

    #[test]
    fn approximate_agrees_with_brute_force() {
        let pts = cloud(1000, 4, 1);
        let idx = NnIndex::build(pts, 7).unwrap();
        let qs = cloud(1000, 4, 2);
        let mut same = 0;
        for q in &qs {
            // Brute force over raw distances, independent of the index.
            let truth = (0..idx.len())
                .min_by(|&a, &b| dist2(q, idx.point(a)).total_cmp(&dist2(q, idx.point(b))))
                .unwrap();
            let (got, d) = idx.search(q, 0.1, None);
            let d_true = dist2(q, idx.point(truth)).sqrt();
            assert!(d <= 1.1 * d_true + 1e-12);
            same += (got == truth) as usize;
        }
        assert!(same >= 950, "{same}");
    }

    #[test]
    fn identical_row_maps_to_itself() {
        let encs = vec![AttributeEncoder::categorical(vec!["a".into(), "b".into(), "c".into()])];
        let existing = vec![vec![0], vec![1], vec![2]];
        let got = nearest_neighbor_replace(&existing, &[vec![1], vec![2], vec![0]], &encs, &NnConfig::default(), 0).unwrap();
        assert_eq!(got, vec![1, 2, 0]);
    }

    #[test]
    fn nearby_rows_map_to_the_same_neighbour() {
        let enc = AttributeEncoder::binned(&(0..100).map(|i| i as f64).collect::<Vec<_>>(), 10).unwrap();
        let encs = vec![enc.clone()];
        let existing = vec![vec![enc.encode(&Value::Num(5.0))], vec![enc.encode(&Value::Num(55.0))], vec![enc.encode(&Value::Num(95.0))]];
        let synth = vec![vec![enc.encode(&Value::Num(50.0))], vec![enc.encode(&Value::Num(52.0))], vec![enc.encode(&Value::Num(61.0))]];
        let got = nearest_neighbor_replace(&existing, &synth, &encs, &NnConfig::default(), 0).unwrap();
        assert_eq!(got, vec![1, 1, 1]);
    }

    #[test]
    fn empty_table_is_an_error() {
        assert!(NnIndex::build(Vec::new(), 0).is_err());
    }

    proptest! {
        #[test]
        fn search_is_within_epsilon(seed in 0u64..500, n in 1usize..200, eps in 0.0f64..0.5) {
            let idx = NnIndex::build(cloud(n, 3, seed), seed).unwrap();
            for q in cloud(20, 3, seed + 1) {
                let (i, d) = idx.search(&q, eps, None);
                prop_assert!(i < n);
                let (_, d_true) = idx.exact(&q);
                prop_assert!(d <= (1.0 + eps) * d_true + 1e-12);
            }
        }
    }
}
