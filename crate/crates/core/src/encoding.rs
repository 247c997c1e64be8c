//! Maps attribute values to the discrete index space used by the models.
//!
//! Categorical columns use a dictionary followed by two reserved indices,
//! NULL and UNSEEN. Continuous columns use equi-depth bins followed by a NULL
//! index and decode to the mean of the training values in the bin. Tuple
//! factors use a capped count encoder.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::{ColumnData, Dataset, Table, Value};
use crate::schema::{AnnotatedSchema, ColumnType, WalkTemplate};

pub const DEFAULT_BINS: usize = 64;
pub const MAX_CHILDREN: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttributeEncoder {
    Categorical {
        values: Vec<String>,
        #[serde(skip)]
        lookup: HashMap<String, u32>,
    },
    Binned {
        /// Bin `i` covers `[edges[i], edges[i + 1])`; the last bin is closed.
        edges: Vec<f64>,
        representatives: Vec<f64>,
    },
    Count {
        cap: u32,
    },
}

impl AttributeEncoder {
    pub fn categorical(mut values: Vec<String>) -> Self {
        values.sort();
        values.dedup();
        let lookup = values
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), i as u32))
            .collect();
        AttributeEncoder::Categorical { values, lookup }
    }

    pub fn count(cap: u32) -> Self {
        AttributeEncoder::Count { cap }
    }

    /// Equi-depth bins over the non-null values.
    pub fn binned(values: &[f64], bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::Encoding(format!("need at least 2 bins, got {bins}")));
        }
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return Err(Error::Encoding("no finite values to bin".into()));
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let (lo, hi) = (v[0], v[n - 1]);
        let mut edges = vec![lo];
        for k in 1..bins {
            let cut = v[k * n / bins];
            if cut > *edges.last().unwrap() && cut < hi {
                edges.push(cut);
            }
        }
        edges.push(if hi > lo { hi } else { lo + 1.0 });
        let nb = edges.len() - 1;
        let mut sums = vec![0.0; nb];
        let mut counts = vec![0usize; nb];
        for &x in &v {
            let b = bin_of(&edges, x);
            sums[b] += x;
            counts[b] += 1;
        }
        let representatives = sums
            .iter()
            .zip(&counts)
            .enumerate()
            .map(|(i, (s, &c))| {
                if c > 0 {
                    s / c as f64
                } else {
                    0.5 * (edges[i] + edges[i + 1])
                }
            })
            .collect();
        Ok(AttributeEncoder::Binned {
            edges,
            representatives,
        })
    }

    /// Rebuilds lookup tables after deserialization.
    pub fn finish(&mut self) {
        if let AttributeEncoder::Categorical { values, lookup } = self {
            *lookup = values
                .iter()
                .enumerate()
                .map(|(i, v)| (v.clone(), i as u32))
                .collect();
        }
    }

    /// Number of indices, including reserved ones.
    pub fn cardinality(&self) -> usize {
        match self {
            AttributeEncoder::Categorical { values, .. } => values.len() + 2,
            AttributeEncoder::Binned { edges, .. } => edges.len(),
            AttributeEncoder::Count { cap } => *cap as usize + 1,
        }
    }

    pub fn null_index(&self) -> Option<u32> {
        match self {
            AttributeEncoder::Categorical { values, .. } => Some(values.len() as u32),
            AttributeEncoder::Binned { edges, .. } => Some(edges.len() as u32 - 1),
            AttributeEncoder::Count { .. } => None,
        }
    }

    pub fn unseen_index(&self) -> Option<u32> {
        match self {
            AttributeEncoder::Categorical { values, .. } => Some(values.len() as u32 + 1),
            _ => None,
        }
    }

    /// Indices that must receive zero probability when sampling.
    pub fn forbidden(&self) -> Vec<u32> {
        self.unseen_index().into_iter().collect()
    }

    pub fn encode(&self, v: &Value) -> u32 {
        match self {
            AttributeEncoder::Categorical { values, lookup } => {
                let key = match v {
                    Value::Null => return values.len() as u32,
                    Value::Str(s) => s.clone(),
                    Value::Num(x) => x.to_string(),
                };
                match lookup.get(&key) {
                    Some(&i) => i,
                    None => values.len() as u32 + 1,
                }
            }
            AttributeEncoder::Binned { edges, .. } => match v.as_f64() {
                Some(x) if x.is_finite() => bin_of(edges, x) as u32,
                _ => edges.len() as u32 - 1,
            },
            AttributeEncoder::Count { cap } => {
                let x = v.as_f64().unwrap_or(0.0).max(0.0);
                (x.round() as u32).min(*cap)
            }
        }
    }

    pub fn encode_count(&self, tf: u32) -> u32 {
        match self {
            AttributeEncoder::Count { cap } => tf.min(*cap),
            _ => self.encode(&Value::Num(tf as f64)),
        }
    }

    pub fn decode(&self, idx: u32) -> Value {
        match self {
            AttributeEncoder::Categorical { values, .. } => values
                .get(idx as usize)
                .map(|s| Value::Str(s.clone()))
                .unwrap_or(Value::Null),
            AttributeEncoder::Binned {
                representatives, ..
            } => representatives
                .get(idx as usize)
                .map(|x| Value::Num(*x))
                .unwrap_or(Value::Null),
            AttributeEncoder::Count { .. } => Value::Num(idx as f64),
        }
    }

    /// Numeric value of an index for continuous and count encoders.
    pub fn numeric(&self, idx: u32) -> Option<f64> {
        match self {
            AttributeEncoder::Categorical { .. } => None,
            _ => self.decode(idx).as_f64(),
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, AttributeEncoder::Categorical { .. })
    }
}

fn bin_of(edges: &[f64], x: f64) -> usize {
    let nb = edges.len() - 1;
    // Number of inner edges that are <= x.
    let inner = &edges[1..nb];
    inner.partition_point(|e| *e <= x)
}

/// Encoders for every non-key column, keyed `table.column`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EncoderSet {
    pub encoders: BTreeMap<String, AttributeEncoder>,
}

impl EncoderSet {
    pub fn get(&self, table: &str, column: &str) -> Result<&AttributeEncoder> {
        self.encoders
            .get(&format!("{table}.{column}"))
            .ok_or_else(|| Error::Encoding(format!("no encoder for {table}.{column}")))
    }

    pub fn finish(&mut self) {
        for e in self.encoders.values_mut() {
            e.finish();
        }
    }

    /// Content digest of the encoder state.
    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(self).expect("encoders serialize");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Encodes the attribute columns of one table row, in schema order.
    pub fn encode_table_row(&self, schema: &AnnotatedSchema, table: &Table, row: usize) -> Result<Vec<u32>> {
        let def = schema.table_or_err(&table.name)?;
        def.attributes()
            .map(|c| Ok(self.get(&def.name, &c.name)?.encode(&table.value(&c.name, row))))
            .collect()
    }
}

pub fn fit_encoders(dataset: &Dataset, schema: &AnnotatedSchema, bins: usize) -> Result<EncoderSet> {
    if bins < 2 {
        return Err(Error::Encoding(format!("need at least 2 bins, got {bins}")));
    }
    let mut encoders = BTreeMap::new();
    for def in &schema.tables {
        let t = dataset.table(&def.name)?;
        for c in def.attributes() {
            let col = t.column_or_err(&c.name)?;
            let enc = match (c.ty, col) {
                (ColumnType::Categorical, ColumnData::Categorical(v)) => {
                    let values: Vec<String> = v.iter().flatten().cloned().collect();
                    if values.is_empty() {
                        return Err(Error::Encoding(format!(
                            "column {}.{} has no non-null values",
                            def.name, c.name
                        )));
                    }
                    AttributeEncoder::categorical(values)
                }
                (ColumnType::Continuous, ColumnData::Continuous(v)) => {
                    let values: Vec<f64> = v.iter().flatten().copied().collect();
                    AttributeEncoder::binned(&values, bins).map_err(|_| {
                        Error::Encoding(format!(
                            "column {}.{} has no non-null values",
                            def.name, c.name
                        ))
                    })?
                }
                _ => {
                    return Err(Error::Encoding(format!(
                        "column {}.{} does not match its declared type",
                        def.name, c.name
                    )))
                }
            };
            encoders.insert(format!("{}.{}", def.name, c.name), enc);
        }
    }
    Ok(EncoderSet { encoders })
}

/// Indices in a model's variable order plus the observed mask.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncodedRow {
    pub values: Vec<u32>,
    pub observed: Vec<bool>,
}

impl EncodedRow {
    /// Row whose first `n_observed` positions are observed.
    pub fn prefix(values: Vec<u32>, n_observed: usize) -> Self {
        let observed = (0..values.len()).map(|i| i < n_observed).collect();
        EncodedRow { values, observed }
    }

    pub fn full(values: Vec<u32>) -> Self {
        let n = values.len();
        Self::prefix(values, n)
    }

    /// Length of the observed prefix, or `None` when observed positions do
    /// not form a prefix.
    pub fn observed_prefix(&self) -> Option<usize> {
        let k = self.observed.iter().take_while(|o| **o).count();
        self.observed[k..].iter().all(|o| !o).then_some(k)
    }
}

/// Encoded evidence tree. `groups[i]` holds the children along the template's
/// `i`-th edge.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EncodedTree {
    pub row: Vec<u32>,
    /// Dataset row index, when the node is an existing row.
    pub id: Option<usize>,
    pub groups: Vec<Vec<EncodedTree>>,
}

impl EncodedTree {
    /// Tree with no children, shaped for `walk`.
    pub fn leaf(walk: &WalkTemplate, row: Vec<u32>) -> Self {
        EncodedTree {
            row,
            id: None,
            groups: vec![Vec::new(); walk.children.len()],
        }
    }

    pub fn conforms(&self, walk: &WalkTemplate) -> bool {
        self.groups.len() == walk.children.len()
            && self
                .groups
                .iter()
                .zip(&walk.children)
                .all(|(g, e)| g.iter().all(|c| c.conforms(&e.node)))
    }

    pub fn ids_in(&self, out: &mut Vec<usize>) {
        for g in &self.groups {
            for c in g {
                if let Some(i) = c.id {
                    out.push(i);
                }
                c.ids_in(out);
            }
        }
    }
}

/// Child-row lookup per relationship: parent key → child rows.
#[derive(Clone, Debug, Default)]
pub struct ChildIndex {
    map: HashMap<String, HashMap<String, Vec<usize>>>,
}

impl ChildIndex {
    pub fn build(dataset: &Dataset, schema: &AnnotatedSchema) -> Result<Self> {
        let mut map = HashMap::new();
        for fk in &schema.relationships {
            let child = dataset.table(&fk.child_table)?;
            map.insert(fk.id(), child.group_by_key(&fk.child_column));
        }
        Ok(ChildIndex { map })
    }

    pub fn children(&self, fk_id: &str, parent_key: &str) -> &[usize] {
        self.map
            .get(fk_id)
            .and_then(|m| m.get(parent_key))
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }
}

/// Encodes the evidence tree of `walk` rooted at an existing row.
///
/// Groups larger than `max_children` are subsampled with a generator seeded
/// from `seed` and the parent row, so the result is deterministic.
#[allow(clippy::too_many_arguments)]
pub fn encode_evidence_tree(
    dataset: &Dataset,
    schema: &AnnotatedSchema,
    encoders: &EncoderSet,
    index: &ChildIndex,
    walk: &WalkTemplate,
    root_row: usize,
    max_children: usize,
    seed: u64,
) -> Result<EncodedTree> {
    let table = dataset.table(&walk.table)?;
    let row = encoders.encode_table_row(schema, table, root_row)?;
    let key = table.pk(root_row);
    let mut groups = Vec::with_capacity(walk.children.len());
    for edge in &walk.children {
        let mut kids: Vec<usize> = index.children(&edge.fk, key).to_vec();
        if kids.len() > max_children {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, &edge.fk, root_row));
            let mut picked: Vec<usize> = sample(&mut rng, kids.len(), max_children)
                .into_iter()
                .map(|i| kids[i])
                .collect();
            picked.sort_unstable();
            kids = picked;
        }
        let mut g = Vec::with_capacity(kids.len());
        for c in kids {
            let mut child = encode_evidence_tree(
                dataset,
                schema,
                encoders,
                index,
                &edge.node,
                c,
                max_children,
                seed,
            )?;
            child.id = Some(c);
            g.push(child);
        }
        groups.push(g);
    }
    Ok(EncodedTree {
        row,
        id: Some(root_row),
        groups,
    })
}

pub(crate) fn mix(seed: u64, tag: &str, n: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    h.update((n as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::tests::{cats, keys};
    use crate::schema::{acyclic_walk, tests::schema_from_edges};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    #[test]
    fn dictionary_size() {
        let e = AttributeEncoder::categorical(vec!["a".into(), "b".into(), "b".into(), "c".into()]);
        assert_eq!(e.cardinality(), 5);
        assert_eq!(e.encode(&Value::Null), 3);
        assert_eq!(e.encode(&Value::Str("zz".into())), 4);
        for s in ["a", "b", "c"] {
            assert_eq!(e.decode(e.encode(&Value::Str(s.into()))), Value::Str(s.into()));
        }
        assert_eq!(e.forbidden(), vec![4]);
    }

    #[test]
    fn bin_decodes_to_training_mean() {
        // Training values 0..20 in steps of 0.5 with 2 bins: the cut is the
        // median value, 10.
        let values: Vec<f64> = (0..40).map(|i| i as f64 * 0.5).collect();
        let e = AttributeEncoder::binned(&values, 2).unwrap();
        let AttributeEncoder::Binned { edges, .. } = &e else { unreachable!() };
        assert_eq!(edges, &vec![0.0, 10.0, 19.5]);
        let b = e.encode(&Value::Num(10.7));
        assert_eq!(b, 1);
        let oracle: Vec<f64> = values.iter().copied().filter(|v| *v >= 10.0).collect();
        let mean = oracle.iter().sum::<f64>() / oracle.len() as f64;
        assert_eq!(e.decode(b), Value::Num(mean));
        assert_eq!(e.encode(&Value::Null), 2);
    }

    #[test]
    fn uniform_column_quartiles() {
        let values: Vec<f64> = (0..1000).map(|i| (i * 7919 % 1000) as f64 / 10.0).collect();
        let e = AttributeEncoder::binned(&values, 4).unwrap();
        let mut counts = [0usize; 4];
        for v in &values {
            counts[e.encode(&Value::Num(*v)) as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1000.0 - 0.25).abs() <= 0.01, "{counts:?}");
        }
    }

    #[test]
    fn constant_column_gets_one_bin() {
        let e = AttributeEncoder::binned(&[3.0, 3.0, 3.0], 8).unwrap();
        assert_eq!(e.cardinality(), 2);
        assert_eq!(e.decode(e.encode(&Value::Num(3.0))), Value::Num(3.0));
    }

    #[test]
    fn fit_rejects_all_null_and_uses_default_bins() {
        let s = crate::schema::tests::housing();
        let mut d = crate::ingest::tests::housing_data();
        let e = fit_encoders(&d, &s, DEFAULT_BINS).unwrap();
        assert!(matches!(
            e.get("apartment", "price").unwrap(),
            AttributeEncoder::Binned { .. }
        ));
        let t = d.tables.get("landlord").unwrap();
        let cols = vec![
            ("id".to_string(), keys(&["l1", "l2"])),
            ("since".to_string(), ColumnData::Continuous(vec![None, None])),
        ];
        let replaced = Table::new(t.name.clone(), "id", cols).unwrap();
        d.tables.insert("landlord".into(), replaced);
        assert!(fit_encoders(&d, &s, DEFAULT_BINS).is_err());
    }

    fn school_dataset() -> (Dataset, AnnotatedSchema) {
        // t0 neighborhood, t1 school -> t0, t2 apartment -> t0
        let s = schema_from_edges(3, &[(1, 0), (2, 0)], &[2]);
        let n = Table::new("t0", "id", vec![("id".into(), keys(&["n1", "n2"])), ("a".into(), cats(&["x", "y"]))]).unwrap();
        let sc = Table::new(
            "t1",
            "id",
            vec![
                ("id".into(), keys(&["s1", "s2"])),
                ("a".into(), cats(&["p", "q"])),
                ("t0_id".into(), keys(&["n1", "n1"])),
            ],
        )
        .unwrap();
        let ap = Table::new(
            "t2",
            "id",
            vec![
                ("id".into(), keys(&["a1"])),
                ("a".into(), cats(&["r"])),
                ("t0_id".into(), keys(&["n1"])),
            ],
        )
        .unwrap();
        (Dataset::new(vec![n, sc, ap]), s)
    }

    #[test]
    fn evidence_tree_children() {
        let (d, s) = school_dataset();
        let enc = fit_encoders(&d, &s, 4).unwrap();
        let idx = ChildIndex::build(&d, &s).unwrap();
        let walk = acyclic_walk(&s, "t0", &BTreeSet::new());
        let t = encode_evidence_tree(&d, &s, &enc, &idx, &walk, 0, MAX_CHILDREN, 1).unwrap();
        assert_eq!(t.groups[0].len(), 2);
        // self-evidence: the one available apartment
        assert_eq!(t.groups[1].len(), 1);
        assert!(t.conforms(&walk));
        let leaf = encode_evidence_tree(&d, &s, &enc, &idx, &walk, 1, MAX_CHILDREN, 1).unwrap();
        assert!(leaf.groups.iter().all(|g| g.is_empty()));
    }

    #[test]
    fn large_groups_are_capped() {
        let s = schema_from_edges(2, &[(1, 0)], &[]);
        let n = Table::new("t0", "id", vec![("id".into(), keys(&["p"])), ("a".into(), cats(&["x"]))]).unwrap();
        let ids: Vec<String> = (0..50).map(|i| format!("c{i}")).collect();
        let idr: Vec<&str> = ids.iter().map(|s| s.as_str()).collect();
        let c = Table::new(
            "t1",
            "id",
            vec![
                ("id".into(), keys(&idr)),
                ("a".into(), cats(&vec!["z"; 50])),
                ("t0_id".into(), keys(&vec!["p"; 50])),
            ],
        )
        .unwrap();
        let d = Dataset::new(vec![n, c]);
        let enc = fit_encoders(&d, &s, 4).unwrap();
        let idx = ChildIndex::build(&d, &s).unwrap();
        let walk = acyclic_walk(&s, "t0", &BTreeSet::new());
        let a = encode_evidence_tree(&d, &s, &enc, &idx, &walk, 0, 20, 9).unwrap();
        let b = encode_evidence_tree(&d, &s, &enc, &idx, &walk, 0, 20, 9).unwrap();
        assert_eq!(a.groups[0].len(), 20);
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn equi_depth_occupancy(values in proptest::collection::vec(0u32..500, 1..400), bins in 2usize..20) {
            let xs: Vec<f64> = values.iter().map(|v| *v as f64).collect();
            let e = AttributeEncoder::binned(&xs, bins).unwrap();
            let AttributeEncoder::Binned { edges, .. } = &e else { unreachable!() };
            prop_assert!(edges.windows(2).all(|w| w[0] < w[1]));
            let mut sorted = xs.clone();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len();
            let mut counts = vec![0usize; edges.len() - 1];
            for x in &xs {
                counts[e.encode(&Value::Num(*x)) as usize] += 1;
            }
            let mut max_dup = 0;
            let mut i = 0;
            while i < n {
                let j = sorted[i..].iter().take_while(|v| **v == sorted[i]).count();
                max_dup = max_dup.max(j);
                i += j;
            }
            let bound = n.div_ceil(bins) + max_dup;
            prop_assert!(counts.iter().all(|c| *c <= bound), "{:?} > {}", counts, bound);
            // decode stays in the encoded bin for in-range values
            for x in &xs {
                let b = e.encode(&Value::Num(*x));
                prop_assert_eq!(e.encode(&e.decode(b)), b);
            }
        }
    }
}
