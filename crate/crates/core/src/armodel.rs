//! Masked autoregressive completion models over a sequence of joined tables.
//!
//! A model covers tables `X_1..X_k`, consecutive tables sharing a foreign
//! key. Its variables are the attributes of each table in order; a hop from
//! `X_j` to a child table `X_{j+1}` inserts a tuple-factor variable between
//! the two tables. Training examples are level-structured: every tuple of the
//! available join `X_1 ⋈ .. ⋈ X_j` trains the heads of `X_j`'s attributes and,
//! when known, the tuple factor into `X_{j+1}`.

use std::ops::Range;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoding::{AttributeEncoder, ChildIndex, EncodedRow, EncoderSet};
use crate::error::{Error, Result};
use crate::ingest::{load_artifact, persist_artifact, Dataset};
use crate::nn::fit::{fit, FitConfig, FitReport};
use crate::nn::made::{softmax_in_place, Made, MadeParams};
use crate::query::certainty;
use crate::schema::{AnnotatedSchema, HopKind};

/// TF supports are capped at this quantile of the observed tuple factors.
pub const TF_CAP_QUANTILE: f64 = 0.995;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variable {
    Attribute { table: String, column: String },
    TupleFactor { fk: String, parent: String, child: String },
}

impl Variable {
    pub fn name(&self) -> String {
        match self {
            Variable::Attribute { table, column } => format!("{table}.{column}"),
            Variable::TupleFactor { fk, .. } => format!("tf({fk})"),
        }
    }
}

/// Variable order of a model over a table sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableLayout {
    pub tables: Vec<String>,
    pub variables: Vec<Variable>,
    /// Attribute variables of `tables[j]`.
    pub attr_ranges: Vec<Range<usize>>,
    /// Tuple-factor variable preceding `tables[j]`, for fan-out hops.
    pub tf_vars: Vec<Option<usize>>,
    /// Relationship id of the hop into `tables[j]` (`None` for the first).
    pub hops: Vec<Option<String>>,
}

impl VariableLayout {
    pub fn for_sequence(schema: &AnnotatedSchema, tables: &[String]) -> Result<Self> {
        if tables.is_empty() {
            return Err(Error::Model("empty table sequence".into()));
        }
        let mut variables = Vec::new();
        let mut attr_ranges = Vec::new();
        let mut tf_vars = Vec::new();
        let mut hops = Vec::new();
        for (j, t) in tables.iter().enumerate() {
            let def = schema.table_or_err(t)?;
            if j == 0 {
                tf_vars.push(None);
                hops.push(None);
            } else {
                let prev = &tables[j - 1];
                let fk = schema.fk_between(prev, t).ok_or_else(|| {
                    Error::Model(format!("{prev} and {t} are not joined by a foreign key"))
                })?;
                hops.push(Some(fk.id()));
                if schema.hop_kind(prev, t) == Some(HopKind::FanOut) {
                    tf_vars.push(Some(variables.len()));
                    variables.push(Variable::TupleFactor {
                        fk: fk.id(),
                        parent: prev.clone(),
                        child: t.clone(),
                    });
                } else {
                    tf_vars.push(None);
                }
            }
            let start = variables.len();
            for c in def.attributes() {
                variables.push(Variable::Attribute {
                    table: t.clone(),
                    column: c.name.clone(),
                });
            }
            attr_ranges.push(start..variables.len());
        }
        Ok(VariableLayout {
            tables: tables.to_vec(),
            variables,
            attr_ranges,
            tf_vars,
            hops,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn position(&self, table: &str) -> Option<usize> {
        self.tables.iter().position(|t| t == table)
    }

    /// Number of variables that precede the attributes of `tables[j]`,
    /// including its tuple factor.
    pub fn prefix_len(&self, j: usize) -> usize {
        self.tf_vars[j].unwrap_or(self.attr_ranges[j].start)
    }
}

/// One level-structured training example.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelExample {
    /// Encoded values; `cards[i]` marks an absent input.
    pub values: Vec<u32>,
    pub loss: Vec<bool>,
    /// Dataset rows of `tables[0..=level]`.
    pub rows: Vec<usize>,
    pub level: usize,
}

/// Per-variable encoders for a layout. Tuple factors get a count encoder
/// capped at the high quantile of the known factors.
pub fn layout_encoders(
    dataset: &Dataset,
    layout: &VariableLayout,
    encoders: &EncoderSet,
) -> Result<Vec<AttributeEncoder>> {
    layout
        .variables
        .iter()
        .map(|v| match v {
            Variable::Attribute { table, column } => Ok(encoders.get(table, column)?.clone()),
            Variable::TupleFactor { fk, .. } => {
                let mut known: Vec<u32> = dataset
                    .tuple_factors
                    .get(fk)
                    .map(|v| v.iter().flatten().copied().collect())
                    .unwrap_or_default();
                known.sort_unstable();
                let cap = if known.is_empty() {
                    1
                } else {
                    let k = ((known.len() as f64 * TF_CAP_QUANTILE).ceil() as usize).clamp(1, known.len());
                    known[k - 1].max(1)
                };
                Ok(AttributeEncoder::count(cap))
            }
        })
        .collect()
}

/// Walks the available join along the layout and emits one example per
/// prefix tuple.
pub fn build_level_examples(
    dataset: &Dataset,
    schema: &AnnotatedSchema,
    layout: &VariableLayout,
    encoders: &[AttributeEncoder],
    index: &ChildIndex,
) -> Result<Vec<LevelExample>> {
    let cards: Vec<u32> = encoders.iter().map(|e| e.cardinality() as u32).collect();
    let tables: Vec<_> = layout
        .tables
        .iter()
        .map(|t| dataset.table(t))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    let mut stack: Vec<(Vec<u32>, Vec<usize>)> = (0..tables[0].n_rows())
        .rev()
        .map(|r| (cards.clone(), vec![r]))
        .collect();
    while let Some((mut values, rows)) = stack.pop() {
        let j = rows.len() - 1;
        let r = rows[j];
        let table = tables[j];
        let mut loss = vec![false; cards.len()];
        for var in layout.attr_ranges[j].clone() {
            let Variable::Attribute { column, .. } = &layout.variables[var] else {
                unreachable!("attribute range holds attributes only")
            };
            values[var] = encoders[var].encode(&table.value(column, r));
            loss[var] = true;
        }
        if j + 1 < layout.tables.len() {
            if let Some(tf) = layout.tf_vars[j + 1] {
                let fk = layout.hops[j + 1].as_deref().unwrap();
                if let Some(n) = dataset.tuple_factor(fk, r) {
                    values[tf] = encoders[tf].encode_count(n);
                    loss[tf] = true;
                }
            }
        }
        out.push(LevelExample {
            values: values.clone(),
            loss,
            rows: rows.clone(),
            level: j,
        });
        if j + 1 == layout.tables.len() {
            continue;
        }
        let fk = schema.fk(layout.hops[j + 1].as_deref().unwrap()).unwrap();
        let next: Vec<usize> = if fk.parent_table == layout.tables[j] {
            index.children(&fk.id(), table.pk(r)).to_vec()
        } else {
            match table.column_or_err(&fk.child_column)?.key(r) {
                Some(k) => tables[j + 1].row_of_key(k).into_iter().collect(),
                None => Vec::new(),
            }
        };
        for n in next.into_iter().rev() {
            let mut rs = rows.clone();
            rs.push(n);
            stack.push((values.clone(), rs));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub emb_dim: usize,
    pub hidden: usize,
    pub bins: usize,
    /// Context width for schema-structured models.
    pub ctx_dim: usize,
    /// Width of per-child embeddings in the tree encoder.
    pub phi_dim: usize,
    pub max_examples: usize,
    pub heldout_fraction: f64,
    pub fit: FitConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            emb_dim: 16,
            hidden: 128,
            bins: crate::encoding::DEFAULT_BINS,
            ctx_dim: 16,
            phi_dim: 16,
            max_examples: 200_000,
            heldout_fraction: 0.2,
            fit: FitConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn seed(&self) -> u64 {
        self.fit.seed
    }
}

/// Probability vector over one variable's encoder indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalDistribution {
    pub variable: usize,
    pub probs: Vec<f64>,
}

/// Distribution over tuple factors `0..=cap` and its mean.
#[derive(Clone, Debug, PartialEq)]
pub struct TfPrediction {
    pub probs: Vec<f64>,
    pub expected: f64,
}

/// Held-out statistics shared by both model kinds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    /// Mean held-out negative log-likelihood per variable.
    pub heldout: Vec<Option<f64>>,
    /// Held-out cross-entropy of the smoothed training marginal.
    pub baseline: Vec<Option<f64>>,
    /// Empirical training marginal per variable.
    pub marginals: Vec<Vec<f64>>,
    pub fit: FitReport,
}

impl LossSummary {
    /// Summed held-out loss and baseline over `vars`; `None` when any
    /// variable has no held-out examples.
    pub fn totals(&self, vars: impl IntoIterator<Item = usize>) -> Option<(f64, f64)> {
        let (mut l, mut b) = (0.0, 0.0);
        for v in vars {
            l += self.heldout[v]?;
            b += self.baseline[v]?;
        }
        Some((l, b))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedArModel {
    pub layout: VariableLayout,
    pub encoders: Vec<AttributeEncoder>,
    pub net: Made,
    pub losses: LossSummary,
}

/// Seeded 80/20 style split of `n` examples into (train, held-out) indices.
pub(crate) fn split_indices(n: usize, heldout_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5b117));
    let n_held = if n < 5 {
        0
    } else {
        ((n as f64) * heldout_fraction).round() as usize
    };
    let held = idx.split_off(n - n_held);
    (idx, held)
}

pub(crate) fn subsample<T: Clone>(items: Vec<T>, max: usize, seed: u64) -> Vec<T> {
    if items.len() <= max {
        return items;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ab5);
    let mut picked = rand::seq::index::sample(&mut rng, items.len(), max).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| items[i].clone()).collect()
}

/// Training marginals and held-out baseline cross-entropies.
pub(crate) fn marginal_stats(
    cards: &[usize],
    forbidden: &[Vec<u32>],
    values: &[&[u32]],
    loss: &[&[bool]],
    train: &[usize],
    held: &[usize],
) -> (Vec<Vec<f64>>, Vec<Option<f64>>) {
    let n = cards.len();
    let mut marginals = Vec::with_capacity(n);
    let mut baseline = Vec::with_capacity(n);
    for v in 0..n {
        let mut counts = vec![0.0; cards[v]];
        for &i in train {
            if loss[i][v] {
                counts[values[i][v] as usize] += 1.0;
            }
        }
        let total: f64 = counts.iter().sum();
        let marg: Vec<f64> = if total > 0.0 {
            counts.iter().map(|c| c / total).collect()
        } else {
            vec![1.0 / cards[v] as f64; cards[v]]
        };
        // Laplace smoothing over the sampleable support.
        let support = cards[v] - forbidden[v].len();
        let smoothed: Vec<f64> = counts
            .iter()
            .map(|c| (c + 1.0) / (total + support as f64))
            .collect();
        let mut ce = 0.0;
        let mut m = 0usize;
        for &i in held {
            if loss[i][v] {
                ce -= smoothed[values[i][v] as usize].ln();
                m += 1;
            }
        }
        baseline.push((m > 0).then(|| ce / m as f64));
        marginals.push(marg);
    }
    (marginals, baseline)
}

/// Forward pass over `rows` in chunks; returns summed loss per variable and
/// the number of contributing examples.
pub(crate) fn per_var_loss(
    net: &Made,
    rows: &[&[u32]],
    loss: &[&[bool]],
    ctx: Option<ArrayView2<f64>>,
) -> (Vec<f64>, Vec<usize>) {
    let n = net.n_vars();
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    let chunk = 1024;
    for start in (0..rows.len()).step_by(chunk) {
        let end = (start + chunk).min(rows.len());
        let c = ctx.map(|c| c.slice_move(ndarray::s![start..end, ..]));
        let cache = net.forward(&rows[start..end], c);
        let logits = net.logits(&cache);
        let nll = net.nll_per_var(&rows[start..end], &logits);
        for b in 0..end - start {
            for v in 0..n {
                if loss[start + b][v] && nll[[b, v]].is_finite() {
                    sums[v] += nll[[b, v]];
                    counts[v] += 1;
                }
            }
        }
    }
    (sums, counts)
}

fn flatten(params: &MadeParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(params.slices().iter().map(|s| s.len()).sum());
    for s in params.slices() {
        out.extend_from_slice(s);
    }
    out
}

/// Fits a masked network on level examples without context.
pub fn train(
    layout: VariableLayout,
    encoders: Vec<AttributeEncoder>,
    examples: &[LevelExample],
    config: &TrainConfig,
) -> Result<MaskedArModel> {
    if examples.is_empty() {
        return Err(Error::Model(format!(
            "no training rows for model over {}",
            layout.tables.join(",")
        )));
    }
    let cards: Vec<usize> = encoders.iter().map(|e| e.cardinality()).collect();
    let forbidden: Vec<Vec<u32>> = encoders.iter().map(|e| e.forbidden()).collect();
    let seed = config.seed();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Made::new(
        cards.clone(),
        forbidden.clone(),
        config.emb_dim,
        config.hidden,
        0,
        &mut rng,
    );
    let values: Vec<&[u32]> = examples.iter().map(|e| e.values.as_slice()).collect();
    let loss: Vec<&[bool]> = examples.iter().map(|e| e.loss.as_slice()).collect();
    let (train_idx, held_idx) = split_indices(examples.len(), config.heldout_fraction, seed);
    let (marginals, baseline) = marginal_stats(&cards, &forbidden, &values, &loss, &train_idx, &held_idx);
    let eval_idx = if held_idx.is_empty() { &train_idx } else { &held_idx };
    let eval_rows: Vec<&[u32]> = eval_idx.iter().map(|&i| values[i]).collect();
    let eval_loss: Vec<&[bool]> = eval_idx.iter().map(|&i| loss[i]).collect();
    let ones = vec![1.0; config.fit.batch_size.max(1)];
    let report = fit(
        &mut net,
        train_idx.len(),
        &config.fit,
        |net, batch| {
            let rows: Vec<&[u32]> = batch.iter().map(|&k| values[train_idx[k]]).collect();
            let lm: Vec<&[bool]> = batch.iter().map(|&k| loss[train_idx[k]]).collect();
            let cache = net.forward(&rows, None);
            let logits = net.logits(&cache);
            let (l, dl) = net.nll_and_dlogits(&rows, &lm, &ones[..rows.len()], &logits);
            let mut grads = net.params.zeros_like();
            net.backward(&rows, None, &cache, &dl, &mut grads);
            (l, rows.len() as f64, flatten(&grads))
        },
        |net| net.params.slices_mut(),
        |net| {
            let (s, _) = per_var_loss(net, &eval_rows, &eval_loss, None);
            s.iter().sum::<f64>() / eval_rows.len() as f64
        },
    )?;
    let heldout = if held_idx.is_empty() {
        vec![None; cards.len()]
    } else {
        let (s, c) = per_var_loss(&net, &eval_rows, &eval_loss, None);
        s.iter()
            .zip(&c)
            .map(|(s, &c)| (c > 0).then(|| s / c as f64))
            .collect()
    };
    Ok(MaskedArModel {
        layout,
        encoders,
        net,
        losses: LossSummary {
            heldout,
            baseline,
            marginals,
            fit: report,
        },
    })
}

/// Builds examples for `tables` from the dataset and trains a model.
pub fn train_on_sequence(
    dataset: &Dataset,
    schema: &AnnotatedSchema,
    tables: &[String],
    encoders: &EncoderSet,
    config: &TrainConfig,
) -> Result<MaskedArModel> {
    let layout = VariableLayout::for_sequence(schema, tables)?;
    let encs = layout_encoders(dataset, &layout, encoders)?;
    let index = ChildIndex::build(dataset, schema)?;
    let examples = build_level_examples(dataset, schema, &layout, &encs, &index)?;
    let examples = subsample(examples, config.max_examples, config.seed());
    train(layout, encs, &examples, config)
}

/// Samples `vars` in order for every row. Each row draws from its own
/// generator. Returns the certainty of every sampled value.
pub(crate) fn sample_with(
    net: &Made,
    marginals: &[Vec<f64>],
    rows: &mut [Vec<u32>],
    ctx: Option<ArrayView2<f64>>,
    vars: &[usize],
    rngs: &mut [ChaCha8Rng],
) -> Vec<Vec<f64>> {
    let mut cert = vec![Vec::with_capacity(vars.len()); rows.len()];
    if rows.is_empty() {
        return cert;
    }
    for &v in vars {
        let probs = {
            let refs: Vec<&[u32]> = rows.iter().map(|r| r.as_slice()).collect();
            let cache = net.forward(&refs, ctx);
            net.head_probs(&cache, v)
        };
        for (b, row) in rows.iter_mut().enumerate() {
            let p = probs.row(b);
            let p = p.as_slice().unwrap();
            row[v] = draw(p, &mut rngs[b]) as u32;
            cert[b].push(certainty(p, &marginals[v]));
        }
    }
    cert
}

pub(crate) fn draw<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * p.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &x) in p.iter().enumerate() {
        if x <= 0.0 {
            continue;
        }
        acc += x;
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}

/// Head probabilities of `var` for a batch of partially filled rows.
pub(crate) fn head_batch(net: &Made, rows: &[Vec<u32>], ctx: Option<ArrayView2<f64>>, var: usize) -> Array2<f64> {
    let refs: Vec<&[u32]> = rows.iter().map(|r| r.as_slice()).collect();
    let cache = net.forward(&refs, ctx);
    net.head_probs(&cache, var)
}

pub(crate) fn tf_from_probs(probs: ndarray::ArrayView1<f64>) -> TfPrediction {
    let probs = probs.to_vec();
    let expected = probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
    TfPrediction { probs, expected }
}

impl MaskedArModel {
    pub fn n_vars(&self) -> usize {
        self.layout.n_vars()
    }

    pub fn cards(&self) -> Vec<u32> {
        self.encoders.iter().map(|e| e.cardinality() as u32).collect()
    }

    /// Row with every position absent.
    pub fn blank_row(&self) -> Vec<u32> {
        self.cards()
    }

    /// Content digest of the encoders, used to reject artifacts trained
    /// against a different encoding.
    pub fn fingerprint(&self) -> String {
        encoder_fingerprint(&self.encoders)
    }

    /// Distribution of the first unobserved variable given an observed
    /// prefix.
    pub fn conditional_density(&self, prefix: &EncodedRow) -> Result<ConditionalDistribution> {
        conditional_with(&self.net, &self.encoders, prefix, None)
    }

    /// Fills every unobserved position by forward sampling.
    pub fn sample_completion<R: Rng>(&self, evidence: &EncodedRow, rng: &mut R) -> Result<EncodedRow> {
        let k = check_prefix(evidence, self.n_vars())?;
        let mut row = evidence.values.clone();
        let cards = self.cards();
        for (i, v) in row.iter_mut().enumerate().skip(k) {
            *v = cards[i];
        }
        for v in k..self.n_vars() {
            let p = head_batch(&self.net, std::slice::from_ref(&row), None, v);
            row[v] = draw(p.row(0).as_slice().unwrap(), rng) as u32;
        }
        Ok(EncodedRow::full(row))
    }

    /// Batched sampling; see [`sample_with`].
    pub fn sample_vars(&self, rows: &mut [Vec<u32>], vars: &[usize], rngs: &mut [ChaCha8Rng]) -> Vec<Vec<f64>> {
        sample_with(&self.net, &self.losses.marginals, rows, None, vars, rngs)
    }

    /// Tuple-factor distribution for the hop into `tables[j]` given rows
    /// filled up to the preceding tables.
    pub fn predict_tuple_factor(&self, rows: &[Vec<u32>], j: usize) -> Result<Vec<TfPrediction>> {
        let var = self
            .layout
            .tf_vars
            .get(j)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Model(format!("model has no tuple factor into position {j}")))?;
        let p = head_batch(&self.net, rows, None, var);
        Ok(p.rows().into_iter().map(tf_from_probs).collect())
    }

    /// Log-likelihood of a full row as the sum of conditional log densities.
    pub fn log_likelihood(&self, row: &[u32]) -> f64 {
        let cache = self.net.forward(&[row], None);
        let logits = self.net.logits(&cache);
        let nll = self.net.nll_per_var(&[row], &logits);
        -nll.sum()
    }

    pub fn persist(&self, path: &Path) -> Result<()> {
        persist_artifact(path, &self.fingerprint(), self)
    }

    pub fn load(path: &Path, expected_fingerprint: Option<&str>) -> Result<Self> {
        let (mut m, _): (MaskedArModel, _) = load_artifact(path, expected_fingerprint)?;
        m.finish();
        Ok(m)
    }

    /// Restores derived state after deserialization.
    pub fn finish(&mut self) {
        self.net.ensure_masks();
        for e in &mut self.encoders {
            e.finish();
        }
    }
}

pub fn encoder_fingerprint(encoders: &[AttributeEncoder]) -> String {
    let text = serde_json::to_string(encoders).expect("encoders serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub(crate) fn check_prefix(prefix: &EncodedRow, n: usize) -> Result<usize> {
    if prefix.values.len() != n || prefix.observed.len() != n {
        return Err(Error::Model(format!(
            "row has {} positions, model has {n} variables",
            prefix.values.len()
        )));
    }
    prefix
        .observed_prefix()
        .ok_or_else(|| Error::Model("observed positions do not form a prefix".into()))
}

pub(crate) fn conditional_with(
    net: &Made,
    encoders: &[AttributeEncoder],
    prefix: &EncodedRow,
    ctx: Option<ArrayView2<f64>>,
) -> Result<ConditionalDistribution> {
    let n = net.n_vars();
    let k = check_prefix(prefix, n)?;
    if k >= n {
        return Err(Error::Model("prefix already covers every variable".into()));
    }
    let row: Vec<u32> = (0..n)
        .map(|i| {
            if i < k {
                prefix.values[i]
            } else {
                encoders[i].cardinality() as u32
            }
        })
        .collect();
    let p = head_batch(net, &[row], ctx, k);
    Ok(ConditionalDistribution {
        variable: k,
        probs: p.row(0).to_vec(),
    })
}

/// Product of head distributions for a full row, via explicit softmax per
/// head. Used to cross-check the joint likelihood.
pub fn joint_probability_by_heads(model: &MaskedArModel, row: &[u32]) -> f64 {
    let cache = model.net.forward(&[row], None);
    let logits = model.net.logits(&cache);
    let mut lp = 0.0;
    for v in 0..model.n_vars() {
        let r = model.net.head_range(v);
        let mut head: Vec<f64> = logits.row(0).as_slice().unwrap()[r].to_vec();
        softmax_in_place(&mut head, &model.net.forbidden[v]);
        lp += head[row[v] as usize].ln();
    }
    lp
}
