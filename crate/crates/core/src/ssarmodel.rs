//! Schema-structured completion models: a tree encoder turns the fan-out
//! evidence of the anchor row (including already available rows of the
//! target table) into a context vector that conditions every layer of the
//! masked network.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::armodel::{
    build_level_examples, check_prefix, conditional_with, encoder_fingerprint, head_batch,
    layout_encoders, marginal_stats, sample_with, split_indices, subsample, tf_from_probs,
    ConditionalDistribution, LevelExample, LossSummary, TfPrediction, TrainConfig, VariableLayout,
};
use crate::encoding::{
    encode_evidence_tree, AttributeEncoder, ChildIndex, EncodedRow, EncodedTree, EncoderSet,
    MAX_CHILDREN,
};
use crate::error::{Error, Result};
use crate::ingest::{load_artifact, persist_artifact, Dataset};
use crate::nn::fit::fit;
use crate::nn::made::{Made, MadeParams};
use crate::nn::tree::{NodeShape, TreeEncoder, TreeParams};
use crate::schema::{acyclic_walk, AnnotatedSchema, CompletionPath, HopKind, WalkEdge, WalkTemplate};

/// Evidence template for a path: the acyclic walk from the anchor that
/// avoids the chain and the final hop, plus the target's own rows under the
/// anchor when `self_evidence` is set and the final hop fans out.
pub fn ssar_walk(schema: &AnnotatedSchema, path: &CompletionPath, self_evidence: bool) -> WalkTemplate {
    let exclude = path.relationship_ids(schema).into_iter().collect();
    let mut walk = acyclic_walk(schema, path.anchor(), &exclude);
    if self_evidence && path.final_hop(schema) == HopKind::FanOut {
        let fk = schema.fk_between(path.anchor(), &path.target).unwrap();
        walk.children.push(WalkEdge {
            fk: fk.id(),
            node: WalkTemplate::leaf(&path.target),
        });
    }
    walk
}

/// Whether the walk carries a self-evidence group (always the last edge).
fn self_group(walk: &WalkTemplate, path: &CompletionPath) -> Option<usize> {
    walk.children
        .last()
        .filter(|e| e.node.table == path.target && e.node.children.is_empty())
        .map(|_| walk.children.len() - 1)
}

fn node_shape(walk: &WalkTemplate, encoders: &EncoderSet, schema: &AnnotatedSchema) -> Result<NodeShape> {
    let def = schema.table_or_err(&walk.table)?;
    Ok(NodeShape {
        cards: def
            .attributes()
            .map(|c| encoders.get(&def.name, &c.name).map(|e| e.cardinality()))
            .collect::<Result<_>>()?,
        children: walk
            .children
            .iter()
            .map(|e| node_shape(&e.node, encoders, schema))
            .collect::<Result<_>>()?,
    })
}

fn subset_encoders(walk: &WalkTemplate, encoders: &EncoderSet) -> EncoderSet {
    let mut tables = std::collections::BTreeSet::new();
    walk.collect_tables(&mut tables);
    EncoderSet {
        encoders: encoders
            .encoders
            .iter()
            .filter(|(k, _)| tables.iter().any(|t| k.starts_with(&format!("{t}."))))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsarModel {
    pub path: CompletionPath,
    pub walk: WalkTemplate,
    pub layout: VariableLayout,
    pub encoders: Vec<AttributeEncoder>,
    /// Encoders of the tables in the walk, used to encode evidence trees.
    pub tree_encoders: EncoderSet,
    pub tree: TreeEncoder,
    pub net: Made,
    pub losses: LossSummary,
    pub seed: u64,
}

/// Training example: level example plus its evidence tree.
#[derive(Clone, Debug)]
pub struct SsarExample {
    pub example: LevelExample,
    pub tree: EncodedTree,
}

#[derive(Clone)]
struct Params {
    net: Made,
    tree: TreeEncoder,
}

fn flat(net: &MadeParams, tree: &TreeParams) -> Vec<f64> {
    let mut out = Vec::new();
    for s in net.slices() {
        out.extend_from_slice(s);
    }
    for s in tree.slices() {
        out.extend_from_slice(s);
    }
    out
}

/// Evidence trees and level examples for the anchor and target levels.
///
/// Child-level examples see every other available sibling but never their
/// own row, which is what a missing row of the same parent sees during
/// completion.
pub fn build_ssar_examples(
    dataset: &Dataset,
    schema: &AnnotatedSchema,
    path: &CompletionPath,
    walk: &WalkTemplate,
    layout: &VariableLayout,
    encoders: &[AttributeEncoder],
    tree_encoders: &EncoderSet,
    seed: u64,
) -> Result<Vec<SsarExample>> {
    let index = ChildIndex::build(dataset, schema)?;
    let anchor_level = layout.tables.len() - 2;
    let examples = build_level_examples(dataset, schema, layout, encoders, &index)?;
    let self_g = self_group(walk, path);
    let mut cache: std::collections::HashMap<usize, EncodedTree> = Default::default();
    let mut out = Vec::new();
    for ex in examples {
        if ex.level < anchor_level {
            continue;
        }
        let anchor = ex.rows[anchor_level];
        if !cache.contains_key(&anchor) {
            let t = encode_evidence_tree(
                dataset,
                schema,
                tree_encoders,
                &index,
                walk,
                anchor,
                MAX_CHILDREN,
                seed,
            )?;
            cache.insert(anchor, t);
        }
        let mut tree = cache[&anchor].clone();
        if ex.level > anchor_level {
            if let Some(g) = self_g {
                let own = ex.rows[anchor_level + 1];
                tree.groups[g].retain(|c| c.id != Some(own));
            }
        }
        out.push(SsarExample { example: ex, tree });
    }
    Ok(out)
}

pub fn train_ssar(
    dataset: &Dataset,
    schema: &AnnotatedSchema,
    path: &CompletionPath,
    walk: &WalkTemplate,
    encoders: &EncoderSet,
    config: &TrainConfig,
) -> Result<SsarModel> {
    let mut tables = path.evidence_chain.clone();
    tables.push(path.target.clone());
    let layout = VariableLayout::for_sequence(schema, &tables)?;
    let encs = layout_encoders(dataset, &layout, encoders)?;
    let tree_encoders = subset_encoders(walk, encoders);
    let seed = config.seed();
    let examples = build_ssar_examples(dataset, schema, path, walk, &layout, &encs, &tree_encoders, seed)?;
    let examples = subsample(examples, config.max_examples, seed);
    if examples.is_empty() {
        return Err(Error::Model(format!(
            "no training rows for schema-structured model of {}",
            path.target
        )));
    }
    let cards: Vec<usize> = encs.iter().map(|e| e.cardinality()).collect();
    let forbidden: Vec<Vec<u32>> = encs.iter().map(|e| e.forbidden()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Made::new(
        cards.clone(),
        forbidden.clone(),
        config.emb_dim,
        config.hidden,
        config.ctx_dim,
        &mut rng,
    );
    let shapes = walk
        .children
        .iter()
        .map(|e| node_shape(&e.node, &tree_encoders, schema))
        .collect::<Result<Vec<_>>>()?;
    let tree = TreeEncoder::new(shapes, config.emb_dim, config.phi_dim, config.ctx_dim, &mut rng);

    let values: Vec<&[u32]> = examples.iter().map(|e| e.example.values.as_slice()).collect();
    let loss: Vec<&[bool]> = examples.iter().map(|e| e.example.loss.as_slice()).collect();
    let (train_idx, held_idx) = split_indices(examples.len(), config.heldout_fraction, seed);
    let (marginals, baseline) = marginal_stats(&cards, &forbidden, &values, &loss, &train_idx, &held_idx);
    let eval_idx = if held_idx.is_empty() { train_idx.clone() } else { held_idx.clone() };

    let eval = |p: &Params| -> (Vec<f64>, Vec<usize>) {
        let rows: Vec<&[u32]> = eval_idx.iter().map(|&i| values[i]).collect();
        let lm: Vec<&[bool]> = eval_idx.iter().map(|&i| loss[i]).collect();
        let ctx = contexts_of(&p.tree, eval_idx.iter().map(|&i| &examples[i].tree));
        crate::armodel::per_var_loss(&p.net, &rows, &lm, Some(ctx.view()))
    };

    let mut params = Params { net, tree };
    let ones = vec![1.0; config.fit.batch_size.max(1)];
    let report = fit(
        &mut params,
        train_idx.len(),
        &config.fit,
        |p, batch| {
            let ids: Vec<usize> = batch.iter().map(|&k| train_idx[k]).collect();
            let rows: Vec<&[u32]> = ids.iter().map(|&i| values[i]).collect();
            let lm: Vec<&[bool]> = ids.iter().map(|&i| loss[i]).collect();
            let mut caches = Vec::with_capacity(ids.len());
            let mut ctx = Array2::zeros((ids.len(), p.tree.ctx_dim));
            for (b, &i) in ids.iter().enumerate() {
                let (c, cache) = p.tree.forward(&examples[i].tree);
                ctx.row_mut(b).assign(&c);
                caches.push(cache);
            }
            let cache = p.net.forward(&rows, Some(ctx.view()));
            let logits = p.net.logits(&cache);
            let (l, dl) = p.net.nll_and_dlogits(&rows, &lm, &ones[..rows.len()], &logits);
            let mut g_net = p.net.params.zeros_like();
            let dctx = p
                .net
                .backward(&rows, Some(ctx.view()), &cache, &dl, &mut g_net)
                .expect("context gradient");
            let mut g_tree = p.tree.params.zeros_like();
            for (b, c) in caches.iter().enumerate() {
                p.tree.backward(c, &dctx.row(b).to_owned(), &mut g_tree);
            }
            (l, rows.len() as f64, flat(&g_net, &g_tree))
        },
        |p| {
            let mut v = p.net.params.slices_mut();
            v.extend(p.tree.params.slices_mut());
            v
        },
        |p| {
            let (s, _) = eval(p);
            s.iter().sum::<f64>() / eval_idx.len() as f64
        },
    )?;
    let heldout = if held_idx.is_empty() {
        vec![None; cards.len()]
    } else {
        let (s, c) = eval(&params);
        s.iter()
            .zip(&c)
            .map(|(s, &c)| (c > 0).then(|| s / c as f64))
            .collect()
    };
    Ok(SsarModel {
        path: path.clone(),
        walk: walk.clone(),
        layout,
        encoders: encs,
        tree_encoders,
        tree: params.tree,
        net: params.net,
        losses: LossSummary {
            heldout,
            baseline,
            marginals,
            fit: report,
        },
        seed,
    })
}

fn contexts_of<'a>(tree: &TreeEncoder, trees: impl Iterator<Item = &'a EncodedTree>) -> Array2<f64> {
    let rows: Vec<Array1<f64>> = trees.map(|t| tree.forward(t).0).collect();
    let mut out = Array2::zeros((rows.len(), tree.ctx_dim));
    for (b, r) in rows.iter().enumerate() {
        out.row_mut(b).assign(r);
    }
    out
}

impl SsarModel {
    pub fn n_vars(&self) -> usize {
        self.layout.n_vars()
    }

    pub fn fingerprint(&self) -> String {
        let mut encs = self.encoders.clone();
        encs.extend(self.tree_encoders.encoders.values().cloned());
        encoder_fingerprint(&encs)
    }

    /// Evidence tree of an existing anchor row, as used at completion time.
    pub fn evidence_tree(&self, dataset: &Dataset, schema: &AnnotatedSchema, index: &ChildIndex, anchor_row: usize) -> Result<EncodedTree> {
        encode_evidence_tree(
            dataset,
            schema,
            &self.tree_encoders,
            index,
            &self.walk,
            anchor_row,
            MAX_CHILDREN,
            self.seed,
        )
    }

    /// Tree for an anchor with no available evidence.
    pub fn empty_tree(&self) -> EncodedTree {
        EncodedTree::leaf(&self.walk, Vec::new())
    }

    pub fn contexts(&self, trees: &[EncodedTree]) -> Result<Array2<f64>> {
        for t in trees {
            if t.groups.len() != self.walk.children.len() || !t.conforms(&self.walk) {
                return Err(Error::Model("evidence tree does not match the model's walk".into()));
            }
        }
        Ok(contexts_of(&self.tree, trees.iter()))
    }

    pub fn conditional_density(&self, prefix: &EncodedRow, tree: &EncodedTree) -> Result<ConditionalDistribution> {
        let ctx = self.contexts(std::slice::from_ref(tree))?;
        conditional_with(&self.net, &self.encoders, prefix, Some(ctx.view()))
    }

    pub fn sample_completion<R: Rng>(&self, evidence: &EncodedRow, tree: &EncodedTree, rng: &mut R) -> Result<EncodedRow> {
        let k = check_prefix(evidence, self.n_vars())?;
        let ctx = self.contexts(std::slice::from_ref(tree))?;
        let mut row = evidence.values.clone();
        for (i, v) in row.iter_mut().enumerate().skip(k) {
            *v = self.encoders[i].cardinality() as u32;
        }
        for v in k..self.n_vars() {
            let p = head_batch(&self.net, std::slice::from_ref(&row), Some(ctx.view()), v);
            row[v] = crate::armodel::draw(p.row(0).as_slice().unwrap(), rng) as u32;
        }
        Ok(EncodedRow::full(row))
    }

    pub fn sample_vars(
        &self,
        rows: &mut [Vec<u32>],
        ctx: ArrayView2<f64>,
        vars: &[usize],
        rngs: &mut [ChaCha8Rng],
    ) -> Vec<Vec<f64>> {
        sample_with(&self.net, &self.losses.marginals, rows, Some(ctx), vars, rngs)
    }

    pub fn predict_tuple_factor(&self, rows: &[Vec<u32>], ctx: ArrayView2<f64>) -> Result<Vec<TfPrediction>> {
        let j = self.layout.tables.len() - 1;
        let var = self.layout.tf_vars[j]
            .ok_or_else(|| Error::Model("model has no tuple factor variable".into()))?;
        let p = head_batch(&self.net, rows, Some(ctx), var);
        Ok(p.axis_iter(Axis(0)).map(tf_from_probs).collect())
    }

    pub fn persist(&self, path: &Path) -> Result<()> {
        persist_artifact(path, &self.fingerprint(), self)
    }

    pub fn load(path: &Path, expected_fingerprint: Option<&str>) -> Result<Self> {
        let (mut m, _): (SsarModel, _) = load_artifact(path, expected_fingerprint)?;
        m.finish();
        Ok(m)
    }

    pub fn finish(&mut self) {
        self.net.ensure_masks();
        for e in &mut self.encoders {
            e.finish();
        }
        self.tree_encoders.finish();
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::armodel::train_on_sequence;
    use crate::encoding::fit_encoders;
    use crate::ingest::tests::{cats, keys};
    use crate::ingest::{compute_tuple_factors, Table};
    use crate::nn::fit::FitConfig;
    use crate::schema::tests::schema_from_edges;
    use crate::schema::enumerate_completion_paths;

    /// Parent table t0 with attribute `a`, child t1 whose attribute is shared
    /// by all siblings (`coherent`) or drawn independently.
    fn as_refs(v: &[String]) -> Vec<&str> {
        v.iter().map(|s| s.as_str()).collect()
    }

    pub fn sibling_dataset(n_parents: usize, coherent: bool, seed: u64) -> (AnnotatedSchema, Dataset) {
        let schema = schema_from_edges(2, &[(1, 0)], &[1]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pk: Vec<String> = (0..n_parents).map(|i| format!("p{i}")).collect();
        let a: Vec<String> = (0..n_parents).map(|i| format!("a{}", i % 3)).collect();
        let mut cid = Vec::new();
        let mut fk = Vec::new();
        let mut b = Vec::new();
        for i in 0..n_parents {
            let g: u32 = rng.random_range(0..6);
            for _ in 0..rng.random_range(2..6) {
                cid.push(format!("c{}", cid.len()));
                fk.push(pk[i].clone());
                let v = if coherent { g } else { rng.random_range(0..6) };
                b.push(format!("b{v}"));
            }
        }
        let t0 = Table::new("t0", "id", vec![("id".into(), keys(&as_refs(&pk))), ("a".into(), cats(&as_refs(&a)))]).unwrap();
        let t1 = Table::new(
            "t1",
            "id",
            vec![
                ("id".into(), keys(&as_refs(&cid))),
                ("a".into(), cats(&as_refs(&b))),
                ("t0_id".into(), keys(&as_refs(&fk))),
            ],
        )
        .unwrap();
        let ds = compute_tuple_factors(&Dataset::new(vec![t0, t1]), &schema).unwrap();
        (schema, ds)
    }

    fn config(seed: u64) -> TrainConfig {
        TrainConfig {
            emb_dim: 8,
            hidden: 32,
            ctx_dim: 8,
            phi_dim: 8,
            fit: FitConfig {
                epochs: 25,
                seed,
                ..FitConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    fn target_loss(l: &LossSummary, layout: &VariableLayout) -> f64 {
        let j = layout.tables.len() - 1;
        l.totals(layout.attr_ranges[j].clone()).unwrap().0
    }

    #[test]
    fn sibling_evidence_beats_plain_model() {
        let (schema, ds) = sibling_dataset(600, true, 1);
        let enc = fit_encoders(&ds, &schema, 16).unwrap();
        let path = enumerate_completion_paths(&schema, "t1", 2).remove(0);
        let walk = ssar_walk(&schema, &path, true);
        let s = train_ssar(&ds, &schema, &path, &walk, &enc, &config(1)).unwrap();
        let ar = train_on_sequence(&ds, &schema, &["t0".into(), "t1".into()], &enc, &config(1)).unwrap();
        let ls = target_loss(&s.losses, &s.layout);
        let la = target_loss(&ar.losses, &ar.layout);
        assert!(ls < la, "ssar {ls} vs ar {la}");
    }

    #[test]
    fn without_fanout_evidence_losses_agree() {
        let (schema, ds) = sibling_dataset(600, false, 2);
        let enc = fit_encoders(&ds, &schema, 16).unwrap();
        let path = enumerate_completion_paths(&schema, "t1", 2).remove(0);
        let walk = ssar_walk(&schema, &path, false);
        assert!(walk.children.is_empty());
        let s = train_ssar(&ds, &schema, &path, &walk, &enc, &config(2)).unwrap();
        let ar = train_on_sequence(&ds, &schema, &["t0".into(), "t1".into()], &enc, &config(2)).unwrap();
        let ls = target_loss(&s.losses, &s.layout);
        let la = target_loss(&ar.losses, &ar.layout);
        assert!((ls - la).abs() <= 0.05 * la, "ssar {ls} vs ar {la}");
    }

    #[test]
    fn own_row_never_in_its_evidence() {
        let (schema, ds) = sibling_dataset(100, true, 3);
        let enc = fit_encoders(&ds, &schema, 16).unwrap();
        let path = enumerate_completion_paths(&schema, "t1", 2).remove(0);
        let walk = ssar_walk(&schema, &path, true);
        let layout = VariableLayout::for_sequence(&schema, &["t0".into(), "t1".into()]).unwrap();
        let encs = layout_encoders(&ds, &layout, &enc).unwrap();
        let ex = build_ssar_examples(&ds, &schema, &path, &walk, &layout, &encs, &subset_encoders(&walk, &enc), 3).unwrap();
        let mut child_level = 0;
        for e in &ex {
            if e.example.level == 1 {
                child_level += 1;
                let mut ids = Vec::new();
                e.tree.ids_in(&mut ids);
                assert!(!ids.contains(&e.example.rows[1]));
            }
        }
        assert_eq!(child_level, ds.table("t1").unwrap().n_rows());
    }

    #[test]
    fn zero_context_reduces_to_plain_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let with_ctx = Made::new(vec![3, 4, 2], vec![vec![]; 3], 4, 16, 5, &mut rng);
        let mut plain = with_ctx.clone();
        plain.ctx_dim = 0;
        plain.params.u1 = Array2::zeros((16, 0));
        plain.params.u2 = Array2::zeros((16, 0));
        let rows = vec![vec![0u32, 1, 3], vec![2, 3, 0]];
        let r: Vec<&[u32]> = rows.iter().map(|x| x.as_slice()).collect();
        let zero = Array2::zeros((2, 5));
        let a = with_ctx.logits(&with_ctx.forward(&r, Some(zero.view())));
        let b = plain.logits(&plain.forward(&r, None));
        assert_eq!(a, b);
    }

    #[test]
    fn empty_tree_and_permutations() {
        let (schema, ds) = sibling_dataset(80, true, 5);
        let enc = fit_encoders(&ds, &schema, 16).unwrap();
        let path = enumerate_completion_paths(&schema, "t1", 2).remove(0);
        let walk = ssar_walk(&schema, &path, true);
        let cfg = TrainConfig {
            fit: FitConfig {
                epochs: 2,
                ..config(5).fit
            },
            ..config(5)
        };
        let m = train_ssar(&ds, &schema, &path, &walk, &enc, &cfg).unwrap();
        let index = ChildIndex::build(&ds, &schema).unwrap();
        let tree = m.evidence_tree(&ds, &schema, &index, 0).unwrap();
        let mut shuffled = tree.clone();
        shuffled.groups[0].reverse();
        let prefix = EncodedRow::prefix(vec![tree.row[0], 0, 0], 1);
        let a = m.conditional_density(&prefix, &tree).unwrap();
        let b = m.conditional_density(&prefix, &shuffled).unwrap();
        assert_eq!(a, b);
        // The empty tree conditions on the evidence row alone.
        let e = m.conditional_density(&prefix, &m.empty_tree()).unwrap();
        assert!((e.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let mut bad = tree.clone();
        bad.groups.push(Vec::new());
        assert!(m.conditional_density(&prefix, &bad).is_err());

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        m.persist(&p).unwrap();
        let back = SsarModel::load(&p, Some(&m.fingerprint())).unwrap();
        assert_eq!(back.conditional_density(&prefix, &tree).unwrap(), a);
    }
}
