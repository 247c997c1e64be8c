//! Permutation-invariant encoder for evidence trees: every child row is
//! embedded by a per-table network, children are sum-pooled per group with
//! the group size appended, and a combiner maps the pooled groups of the root
//! to a context vector.

use std::cmp::Ordering;

use ndarray::{s, Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoding::EncodedTree;

/// Shape of a child node: attribute cardinalities and nested groups.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeShape {
    pub cards: Vec<usize>,
    pub children: Vec<NodeShape>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeParams {
    pub emb: Vec<Array2<f64>>,
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub children: Vec<NodeParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// One node network per group of the root.
    pub groups: Vec<NodeParams>,
    pub wr: Array2<f64>,
    pub br: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeEncoder {
    pub shapes: Vec<NodeShape>,
    pub emb_dim: usize,
    pub phi_dim: usize,
    pub ctx_dim: usize,
    pub params: TreeParams,
}

struct NodeCache {
    input: Array1<f64>,
    z: Array1<f64>,
    row: Vec<u32>,
    children: Vec<Vec<NodeCache>>,
}

pub struct TreeCache {
    pooled: Array1<f64>,
    z: Array1<f64>,
    groups: Vec<Vec<NodeCache>>,
}

fn count_feature(n: usize) -> f64 {
    (1.0 + n as f64).ln()
}

/// Total order on tree content, ignoring row ids. Children are pooled in this
/// order so permuted inputs produce bit-identical sums.
pub fn content_cmp(a: &EncodedTree, b: &EncodedTree) -> Ordering {
    a.row.cmp(&b.row).then_with(|| {
        for (ga, gb) in a.groups.iter().zip(&b.groups) {
            let o = ga.len().cmp(&gb.len());
            if o != Ordering::Equal {
                return o;
            }
            let mut sa: Vec<&EncodedTree> = ga.iter().collect();
            let mut sb: Vec<&EncodedTree> = gb.iter().collect();
            sa.sort_by(|x, y| content_cmp(x, y));
            sb.sort_by(|x, y| content_cmp(x, y));
            for (x, y) in sa.iter().zip(&sb) {
                let o = content_cmp(x, y);
                if o != Ordering::Equal {
                    return o;
                }
            }
        }
        a.groups.len().cmp(&b.groups.len())
    })
}

fn sorted_children(g: &[EncodedTree]) -> Vec<&EncodedTree> {
    let mut v: Vec<&EncodedTree> = g.iter().collect();
    v.sort_by(|x, y| content_cmp(x, y));
    v
}

impl NodeParams {
    fn new<R: Rng>(shape: &NodeShape, emb_dim: usize, phi_dim: usize, rng: &mut R) -> Self {
        let din = shape.cards.len() * emb_dim + shape.children.len() * (phi_dim + 1);
        let en = Normal::new(0.0, 0.5).unwrap();
        let wn = Normal::new(0.0, (2.0 / din.max(1) as f64).sqrt()).unwrap();
        NodeParams {
            emb: shape
                .cards
                .iter()
                .map(|&c| Array2::from_shape_fn((c + 1, emb_dim), |_| en.sample(rng)))
                .collect(),
            w: Array2::from_shape_fn((phi_dim, din), |_| wn.sample(rng)),
            b: Array1::from_elem(phi_dim, 0.01),
            children: shape
                .children
                .iter()
                .map(|c| NodeParams::new(c, emb_dim, phi_dim, rng))
                .collect(),
        }
    }

    fn zeros_like(&self) -> Self {
        NodeParams {
            emb: self.emb.iter().map(|e| Array2::zeros(e.raw_dim())).collect(),
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
            children: self.children.iter().map(|c| c.zeros_like()).collect(),
        }
    }

    fn slices<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        for e in &self.emb {
            out.push(e.as_slice().unwrap());
        }
        out.push(self.w.as_slice().unwrap());
        out.push(self.b.as_slice().unwrap());
        for c in &self.children {
            c.slices(out);
        }
    }

    fn slices_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        for e in &mut self.emb {
            out.push(e.as_slice_mut().unwrap());
        }
        out.push(self.w.as_slice_mut().unwrap());
        out.push(self.b.as_slice_mut().unwrap());
        for c in &mut self.children {
            c.slices_mut(out);
        }
    }

    fn forward(&self, tree: &EncodedTree, emb_dim: usize, phi_dim: usize) -> (Array1<f64>, NodeCache) {
        let din = self.w.ncols();
        let mut input = Array1::zeros(din);
        for (i, e) in self.emb.iter().enumerate() {
            let idx = (tree.row.get(i).copied().unwrap_or(u32::MAX) as usize).min(e.nrows() - 1);
            input
                .slice_mut(s![i * emb_dim..(i + 1) * emb_dim])
                .assign(&e.row(idx));
        }
        let mut off = self.emb.len() * emb_dim;
        let mut children = Vec::with_capacity(self.children.len());
        for (gi, net) in self.children.iter().enumerate() {
            let group = tree.groups.get(gi).map(|g| g.as_slice()).unwrap_or(&[]);
            let mut sum = Array1::zeros(phi_dim);
            let mut caches = Vec::with_capacity(group.len());
            for c in sorted_children(group) {
                let (o, cache) = net.forward(c, emb_dim, phi_dim);
                sum += &o;
                caches.push(cache);
            }
            input.slice_mut(s![off..off + phi_dim]).assign(&sum);
            input[off + phi_dim] = count_feature(group.len());
            off += phi_dim + 1;
            children.push(caches);
        }
        let z = self.w.dot(&input) + &self.b;
        let out = z.mapv(|v| v.max(0.0));
        (
            out,
            NodeCache {
                input,
                z,
                row: tree.row.clone(),
                children,
            },
        )
    }

    fn backward(&self, cache: &NodeCache, dout: &Array1<f64>, emb_dim: usize, phi_dim: usize, g: &mut NodeParams) {
        let mut dz = dout.clone();
        dz.zip_mut_with(&cache.z, |d, z| {
            if *z <= 0.0 {
                *d = 0.0
            }
        });
        g.w += &outer(&dz, &cache.input);
        g.b += &dz;
        let dinput = self.w.t().dot(&dz);
        for (i, e) in g.emb.iter_mut().enumerate() {
            let idx = (cache.row.get(i).copied().unwrap_or(u32::MAX) as usize).min(e.nrows() - 1);
            let mut r = e.row_mut(idx);
            r += &dinput.slice(s![i * emb_dim..(i + 1) * emb_dim]);
        }
        let mut off = self.emb.len() * emb_dim;
        for (gi, net) in self.children.iter().enumerate() {
            let dsum = dinput.slice(s![off..off + phi_dim]).to_owned();
            for c in &cache.children[gi] {
                net.backward(c, &dsum, emb_dim, phi_dim, &mut g.children[gi]);
            }
            off += phi_dim + 1;
        }
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(ndarray::Axis(1));
    let b2 = b.view().insert_axis(ndarray::Axis(0));
    a2.dot(&b2)
}

impl TreeParams {
    pub fn zeros_like(&self) -> Self {
        TreeParams {
            groups: self.groups.iter().map(|g| g.zeros_like()).collect(),
            wr: Array2::zeros(self.wr.raw_dim()),
            br: Array1::zeros(self.br.raw_dim()),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for g in &self.groups {
            g.slices(&mut out);
        }
        out.push(self.wr.as_slice().unwrap());
        out.push(self.br.as_slice().unwrap());
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for g in &mut self.groups {
            g.slices_mut(&mut out);
        }
        out.push(self.wr.as_slice_mut().unwrap());
        out.push(self.br.as_slice_mut().unwrap());
        out
    }
}

impl TreeEncoder {
    pub fn new<R: Rng>(shapes: Vec<NodeShape>, emb_dim: usize, phi_dim: usize, ctx_dim: usize, rng: &mut R) -> Self {
        let groups: Vec<NodeParams> = shapes
            .iter()
            .map(|s| NodeParams::new(s, emb_dim, phi_dim, rng))
            .collect();
        let din = shapes.len() * (phi_dim + 1);
        let wn = Normal::new(0.0, (2.0 / din.max(1) as f64).sqrt()).unwrap();
        TreeEncoder {
            shapes,
            emb_dim,
            phi_dim,
            ctx_dim,
            params: TreeParams {
                groups,
                wr: Array2::from_shape_fn((ctx_dim, din), |_| wn.sample(rng)),
                br: Array1::from_elem(ctx_dim, 0.01),
            },
        }
    }

    /// Context vector for a tree whose root groups follow `self.shapes`.
    pub fn forward(&self, tree: &EncodedTree) -> (Array1<f64>, TreeCache) {
        let (e, p) = (self.emb_dim, self.phi_dim);
        let mut pooled = Array1::zeros(self.params.wr.ncols());
        let mut groups = Vec::with_capacity(self.shapes.len());
        for (gi, net) in self.params.groups.iter().enumerate() {
            let group = tree.groups.get(gi).map(|g| g.as_slice()).unwrap_or(&[]);
            let mut sum = Array1::zeros(p);
            let mut caches = Vec::with_capacity(group.len());
            for c in sorted_children(group) {
                let (o, cache) = net.forward(c, e, p);
                sum += &o;
                caches.push(cache);
            }
            let off = gi * (p + 1);
            pooled.slice_mut(s![off..off + p]).assign(&sum);
            pooled[off + p] = count_feature(group.len());
            groups.push(caches);
        }
        let z = self.params.wr.dot(&pooled) + &self.params.br;
        let ctx = z.mapv(|v| v.max(0.0));
        (ctx, TreeCache { pooled, z, groups })
    }

    pub fn backward(&self, cache: &TreeCache, dctx: &Array1<f64>, grads: &mut TreeParams) {
        let (e, p) = (self.emb_dim, self.phi_dim);
        let mut dz = dctx.clone();
        dz.zip_mut_with(&cache.z, |d, z| {
            if *z <= 0.0 {
                *d = 0.0
            }
        });
        grads.wr += &outer(&dz, &cache.pooled);
        grads.br += &dz;
        let dpooled = self.params.wr.t().dot(&dz);
        for (gi, net) in self.params.groups.iter().enumerate() {
            let off = gi * (p + 1);
            let dsum = dpooled.slice(s![off..off + p]).to_owned();
            for c in &cache.groups[gi] {
                net.backward(c, &dsum, e, p, &mut grads.groups[gi]);
            }
        }
    }
}
