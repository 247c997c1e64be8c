//! Masked autoencoder for distribution estimation with two residual hidden
//! layers and an optional context input visible to every head.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Trainable tensors of a [`Made`] network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MadeParams {
    /// Per variable, `(card + 1) x emb_dim`; the last row is the absent token.
    pub emb: Vec<Array2<f64>>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    /// Context projections into the two hidden layers, `hidden x ctx_dim`.
    pub u1: Array2<f64>,
    pub u2: Array2<f64>,
}

impl MadeParams {
    pub fn zeros_like(&self) -> Self {
        MadeParams {
            emb: self.emb.iter().map(|e| Array2::zeros(e.raw_dim())).collect(),
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.raw_dim()),
            wo: Array2::zeros(self.wo.raw_dim()),
            bo: Array1::zeros(self.bo.raw_dim()),
            u1: Array2::zeros(self.u1.raw_dim()),
            u2: Array2::zeros(self.u2.raw_dim()),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = self.emb.iter().map(|e| e.as_slice().unwrap()).collect();
        for a in [&self.w1, &self.w2, &self.wo, &self.u1, &self.u2] {
            v.push(a.as_slice().unwrap());
        }
        for b in [&self.b1, &self.b2, &self.bo] {
            v.push(b.as_slice().unwrap());
        }
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = self
            .emb
            .iter_mut()
            .map(|e| e.as_slice_mut().unwrap())
            .collect();
        v.push(self.w1.as_slice_mut().unwrap());
        v.push(self.w2.as_slice_mut().unwrap());
        v.push(self.wo.as_slice_mut().unwrap());
        v.push(self.u1.as_slice_mut().unwrap());
        v.push(self.u2.as_slice_mut().unwrap());
        v.push(self.b1.as_slice_mut().unwrap());
        v.push(self.b2.as_slice_mut().unwrap());
        v.push(self.bo.as_slice_mut().unwrap());
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Made {
    pub cards: Vec<usize>,
    pub emb_dim: usize,
    pub hidden: usize,
    pub ctx_dim: usize,
    /// Per variable, indices excluded from the head's support.
    pub forbidden: Vec<Vec<u32>>,
    pub params: MadeParams,
    #[serde(skip)]
    masks: Option<Masks>,
}

#[derive(Clone, Debug, PartialEq)]
struct Masks {
    m1: Array2<f64>,
    m2: Array2<f64>,
    mo: Array2<f64>,
    offsets: Vec<usize>,
}

/// Activations kept for the backward pass.
pub struct MadeCache {
    x: Array2<f64>,
    z1: Array2<f64>,
    h1: Array2<f64>,
    z2: Array2<f64>,
    pub h2: Array2<f64>,
}

/// Degree of hidden unit `h` among `n` variables: units of degree `k` see
/// the inputs of variables `0..k` and feed heads `k..n`.
fn hidden_degree(h: usize, n: usize) -> usize {
    h % n
}

impl Made {
    pub fn new<R: Rng>(
        cards: Vec<usize>,
        forbidden: Vec<Vec<u32>>,
        emb_dim: usize,
        hidden: usize,
        ctx_dim: usize,
        rng: &mut R,
    ) -> Self {
        let n = cards.len();
        assert!(n > 0, "at least one variable");
        assert_eq!(forbidden.len(), n);
        let din = n * emb_dim;
        let total: usize = cards.iter().sum();
        let mut normal = |rows: usize, cols: usize, std: f64| {
            let d = Normal::new(0.0, std).unwrap();
            Array2::from_shape_fn((rows, cols), |_| d.sample(rng))
        };
        let emb = cards.iter().map(|&c| normal(c + 1, emb_dim, 0.5)).collect();
        let w1 = normal(hidden, din, (2.0 / din.max(1) as f64).sqrt());
        let w2 = normal(hidden, hidden, (1.0 / hidden as f64).sqrt());
        let wo = normal(total, hidden, (1.0 / hidden as f64).sqrt() * 0.5);
        let u1 = normal(hidden, ctx_dim, (1.0 / ctx_dim.max(1) as f64).sqrt());
        let u2 = normal(hidden, ctx_dim, (1.0 / ctx_dim.max(1) as f64).sqrt() * 0.5);
        let mut net = Made {
            cards,
            emb_dim,
            hidden,
            ctx_dim,
            forbidden,
            params: MadeParams {
                emb,
                w1,
                b1: Array1::from_elem(hidden, 0.01),
                w2,
                b2: Array1::from_elem(hidden, 0.01),
                wo,
                bo: Array1::zeros(total),
                u1,
                u2,
            },
            masks: None,
        };
        net.ensure_masks();
        let m = net.masks.clone().unwrap();
        net.params.w1 *= &m.m1;
        net.params.w2 *= &m.m2;
        net.params.wo *= &m.mo;
        net
    }

    pub fn n_vars(&self) -> usize {
        self.cards.len()
    }

    pub fn n_params(&self) -> usize {
        self.params.slices().iter().map(|s| s.len()).sum()
    }

    /// Builds masks after construction or deserialization.
    pub fn ensure_masks(&mut self) {
        if self.masks.is_some() {
            return;
        }
        let n = self.n_vars();
        let d = self.emb_dim;
        let m1 = Array2::from_shape_fn((self.hidden, n * d), |(h, k)| {
            let input_degree = k / d + 1;
            (input_degree <= hidden_degree(h, n)) as u8 as f64
        });
        let m2 = Array2::from_shape_fn((self.hidden, self.hidden), |(h2, h1)| {
            (hidden_degree(h1, n) <= hidden_degree(h2, n)) as u8 as f64
        });
        let mut offsets = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for &c in &self.cards {
            offsets.push(acc);
            acc += c;
        }
        offsets.push(acc);
        let mut mo = Array2::zeros((acc, self.hidden));
        for i in 0..n {
            for r in offsets[i]..offsets[i + 1] {
                for h in 0..self.hidden {
                    // Head i sees hidden units of degree <= i.
                    if hidden_degree(h, n) <= i {
                        mo[[r, h]] = 1.0;
                    }
                }
            }
        }
        self.masks = Some(Masks { m1, m2, mo, offsets });
    }

    fn masks(&self) -> &Masks {
        self.masks.as_ref().expect("masks built")
    }

    pub fn head_range(&self, var: usize) -> std::ops::Range<usize> {
        let o = &self.masks().offsets;
        o[var]..o[var + 1]
    }

    fn embed(&self, rows: &[&[u32]]) -> Array2<f64> {
        let n = self.n_vars();
        let d = self.emb_dim;
        let mut x = Array2::zeros((rows.len(), n * d));
        for (b, row) in rows.iter().enumerate() {
            for i in 0..n {
                let idx = (row[i] as usize).min(self.cards[i]);
                x.slice_mut(s![b, i * d..(i + 1) * d])
                    .assign(&self.params.emb[i].row(idx));
            }
        }
        x
    }

    /// Hidden activations for a batch. `rows[b][i] == cards[i]` marks an
    /// absent input. `ctx` has one row per example when `ctx_dim > 0`.
    pub fn forward(&self, rows: &[&[u32]], ctx: Option<ArrayView2<f64>>) -> MadeCache {
        let p = &self.params;
        let x = self.embed(rows);
        let mut z1 = x.dot(&p.w1.t()) + &p.b1;
        if let (Some(c), true) = (ctx, self.ctx_dim > 0) {
            z1 += &c.dot(&p.u1.t());
        }
        let h1 = z1.mapv(|v| v.max(0.0));
        let mut z2 = h1.dot(&p.w2.t()) + &p.b2;
        if let (Some(c), true) = (ctx, self.ctx_dim > 0) {
            z2 += &c.dot(&p.u2.t());
        }
        let h2 = z2.mapv(|v| v.max(0.0)) + &h1;
        MadeCache { x, z1, h1, z2, h2 }
    }

    /// Logits of all heads.
    pub fn logits(&self, cache: &MadeCache) -> Array2<f64> {
        cache.h2.dot(&self.params.wo.t()) + &self.params.bo
    }

    /// Probabilities of head `var` for every example in the batch.
    pub fn head_probs(&self, cache: &MadeCache, var: usize) -> Array2<f64> {
        let r = self.head_range(var);
        let w = self.params.wo.slice(s![r.clone(), ..]);
        let mut l = cache.h2.dot(&w.t()) + &self.params.bo.slice(s![r]);
        for mut row in l.rows_mut() {
            softmax_in_place(row.as_slice_mut().unwrap(), &self.forbidden[var]);
        }
        l
    }

    /// Turns logits into per-head probabilities in place.
    pub fn softmax_heads(&self, logits: &mut Array2<f64>) {
        for i in 0..self.n_vars() {
            let r = self.head_range(i);
            for mut row in logits.slice_mut(s![.., r]).rows_mut() {
                softmax_in_place(row.as_slice_mut().unwrap(), &self.forbidden[i]);
            }
        }
    }

    /// Backpropagates `dlogits` into `grads` (accumulating) and returns the
    /// gradient with respect to the context rows.
    pub fn backward(
        &self,
        rows: &[&[u32]],
        ctx: Option<ArrayView2<f64>>,
        cache: &MadeCache,
        dlogits: &Array2<f64>,
        grads: &mut MadeParams,
    ) -> Option<Array2<f64>> {
        let p = &self.params;
        let m = self.masks();
        grads.wo += &(dlogits.t().dot(&cache.h2) * &m.mo);
        grads.bo += &dlogits.sum_axis(Axis(0));
        let dh2 = dlogits.dot(&p.wo);
        let mut dz2 = dh2.clone();
        dz2.zip_mut_with(&cache.z2, |g, z| {
            if *z <= 0.0 {
                *g = 0.0
            }
        });
        grads.w2 += &(dz2.t().dot(&cache.h1) * &m.m2);
        grads.b2 += &dz2.sum_axis(Axis(0));
        let mut dh1 = dh2 + dz2.dot(&p.w2);
        let mut dz1 = std::mem::take(&mut dh1);
        dz1.zip_mut_with(&cache.z1, |g, z| {
            if *z <= 0.0 {
                *g = 0.0
            }
        });
        grads.w1 += &(dz1.t().dot(&cache.x) * &m.m1);
        grads.b1 += &dz1.sum_axis(Axis(0));
        let dx = dz1.dot(&p.w1);
        let d = self.emb_dim;
        for (b, row) in rows.iter().enumerate() {
            for i in 0..self.n_vars() {
                let idx = (row[i] as usize).min(self.cards[i]);
                let mut target = grads.emb[i].row_mut(idx);
                target += &dx.slice(s![b, i * d..(i + 1) * d]);
            }
        }
        match (ctx, self.ctx_dim > 0) {
            (Some(c), true) => {
                grads.u1 += &dz1.t().dot(&c);
                grads.u2 += &dz2.t().dot(&c);
                Some(dz1.dot(&p.u1) + dz2.dot(&p.u2))
            }
            _ => None,
        }
    }

    /// Weighted negative log-likelihood of a batch and its gradient with
    /// respect to the logits. `loss_mask[b][i]` selects trained heads.
    pub fn nll_and_dlogits(
        &self,
        rows: &[&[u32]],
        loss_mask: &[&[bool]],
        weights: &[f64],
        logits: &Array2<f64>,
    ) -> (f64, Array2<f64>) {
        let mut probs = logits.clone();
        self.softmax_heads(&mut probs);
        let mut dl = Array2::zeros(logits.raw_dim());
        let mut loss = 0.0;
        for (b, row) in rows.iter().enumerate() {
            for i in 0..self.n_vars() {
                if !loss_mask[b][i] {
                    continue;
                }
                let t = row[i] as usize;
                if t >= self.cards[i] || self.forbidden[i].contains(&(t as u32)) {
                    continue;
                }
                let r = self.head_range(i);
                let pt = probs[[b, r.start + t]];
                loss -= weights[b] * pt.max(1e-300).ln();
                for k in r.clone() {
                    dl[[b, k]] = weights[b] * probs[[b, k]];
                }
                dl[[b, r.start + t]] -= weights[b];
            }
        }
        (loss, dl)
    }

    /// Per-variable negative log-likelihoods, one row per example.
    pub fn nll_per_var(&self, rows: &[&[u32]], logits: &Array2<f64>) -> Array2<f64> {
        let mut probs = logits.clone();
        self.softmax_heads(&mut probs);
        Array2::from_shape_fn((rows.len(), self.n_vars()), |(b, i)| {
            let t = rows[b][i] as usize;
            if t >= self.cards[i] {
                return f64::NAN;
            }
            -probs[[b, self.head_range(i).start + t]].max(1e-300).ln()
        })
    }
}

/// Numerically stable softmax; `forbidden` entries get probability 0.
pub fn softmax_in_place(v: &mut [f64], forbidden: &[u32]) {
    for &f in forbidden {
        if let Some(x) = v.get_mut(f as usize) {
            *x = f64::NEG_INFINITY;
        }
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        let n = v.len() - forbidden.iter().filter(|f| (**f as usize) < v.len()).count();
        for (k, x) in v.iter_mut().enumerate() {
            *x = if forbidden.contains(&(k as u32)) {
                0.0
            } else {
                1.0 / n.max(1) as f64
            };
        }
        return;
    }
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Mean negative log-likelihood of `rows` with every head in the loss.
pub fn loss_of(net: &Made, rows: &[Vec<u32>], ctx: Option<&Array2<f64>>) -> f64 {
    let r: Vec<&[u32]> = rows.iter().map(|x| x.as_slice()).collect();
    let mask = vec![true; net.n_vars()];
    let masks: Vec<&[bool]> = rows.iter().map(|_| mask.as_slice()).collect();
    let w = vec![1.0; rows.len()];
    let cache = net.forward(&r, ctx.map(|c| c.view()));
    let logits = net.logits(&cache);
    net.nll_and_dlogits(&r, &masks, &w, &logits).0
}

/// Relative error between analytic and central-difference gradients.
pub fn gradient_check(net: &mut Made, rows: &[Vec<u32>], ctx: Option<&Array2<f64>>) -> f64 {
    let r: Vec<&[u32]> = rows.iter().map(|x| x.as_slice()).collect();
    let mask = vec![true; net.n_vars()];
    let masks: Vec<&[bool]> = rows.iter().map(|_| mask.as_slice()).collect();
    let w = vec![1.0; rows.len()];
    let cache = net.forward(&r, ctx.map(|c| c.view()));
    let logits = net.logits(&cache);
    let (_, dl) = net.nll_and_dlogits(&r, &masks, &w, &logits);
    let mut grads = net.params.zeros_like();
    net.backward(&r, ctx.map(|c| c.view()), &cache, &dl, &mut grads);
    let analytic: Vec<f64> = grads.slices().iter().flat_map(|s| s.iter().copied()).collect();
    let n_slices = net.params.slices().len();
    let mut numeric = Vec::new();
    let h = 1e-6;
    for si in 0..n_slices {
        let len = net.params.slices()[si].len();
        for k in 0..len {
            let orig = net.params.slices()[si][k];
            net.params.slices_mut()[si][k] = orig + h;
            let lp = loss_of(net, rows, ctx);
            net.params.slices_mut()[si][k] = orig - h;
            let lm = loss_of(net, rows, ctx);
            net.params.slices_mut()[si][k] = orig;
            numeric.push((lp - lm) / (2.0 * h));
        }
    }
    // Masked weights have zero analytic gradient; finite differences see
    // them as live, so compare only where the mask lets signal through.
    let masks = net.masks().clone();
    let mut live: Vec<bool> = Vec::new();
    for e in &net.params.emb {
        live.extend(std::iter::repeat_n(true, e.len()));
    }
    live.extend(masks.m1.iter().map(|m| *m > 0.0));
    live.extend(masks.m2.iter().map(|m| *m > 0.0));
    live.extend(masks.mo.iter().map(|m| *m > 0.0));
    live.extend(std::iter::repeat_n(true, net.params.u1.len() + net.params.u2.len()));
    live.extend(std::iter::repeat_n(
        true,
        net.params.b1.len() + net.params.b2.len() + net.params.bo.len(),
    ));
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for ((a, n), l) in analytic.iter().zip(&numeric).zip(&live) {
        if *l {
            num += (a - n).powi(2);
            den += a.powi(2).max(n.powi(2));
        }
    }
    (num / den.max(1e-300)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn heads_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Made::new(vec![3, 5, 2], vec![vec![], vec![4], vec![]], 4, 12, 0, &mut rng);
        let rows = vec![vec![0u32, 1, 1], vec![2, 3, 0]];
        let r: Vec<&[u32]> = rows.iter().map(|x| x.as_slice()).collect();
        let cache = net.forward(&r, None);
        for v in 0..3 {
            let p = net.head_probs(&cache, v);
            for row in p.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
            }
        }
        let p = net.head_probs(&cache, 1);
        assert_eq!(p[[0, 4]], 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = Made::new(vec![3, 2, 3], vec![vec![]; 3], 2, 6, 2, &mut rng);
        assert!(net.n_params() <= 200, "{}", net.n_params());
        let rows = vec![vec![0u32, 1, 2], vec![2, 0, 1], vec![1, 1, 0]];
        let ctx = Array2::from_shape_fn((3, 2), |(b, k)| (b as f64 - 1.0) * 0.3 + k as f64 * 0.2);
        let err = gradient_check(&mut net, &rows, Some(&ctx));
        assert!(err < 1e-4, "relative error {err}");
    }
}
