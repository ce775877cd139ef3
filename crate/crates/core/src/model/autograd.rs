//! Minimal reverse-mode automatic differentiation over `f64` matrices.
//!
//! A [`Graph`] records every operation of one forward pass. Calling
//! [`Graph::backward`] walks the tape in reverse and returns the gradient of
//! a scalar node with respect to every parameter that took part.

use std::borrow::Cow;
use std::collections::HashMap;

use ndarray::{s, Array2, ArrayView2, Axis};

pub type Mat = Array2<f64>;

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Which key positions a query may attend to, and the relative-position
/// bucket of every `(query, key)` pair.
#[derive(Debug, Clone)]
pub struct AttentionLayout {
    pub buckets: Vec<usize>,
    pub allowed: Vec<bool>,
    pub n_query: usize,
    pub n_key: usize,
}

impl AttentionLayout {
    /// Symmetric clipped buckets: `clamp(j - i, -max, max) + max`.
    pub fn relative(n_query: usize, n_key: usize, max_distance: usize, causal: bool) -> Self {
        let mut buckets = Vec::with_capacity(n_query * n_key);
        let mut allowed = Vec::with_capacity(n_query * n_key);
        let m = max_distance as i64;
        for i in 0..n_query {
            for j in 0..n_key {
                let d = (j as i64 - i as i64).clamp(-m, m);
                buckets.push((d + m) as usize);
                allowed.push(!causal || j <= i);
            }
        }
        Self {
            buckets,
            allowed,
            n_query,
            n_key,
        }
    }

    fn bucket(&self, i: usize, j: usize) -> usize {
        self.buckets[i * self.n_key + j]
    }

    fn is_allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.n_key + j]
    }
}

enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Var, Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        rel: Var,
        heads: usize,
        layout: AttentionLayout,
        probs: Vec<Mat>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Mat,
        denom: f64,
    },
}

struct Node<'a> {
    value: Cow<'a, Mat>,
    op: Op,
}

/// Tape of one forward computation.
#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    params: HashMap<usize, Var>,
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    fn push(&mut self, value: Cow<'a, Mat>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(Cow::Owned(value), Op::Leaf)
    }

    /// Parameter `index`, borrowed from the caller. Registering the same
    /// index twice returns the same node.
    pub fn param(&mut self, index: usize, value: &'a Mat) -> Var {
        if let Some(v) = self.params.get(&index) {
            return *v;
        }
        let v = self.push(Cow::Borrowed(value), Op::Param(index));
        self.params.insert(index, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(Cow::Owned(out), Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(Cow::Owned(out), Op::Add(a, b))
    }

    /// `a + row` with `row` (1×n) broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.value(a) + self.value(row);
        self.push(Cow::Owned(out), Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(Cow::Owned(out), Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a) * factor;
        self.push(Cow::Owned(out), Op::Scale(a, factor))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push(Cow::Owned(out), Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(Cow::Owned(out), Op::Relu(a))
    }

    /// Smallest |input| over every ReLU on the tape, or infinity if there
    /// is none. Finite differences are only meaningful when this exceeds
    /// the step times the input's sensitivity.
    pub fn min_relu_input(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(self.value(a).iter().fold(f64::INFINITY, |m, x| m.min(x.abs()))),
                _ => None,
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Row-wise layer normalization with gain and bias rows.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = Mat::zeros(xv.raw_dim());
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for (r, row) in xv.rows().into_iter().enumerate() {
            let mean = row.sum() / n;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for (c, x) in row.iter().enumerate() {
                xhat[[r, c]] = (x - mean) * is;
            }
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            Cow::Owned(out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Selects rows of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let out = t.select(Axis(0), ids);
        self.push(
            Cow::Owned(out),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let out =
            ndarray::concatenate(Axis(0), &[self.value(a).view(), self.value(b).view()]).expect("column counts agree");
        self.push(Cow::Owned(out), Op::ConcatRows(a, b))
    }

    /// Multi-head attention with a relative-position table added to keys
    /// and values: per head, `softmax(q (k + r)ᵀ / √d) (v + r)` where `r` is
    /// the table row of each pair's bucket.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, rel: Var, heads: usize, layout: AttentionLayout) -> Var {
        let (qv, kv, vv, rv) = (self.value(q), self.value(k), self.value(v), self.value(rel));
        let d = qv.ncols();
        let dh = d / heads;
        let mut out = Mat::zeros((layout.n_query, d));
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let p = head_forward(
                qv.slice(cols),
                kv.slice(cols),
                vv.slice(cols),
                rv.view(),
                &layout,
                &mut out.slice_mut(cols),
            );
            probs.push(p);
        }
        self.push(
            Cow::Owned(out),
            Op::Attention {
                q,
                k,
                v,
                rel,
                heads,
                layout,
                probs,
            },
        )
    }

    /// Sum over unmasked rows of `-log softmax(logits)[target]`, divided by
    /// `denom`. Produces a 1×1 node.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool], denom: f64) -> Var {
        let lv = self.value(logits);
        let mut probs = Mat::zeros(lv.raw_dim());
        let mut total = 0.0;
        for (r, row) in lv.rows().into_iter().enumerate() {
            let lse = log_sum_exp(row.iter().copied());
            for (c, x) in row.iter().enumerate() {
                probs[[r, c]] = (x - lse).exp();
            }
            if mask[r] {
                total += lse - row[targets[r]];
            }
        }
        let out = Mat::from_elem((1, 1), total / denom);
        self.push(
            Cow::Owned(out),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                denom,
            },
        )
    }

    /// Gradients of the scalar `root` with respect to every parameter
    /// registered in this graph, keyed by parameter index.
    pub fn backward(&self, root: Var) -> HashMap<usize, Mat> {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Mat::ones(self.value(root).raw_dim()));
        let mut out = HashMap::new();
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => {
                    out.insert(*p, g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, f) => accumulate(&mut grads, *a, g * *f),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let ga = &g * &y.mapv(|s| s * (1.0 - s));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    ga.zip_mut_with(x, |gi, xi| {
                        if *xi <= 0.0 {
                            *gi = 0.0
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gamma);
                    let dgamma = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * gv;
                    let n = xhat.ncols() as f64;
                    let mut dx = Mat::zeros(xhat.raw_dim());
                    for r in 0..xhat.nrows() {
                        let dr = dxhat.row(r);
                        let xr = xhat.row(r);
                        let sum_d = dr.sum();
                        let sum_dx = dr.dot(&xr);
                        for c in 0..xhat.ncols() {
                            dx[[r, c]] = inv_std[r] / n * (n * dr[c] - sum_d - xr[c] * sum_dx);
                        }
                    }
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Gather { table, ids } => {
                    let mut gt = Mat::zeros(self.value(*table).raw_dim());
                    for (r, id) in ids.iter().enumerate() {
                        let mut row = gt.row_mut(*id);
                        row += &g.row(r);
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::ConcatRows(a, b) => {
                    let na = self.value(*a).nrows();
                    accumulate(&mut grads, *a, g.slice(s![..na, ..]).to_owned());
                    accumulate(&mut grads, *b, g.slice(s![na.., ..]).to_owned());
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    rel,
                    heads,
                    layout,
                    probs,
                } => {
                    let (qv, kv, vv, rv) = (self.value(*q), self.value(*k), self.value(*v), self.value(*rel));
                    let d = qv.ncols();
                    let dh = d / heads;
                    let mut dq = Mat::zeros(qv.raw_dim());
                    let mut dk = Mat::zeros(kv.raw_dim());
                    let mut dv = Mat::zeros(vv.raw_dim());
                    let mut dr = Mat::zeros(rv.raw_dim());
                    for (h, p) in probs.iter().enumerate() {
                        let cols = s![.., h * dh..(h + 1) * dh];
                        head_backward(
                            HeadInputs {
                                q: qv.slice(cols),
                                k: kv.slice(cols),
                                v: vv.slice(cols),
                                rel: rv.view(),
                                probs: p,
                                layout,
                                dout: g.slice(cols),
                            },
                            &mut dq.slice_mut(cols),
                            &mut dk.slice_mut(cols),
                            &mut dv.slice_mut(cols),
                            &mut dr,
                        );
                    }
                    accumulate(&mut grads, *q, dq);
                    accumulate(&mut grads, *k, dk);
                    accumulate(&mut grads, *v, dv);
                    accumulate(&mut grads, *rel, dr);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    mask,
                    probs,
                    denom,
                } => {
                    let scale = g[[0, 0]] / denom;
                    let mut gl = Mat::zeros(probs.raw_dim());
                    for r in 0..probs.nrows() {
                        if !mask[r] {
                            continue;
                        }
                        for c in 0..probs.ncols() {
                            gl[[r, c]] = probs[[r, c]] * scale;
                        }
                        gl[[r, targets[r]]] -= scale;
                    }
                    accumulate(&mut grads, *logits, gl);
                }
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// One head of relative attention; writes into `out` and returns the
/// attention probabilities (`n_query × n_key`, zero where masked).
fn head_forward(
    q: ArrayView2<'_, f64>,
    k: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    rel: ArrayView2<'_, f64>,
    layout: &AttentionLayout,
    out: &mut ndarray::ArrayViewMut2<'_, f64>,
) -> Mat {
    let dh = q.ncols();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut probs = Mat::zeros((layout.n_query, layout.n_key));
    for i in 0..layout.n_query {
        let qi = q.row(i);
        let mut max = f64::NEG_INFINITY;
        for j in 0..layout.n_key {
            if !layout.is_allowed(i, j) {
                continue;
            }
            let r = rel.row(layout.bucket(i, j));
            let mut sc = 0.0;
            for c in 0..dh {
                sc += qi[c] * (k[[j, c]] + r[c]);
            }
            sc *= scale;
            probs[[i, j]] = sc;
            max = max.max(sc);
        }
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut z = 0.0;
        for j in 0..layout.n_key {
            if layout.is_allowed(i, j) {
                let e = (probs[[i, j]] - max).exp();
                probs[[i, j]] = e;
                z += e;
            }
        }
        for j in 0..layout.n_key {
            if layout.is_allowed(i, j) {
                let a = probs[[i, j]] / z;
                probs[[i, j]] = a;
                let r = rel.row(layout.bucket(i, j));
                for c in 0..dh {
                    out[[i, c]] += a * (v[[j, c]] + r[c]);
                }
            }
        }
    }
    probs
}

struct HeadInputs<'v> {
    q: ArrayView2<'v, f64>,
    k: ArrayView2<'v, f64>,
    v: ArrayView2<'v, f64>,
    rel: ArrayView2<'v, f64>,
    probs: &'v Mat,
    layout: &'v AttentionLayout,
    dout: ArrayView2<'v, f64>,
}

fn head_backward(
    x: HeadInputs<'_>,
    dq: &mut ndarray::ArrayViewMut2<'_, f64>,
    dk: &mut ndarray::ArrayViewMut2<'_, f64>,
    dv: &mut ndarray::ArrayViewMut2<'_, f64>,
    dr: &mut Mat,
) {
    let dh = x.q.ncols();
    let scale = 1.0 / (dh as f64).sqrt();
    let layout = x.layout;
    let mut da = vec![0.0; layout.n_key];
    for i in 0..layout.n_query {
        let go = x.dout.row(i);
        let mut dot_sum = 0.0;
        for j in 0..layout.n_key {
            if !layout.is_allowed(i, j) {
                continue;
            }
            let a = x.probs[[i, j]];
            let b = layout.bucket(i, j);
            let mut s = 0.0;
            for c in 0..dh {
                let val = x.v[[j, c]] + x.rel[[b, c]];
                s += go[c] * val;
                dv[[j, c]] += a * go[c];
                dr[[b, c]] += a * go[c];
            }
            da[j] = s;
            dot_sum += a * s;
        }
        for j in 0..layout.n_key {
            if !layout.is_allowed(i, j) {
                continue;
            }
            let ds = x.probs[[i, j]] * (da[j] - dot_sum) * scale;
            if ds == 0.0 {
                continue;
            }
            let b = layout.bucket(i, j);
            for c in 0..dh {
                dq[[i, c]] += ds * (x.k[[j, c]] + x.rel[[b, c]]);
                dk[[j, c]] += ds * x.q[[i, c]];
                dr[[b, c]] += ds * x.q[[i, c]];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fd_check<F>(x0: &Mat, f: F, analytic: &Mat)
    where
        F: Fn(&Mat) -> f64,
    {
        let h = 1e-5;
        for idx in 0..x0.len() {
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            xm.as_slice_mut().unwrap()[idx] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            let a = analytic.as_slice().unwrap()[idx];
            assert!((fd - a).abs() < 1e-6 * (1.0 + a.abs()), "idx {idx}: fd {fd} vs {a}");
        }
    }

    #[test]
    fn layer_norm_gradient() {
        let x0 = array![[0.3, -1.2, 2.0, 0.5], [1.0, 1.5, -0.7, 0.1]];
        let gamma = array![[1.1, 0.9, -0.4, 2.0]];
        let beta = array![[0.1, 0.0, -0.2, 0.3]];
        let w = array![[0.5, -1.0, 2.0, 0.3], [1.5, 0.2, -0.6, 1.0]];
        let loss = |x: &Mat| {
            let mut g = Graph::new();
            let xv = g.param(0, x);
            let gv = g.param(1, &gamma);
            let bv = g.param(2, &beta);
            let wv = g.constant(w.clone());
            let y = g.layer_norm(xv, gv, bv);
            let y = g.mul(y, wv);
            let y = g.sigmoid(y);
            let ones = g.constant(Mat::ones((4, 1)));
            let s = g.matmul(y, ones);
            let t = g.constant(Mat::ones((1, 2)));
            let s = g.matmul(t, s);
            (g.scalar(s), g.backward(s).remove(&0).unwrap())
        };
        let (_, grad) = loss(&x0);
        fd_check(&x0, |x| loss(x).0, &grad);
    }

    #[test]
    fn attention_gradient_all_inputs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut rand_mat = |r, c| Mat::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0));
        let q0 = rand_mat(3, 4);
        let k0 = rand_mat(5, 4);
        let v0 = rand_mat(5, 4);
        let r0 = rand_mat(5, 2);
        let w = rand_mat(3, 4);
        let layout = AttentionLayout::relative(3, 5, 2, false);
        let run = |q: &Mat, k: &Mat, v: &Mat, r: &Mat| {
            let mut g = Graph::new();
            let (qv, kv, vv, rv) = (g.param(0, q), g.param(1, k), g.param(2, v), g.param(3, r));
            let o = g.attention(qv, kv, vv, rv, 2, layout.clone());
            let wv = g.constant(w.clone());
            let o = g.mul(o, wv);
            let o = g.sigmoid(o);
            let ones = g.constant(Mat::ones((4, 1)));
            let o = g.matmul(o, ones);
            let t = g.constant(Mat::ones((1, 3)));
            let o = g.matmul(t, o);
            (g.scalar(o), g.backward(o))
        };
        let (_, grads) = run(&q0, &k0, &v0, &r0);
        fd_check(&q0, |q| run(q, &k0, &v0, &r0).0, &grads[&0]);
        fd_check(&k0, |k| run(&q0, k, &v0, &r0).0, &grads[&1]);
        fd_check(&v0, |v| run(&q0, &k0, v, &r0).0, &grads[&2]);
        fd_check(&r0, |r| run(&q0, &k0, &v0, r).0, &grads[&3]);
    }

    #[test]
    fn causal_layout_masks_future() {
        let l = AttentionLayout::relative(3, 3, 1, true);
        assert!(l.is_allowed(1, 0) && l.is_allowed(1, 1) && !l.is_allowed(1, 2));
        assert_eq!(l.bucket(0, 2), 2);
        assert_eq!(l.bucket(2, 0), 0);
        assert_eq!(l.bucket(1, 1), 1);
    }

    #[test]
    fn cross_entropy_gradient() {
        let x0 = array![[0.2, -0.4, 1.0], [0.0, 0.3, -2.0], [1.0, 1.0, 1.0]];
        let run = |x: &Mat| {
            let mut g = Graph::new();
            let xv = g.param(0, x);
            let ce = g.cross_entropy(xv, &[2, 0, 1], &[true, true, false], 2.0);
            (g.scalar(ce), g.backward(ce).remove(&0).unwrap())
        };
        let (_, grad) = run(&x0);
        assert!(grad.row(2).iter().all(|v| *v == 0.0));
        fd_check(&x0, |x| run(x).0, &grad);
    }

    #[test]
    fn gather_and_concat_gradient() {
        let t0 = array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]];
        let run = |t: &Mat| {
            let mut g = Graph::new();
            let tv = g.param(0, t);
            let a = g.gather(tv, &[2, 0, 2]);
            let b = g.gather(tv, &[1]);
            let c = g.concat_rows(a, b);
            let c = g.sigmoid(c);
            let w = g.constant(array![[1.0], [-2.0]]);
            let c = g.matmul(c, w);
            let s = g.constant(Mat::ones((1, 4)));
            let c = g.matmul(s, c);
            (g.scalar(c), g.backward(c).remove(&0).unwrap())
        };
        let (_, grad) = run(&t0);
        fd_check(&t0, |t| run(t).0, &grad);
    }
}
