//! Tape-based reverse-mode differentiation over [`Mat`] values.
//!
//! A [`Graph`] is built eagerly: every op computes its value on insertion and
//! records how to push gradients back to its inputs. Leaves may borrow their
//! value (frozen parameters) so building a graph never copies model weights.

use std::borrow::Cow;

use crate::tensor::{gemm_acc, Mat, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    MatMul { a: Var, b: Var, tb: bool },
    Add { a: Var, b: Var },
    AddRow { a: Var, bias: Var },
    Scale { a: Var, s: F },
    Gelu { a: Var },
    LayerNorm { a: Var, gain: Var, bias: Var, xhat: Mat<F>, inv_std: Vec<F> },
    Softmax { a: Var },
    ConcatRows { parts: Vec<Var> },
    ConcatCols { parts: Vec<Var> },
    SliceCols { a: Var, start: usize },
    Gather { table: Var, ids: Vec<usize> },
    LogProbPick { logits: Var, targets: Vec<usize>, probs: Mat<F> },
}

struct Node<'a, F: Real> {
    value: Cow<'a, Mat<F>>,
    op: Op<F>,
    needs_grad: bool,
}

pub struct Graph<'a, F: Real> {
    nodes: Vec<Node<'a, F>>,
}

impl<F: Real> Default for Graph<'_, F> {
    fn default() -> Self {
        Self::new()
    }
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<'a, F: Real> Graph<'a, F> {
    pub fn new() -> Self {
        Self { nodes: Vec::with_capacity(256) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Mat<F>>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Mat<F> {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Mat<F>, requires_grad: bool) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, requires_grad)
    }

    pub fn leaf_ref(&mut self, value: &'a Mat<F>, requires_grad: bool) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, requires_grad)
    }

    /// `a · b`, or `a · bᵀ` when `tb`.
    pub fn matmul(&mut self, a: Var, b: Var, tb: bool) -> Var {
        let out = self.value(a).matmul(self.value(b), tb);
        let ng = self.ng(a) || self.ng(b);
        self.push(Cow::Owned(out), Op::MatMul { a, b, tb }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(Cow::Owned(out), Op::Add { a, b }, ng)
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let mut out = self.value(a).clone();
        let b = self.value(bias);
        assert_eq!(b.shape(), (1, out.cols()), "bias shape");
        for i in 0..out.rows() {
            for (x, y) in out.row_mut(i).iter_mut().zip(b.data()) {
                *x += *y;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        self.push(Cow::Owned(out), Op::AddRow { a, bias }, ng)
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let out = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(Cow::Owned(out), Op::Scale { a, s }, ng)
    }

    /// Tanh-approximated GELU (smooth everywhere, so finite differences apply).
    pub fn gelu(&mut self, a: Var) -> Var {
        let c = F::lit(GELU_C);
        let k = F::lit(GELU_A);
        let half = F::lit(0.5);
        let out = self.value(a).map(|x| half * x * (F::one() + (c * (x + k * x * x * x)).tanh()));
        let ng = self.ng(a);
        self.push(Cow::Owned(out), Op::Gelu { a }, ng)
    }

    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var) -> Var {
        let x = self.value(a);
        let (rows, cols) = x.shape();
        let g = self.value(gain);
        let b = self.value(bias);
        let n = F::from_usize(cols).unwrap();
        let eps = F::lit(LN_EPS);
        let mut xhat = Mat::zeros(rows, cols);
        let mut out = Mat::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for i in 0..rows {
            let r = x.row(i);
            let mean = r.iter().copied().sum::<F>() / n;
            let var = r.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let inv = F::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for j in 0..cols {
                let h = (r[j] - mean) * inv;
                xhat.set(i, j, h);
                out.set(i, j, h * g.data()[j] + b.data()[j]);
            }
        }
        let ng = self.ng(a) || self.ng(gain) || self.ng(bias);
        self.push(Cow::Owned(out), Op::LayerNorm { a, gain, bias, xhat, inv_std }, ng)
    }

    /// Row-wise softmax. With `causal`, entry `(i, j)` is masked for `j > i`.
    pub fn softmax(&mut self, a: Var, causal: bool) -> Var {
        let x = self.value(a);
        let (rows, cols) = x.shape();
        let mut out = Mat::zeros(rows, cols);
        for i in 0..rows {
            let limit = if causal { (i + 1).min(cols) } else { cols };
            let r = &x.row(i)[..limit];
            let mx = r.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
            let o = out.row_mut(i);
            let mut sum = F::zero();
            for j in 0..limit {
                let e = (r[j] - mx).exp();
                o[j] = e;
                sum += e;
            }
            for v in &mut o[..limit] {
                *v = *v / sum;
            }
        }
        let ng = self.ng(a);
        self.push(Cow::Owned(out), Op::Softmax { a }, ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let mats: Vec<&Mat<F>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Mat::stack_rows(&mats, cols);
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Cow::Owned(out), Op::ConcatRows { parts: parts.to_vec() }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows(), rows, "concat_cols row mismatch");
            for i in 0..rows {
                out.row_mut(i)[off..off + m.cols()].copy_from_slice(m.row(i));
            }
            off += m.cols();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Cow::Owned(out), Op::ConcatCols { parts: parts.to_vec() }, ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        let out = Mat::from_fn(x.rows(), len, |i, j| x.get(i, start + j));
        let ng = self.ng(a);
        self.push(Cow::Owned(out), Op::SliceCols { a, start }, ng)
    }

    /// Row lookup: output row `t` is `table[ids[t]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Mat::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        let ng = self.ng(table);
        self.push(Cow::Owned(out), Op::Gather { table, ids: ids.to_vec() }, ng)
    }

    /// `1 x 1` sum over rows of `log softmax(logits[t])[targets[t]]`.
    pub fn log_prob_pick(&mut self, logits: Var, targets: &[usize]) -> Var {
        let x = self.value(logits);
        assert_eq!(x.rows(), targets.len(), "one target per logit row");
        let mut probs = Mat::zeros(x.rows(), x.cols());
        let mut total = F::zero();
        for (i, &t) in targets.iter().enumerate() {
            let r = x.row(i);
            let mx = r.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
            let sum: F = r.iter().map(|&v| (v - mx).exp()).sum();
            let lse = mx + sum.ln();
            for (p, &v) in probs.row_mut(i).iter_mut().zip(r) {
                *p = (v - lse).exp();
            }
            total += r[t] - lse;
        }
        let ng = self.ng(logits);
        self.push(
            Cow::Owned(Mat::from_vec(1, 1, vec![total])),
            Op::LogProbPick { logits, targets: targets.to_vec(), probs },
            ng,
        )
    }

    /// Gradients of the scalar `root` with respect to every node that needs
    /// one. `seed` scales the root gradient (use `-1` for a negated loss).
    pub fn backward(&self, root: Var, seed: F) -> Grads<F> {
        assert_eq!(self.value(root).shape(), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Mat<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Mat::from_vec(1, 1, vec![seed]));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.push_back(&node.op, idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn acc(&self, grads: &mut [Option<Mat<F>>], v: Var, g: Mat<F>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn acc_with(&self, grads: &mut [Option<Mat<F>>], v: Var, f: impl FnOnce(&mut Mat<F>)) {
        if !self.ng(v) {
            return;
        }
        let shape = self.value(v).shape();
        let slot = grads[v.0].get_or_insert_with(|| Mat::zeros(shape.0, shape.1));
        f(slot);
    }

    fn push_back(&self, op: &Op<F>, idx: usize, g: &Mat<F>, grads: &mut [Option<Mat<F>>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul { a, b, tb } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                // C = A·B  => dA = dC·Bᵀ, dB = Aᵀ·dC
                // C = A·Bᵀ => dA = dC·B,  dB = dCᵀ·A
                self.acc_with(grads, *a, |ga| gemm_acc(g, false, bv, !*tb, ga, F::one(), F::one()));
                if *tb {
                    self.acc_with(grads, *b, |gb| gemm_acc(g, true, av, false, gb, F::one(), F::one()));
                } else {
                    self.acc_with(grads, *b, |gb| gemm_acc(av, true, g, false, gb, F::one(), F::one()));
                }
            }
            Op::Add { a, b } => {
                self.acc_with(grads, *a, |ga| ga.add_assign(g));
                self.acc_with(grads, *b, |gb| gb.add_assign(g));
            }
            Op::AddRow { a, bias } => {
                self.acc_with(grads, *a, |ga| ga.add_assign(g));
                self.acc_with(grads, *bias, |gb| {
                    for i in 0..g.rows() {
                        for (x, y) in gb.data_mut().iter_mut().zip(g.row(i)) {
                            *x += *y;
                        }
                    }
                });
            }
            Op::Scale { a, s } => {
                let s = *s;
                self.acc_with(grads, *a, |ga| {
                    for (x, y) in ga.data_mut().iter_mut().zip(g.data()) {
                        *x += *y * s;
                    }
                });
            }
            Op::Gelu { a } => {
                let x = self.value(*a);
                let c = F::lit(GELU_C);
                let k = F::lit(GELU_A);
                let half = F::lit(0.5);
                let three = F::lit(3.0);
                self.acc_with(grads, *a, |ga| {
                    for ((o, &xv), &gv) in ga.data_mut().iter_mut().zip(x.data()).zip(g.data()) {
                        let t = (c * (xv + k * xv * xv * xv)).tanh();
                        let d = half * (F::one() + t)
                            + half * xv * (F::one() - t * t) * c * (F::one() + three * k * xv * xv);
                        *o += gv * d;
                    }
                });
            }
            Op::LayerNorm { a, gain, bias, xhat, inv_std } => {
                let gv = self.value(*gain);
                let cols = xhat.cols();
                let n = F::from_usize(cols).unwrap();
                self.acc_with(grads, *gain, |gg| {
                    for i in 0..g.rows() {
                        for j in 0..cols {
                            gg.data_mut()[j] += g.get(i, j) * xhat.get(i, j);
                        }
                    }
                });
                self.acc_with(grads, *bias, |gb| {
                    for i in 0..g.rows() {
                        for (x, y) in gb.data_mut().iter_mut().zip(g.row(i)) {
                            *x += *y;
                        }
                    }
                });
                self.acc_with(grads, *a, |ga| {
                    let mut dxhat = vec![F::zero(); cols];
                    for i in 0..g.rows() {
                        let mut mean_d = F::zero();
                        let mut mean_dx = F::zero();
                        for j in 0..cols {
                            dxhat[j] = g.get(i, j) * gv.data()[j];
                            mean_d += dxhat[j];
                            mean_dx += dxhat[j] * xhat.get(i, j);
                        }
                        mean_d = mean_d / n;
                        mean_dx = mean_dx / n;
                        let inv = inv_std[i];
                        let row = ga.row_mut(i);
                        for j in 0..cols {
                            row[j] += inv * (dxhat[j] - mean_d - xhat.get(i, j) * mean_dx);
                        }
                    }
                });
            }
            Op::Softmax { a } => {
                let y = self.nodes[idx].value.as_ref();
                self.acc_with(grads, *a, |ga| {
                    for i in 0..y.rows() {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let dot: F = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for ((o, &p), &q) in ga.row_mut(i).iter_mut().zip(yr).zip(gr) {
                            *o += p * (q - dot);
                        }
                    }
                });
            }
            Op::ConcatRows { parts } => {
                let mut off = 0;
                for &p in parts {
                    let r = self.value(p).rows();
                    if self.ng(p) {
                        self.acc(grads, p, g.slice_rows(off, off + r));
                    }
                    off += r;
                }
            }
            Op::ConcatCols { parts } => {
                let mut off = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    self.acc_with(grads, p, |gp| {
                        for i in 0..g.rows() {
                            for (x, y) in gp.row_mut(i).iter_mut().zip(&g.row(i)[off..off + c]) {
                                *x += *y;
                            }
                        }
                    });
                    off += c;
                }
            }
            Op::SliceCols { a, start } => {
                let start = *start;
                self.acc_with(grads, *a, |ga| {
                    for i in 0..g.rows() {
                        for (x, y) in ga.row_mut(i)[start..start + g.cols()].iter_mut().zip(g.row(i)) {
                            *x += *y;
                        }
                    }
                });
            }
            Op::Gather { table, ids } => {
                self.acc_with(grads, *table, |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        for (x, y) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *x += *y;
                        }
                    }
                });
            }
            Op::LogProbPick { logits, targets, probs } => {
                let s = g.get(0, 0);
                self.acc_with(grads, *logits, |gl| {
                    for (i, &t) in targets.iter().enumerate() {
                        for (o, &p) in gl.row_mut(i).iter_mut().zip(probs.row(i)) {
                            *o -= s * p;
                        }
                        gl.row_mut(i)[t] += s;
                    }
                });
            }
        }
    }
}

pub struct Grads<F> {
    grads: Vec<Option<Mat<F>>>,
}

impl<F: Real> Grads<F> {
    pub fn get(&self, v: Var) -> Option<&Mat<F>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Mat<F>> {
        self.grads[v.0].take()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central-difference check of d(root)/d(leaf) for a graph builder.
    fn check(build: impl Fn(&mut Graph<'_, f64>, Var) -> Var, x: Mat<f64>) {
        let mut g = Graph::new();
        let v = g.leaf(x.clone(), true);
        let root = build(&mut g, v);
        let grads = g.backward(root, 1.0);
        let analytic = grads.get(v).cloned().unwrap_or_else(|| Mat::zeros(x.rows(), x.cols()));
        let h = 1e-6;
        for k in 0..x.data().len() {
            let eval = |delta: f64| {
                let mut xp = x.clone();
                xp.data_mut()[k] += delta;
                let mut g = Graph::new();
                let v = g.leaf(xp, false);
                let r = build(&mut g, v);
                g.value(r).get(0, 0)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[k];
            assert!((a - numeric).abs() < 1e-6 * (1.0 + numeric.abs()), "elem {k}: {a} vs {numeric}");
        }
    }

    fn sample(rows: usize, cols: usize, seed: f64) -> Mat<f64> {
        Mat::from_fn(rows, cols, |i, j| ((i * 7 + j * 3) as f64 * 0.37 + seed).sin())
    }

    #[test]
    fn layer_norm_softmax_gelu_chain() {
        let gain = sample(1, 4, 0.3);
        let bias = sample(1, 4, 0.9);
        let w = sample(4, 5, 0.1);
        check(
            |g, x| {
                let ga = g.leaf(gain.clone(), false);
                let bi = g.leaf(bias.clone(), false);
                let wv = g.leaf(w.clone(), false);
                let n = g.layer_norm(x, ga, bi);
                let h = g.matmul(n, wv, false);
                let h = g.gelu(h);
                let s = g.softmax(h, true);
                let att = g.matmul(s, wv, true);
                let att = g.add(att, x);
                g.log_prob_pick(att, &[0, 1, 2])
            },
            sample(3, 4, 0.0),
        );
    }

    #[test]
    fn concat_slice_gather_chain() {
        check(
            |g, x| {
                let a = g.slice_cols(x, 1, 2);
                let b = g.slice_cols(x, 0, 1);
                let c = g.concat_cols(&[a, b]);
                let r = g.gather(x, &[2, 0, 2]);
                let r = g.slice_cols(r, 0, 3);
                let both = g.concat_rows(&[c, r]);
                let s = g.scale(both, 1.7);
                let bias = g.slice_cols(x, 1, 3);
                let bias = g.gather(bias, &[1]);
                let s = g.add_row(s, bias);
                let s2 = g.add(s, s);
                g.log_prob_pick(s2, &[0, 2, 1, 1, 0, 2])
            },
            sample(3, 4, 1.0),
        );
    }

    #[test]
    fn frozen_leaves_receive_no_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(sample(2, 3, 0.0), false);
        let b = g.leaf(sample(3, 2, 0.5), true);
        let c = g.matmul(a, b, false);
        let r = g.log_prob_pick(c, &[0, 1]);
        let grads = g.backward(r, 1.0);
        assert!(grads.get(a).is_none());
        assert!(grads.get(b).is_some());
    }
}
