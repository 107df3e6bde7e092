//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is its own topological
//! order: every input id is smaller than the id of the node that consumes it.
//! Shape errors while building a graph are programming errors and panic; data
//! errors (non-finite logits, non-finite gradients) surface as [`Error`].

use super::array::Array;
use super::kernels::{self, AttnShape};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Linear { x: Var, w: Var, b: Var },
    Gather { table: Var, ids: Vec<usize> },
    LayerNorm { x: Var, gamma: Var, beta: Var, means: Vec<T>, rstds: Vec<T> },
    Gelu(Var),
    Attention { qkv: Var, shape: AttnShape, probs: Vec<T> },
    LogSoftmax(Var),
    Pick { x: Var, idx: Vec<usize> },
    Log1mExp { x: Var, slopes: Vec<T> },
    WeightedSum { x: Var, weights: Vec<T> },
    Dropout { x: Var, mask: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Array<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_ran: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), backward_ran: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf (gradient is recorded).
    pub fn param(&mut self, value: Array<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf (no gradient).
    pub fn constant(&mut self, value: Array<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array<T> {
        &self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "add: shape mismatch");
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let out = Array::new(x.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mul: shape mismatch");
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let out = Array::new(x.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|&p| p * c).collect();
        let out = Array::new(x.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        self.push(Array::scalar(s), Op::Sum(a), &[a])
    }

    /// `[m, k] @ [k, n]`; the left operand may have any leading shape.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, w) = (self.value(a), self.value(b));
        assert_eq!(w.shape().len(), 2, "matmul: rhs must be 2-d");
        let (k, n) = (w.shape()[0], w.shape()[1]);
        assert_eq!(x.cols(), k, "matmul: inner dimension mismatch");
        let m = x.rows();
        let data = kernels::linear(x.data(), w.data(), None, m, k, n);
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        self.push(Array::new(shape, data).expect("matmul shape"), Op::MatMul(a, b), &[a, b])
    }

    pub fn add_bias(&mut self, a: Var, b: Var) -> Var {
        let (x, bias) = (self.value(a), self.value(b));
        assert_eq!(bias.len(), x.cols(), "add_bias: width mismatch");
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(bias.len()) {
            for (v, &c) in row.iter_mut().zip(bias.data()) {
                *v += c;
            }
        }
        let out = Array::new(x.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::AddBias(a, b), &[a, b])
    }

    /// Fused `x @ w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        assert_eq!(wv.shape().len(), 2, "linear: weight must be 2-d");
        let (k, n) = (wv.shape()[0], wv.shape()[1]);
        assert_eq!(xv.cols(), k, "linear: inner dimension mismatch");
        assert_eq!(bv.len(), n, "linear: bias width mismatch");
        let m = xv.rows();
        let data = kernels::linear(xv.data(), wv.data(), Some(bv.data()), m, k, n);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        self.push(Array::new(shape, data).expect("linear shape"), Op::Linear { x, w, b }, &[x, w, b])
    }

    /// Row lookup: `table[ids[i], :]` stacked into `[ids.len(), d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        assert_eq!(t.shape().len(), 2, "gather: table must be 2-d");
        let (rows, d) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            assert!(i < rows, "gather: id {i} out of range {rows}");
            data.extend_from_slice(t.row(i));
        }
        let out = Array::new(vec![ids.len(), d], data).expect("gather shape");
        self.push(out, Op::Gather { table, ids: ids.to_vec() }, &[table])
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (xv, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        let cols = xv.cols();
        assert_eq!(g.len(), cols, "layer_norm: gamma width");
        assert_eq!(b.len(), cols, "layer_norm: beta width");
        let (data, means, rstds) = kernels::layer_norm(xv.data(), g.data(), b.data(), cols);
        let out = Array::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::LayerNorm { x, gamma, beta, means, rstds }, &[x, gamma, beta])
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| kernels::gelu(v)).collect();
        let out = Array::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Gelu(x), &[x])
    }

    /// Causal self-attention over a packed `[batch * seq, 3 * dim]` projection.
    pub fn causal_attention(&mut self, qkv: Var, shape: AttnShape) -> Var {
        let v = self.value(qkv);
        assert_eq!(v.cols(), 3 * shape.dim, "attention: packed width");
        assert_eq!(v.rows(), shape.batch * shape.seq, "attention: row count");
        assert_eq!(shape.dim % shape.heads, 0, "attention: heads must divide dim");
        let (data, probs) = kernels::causal_attention(v.data(), shape);
        let out = Array::new(vec![shape.batch * shape.seq, shape.dim], data).expect("attention shape");
        self.push(out, Op::Attention { qkv, shape, probs }, &[qkv])
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let out = super::array::log_softmax(self.value(x))?;
        Ok(self.push(out, Op::LogSoftmax(x), &[x]))
    }

    /// Selects `x[row, col]` for each pair into a flat vector.
    pub fn pick(&mut self, x: Var, pairs: &[(usize, usize)]) -> Var {
        let xv = self.value(x);
        let cols = xv.cols();
        let idx: Vec<usize> = pairs
            .iter()
            .map(|&(r, c)| {
                assert!(r < xv.rows() && c < cols, "pick: ({r}, {c}) out of range");
                r * cols + c
            })
            .collect();
        let data = idx.iter().map(|&i| xv.data()[i]).collect();
        self.push(Array::from_vec(data), Op::Pick { x, idx }, &[x])
    }

    /// Elementwise `ln(max(1 - exp(x), eps))`; expects `x` to be log-probabilities.
    pub fn log1m_exp(&mut self, x: Var, eps: T) -> Var {
        let xv = self.value(x);
        let (data, slopes): (Vec<T>, Vec<T>) = xv.data().iter().map(|&v| kernels::log1m_exp(v, eps)).unzip();
        let out = Array::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Log1mExp { x, slopes }, &[x])
    }

    /// `sum_i weights[i] * x[i]` as a scalar.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<T>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), weights.len(), "weighted_sum: length mismatch");
        let s = xv.data().iter().zip(&weights).map(|(&a, &w)| a * w).sum::<T>();
        self.push(Array::scalar(s), Op::WeightedSum { x, weights }, &[x])
    }

    /// Multiplies by a precomputed (already rescaled) keep-mask.
    pub fn dropout(&mut self, x: Var, mask: Vec<T>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), mask.len(), "dropout: mask length");
        let data = xv.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let out = Array::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Dropout { x, mask }, &[x])
    }

    /// Back-propagates from a scalar root. May run once per graph.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.backward_ran {
            return Err(Error::BackwardAlreadyRan);
        }
        let rv = &self.nodes[root.0].value;
        if rv.len() != 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        self.backward_ran = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[root.0] = Some(vec![T::one()]);
        for id in (0..=root.0).rev() {
            let Some(g) = self.grads[id].take() else { continue };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { node: id });
            }
            if self.nodes[id].requires_grad {
                self.propagate(id, &g);
            }
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    /// Gradient of the last `backward` root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as an array shaped like the node's value (zeros when unreached).
    pub fn grad_array(&self, v: Var) -> Array<T> {
        let shape = self.value(v).shape().to_vec();
        match self.grad(v) {
            Some(g) => Array::new(shape, g.to_vec()).expect("grad shape"),
            None => Array::zeros(&shape),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [T])) {
        if !self.wants(v) {
            return;
        }
        let n = self.nodes[v.0].value.len();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
        f(slot);
    }

    fn propagate(&mut self, id: usize, g: &[T]) {
        // Take the op out to release the borrow on `self.nodes`; restored below.
        let op = std::mem::replace(&mut self.nodes[id].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(*a, |d| add_into(d, g));
                self.accumulate(*b, |d| add_into(d, g));
            }
            Op::Mul(a, b) => {
                let av = self.nodes[a.0].value.data().to_vec();
                let bv = self.nodes[b.0].value.data().to_vec();
                self.accumulate(*a, |d| {
                    for ((d, &gi), &y) in d.iter_mut().zip(g).zip(&bv) {
                        *d += gi * y;
                    }
                });
                self.accumulate(*b, |d| {
                    for ((d, &gi), &x) in d.iter_mut().zip(g).zip(&av) {
                        *d += gi * x;
                    }
                });
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(*a, |d| {
                    for (d, &gi) in d.iter_mut().zip(g) {
                        *d += gi * c;
                    }
                });
            }
            Op::Sum(a) => {
                let g0 = g[0];
                self.accumulate(*a, |d| d.iter_mut().for_each(|d| *d += g0));
            }
            Op::MatMul(a, b) => self.matmul_backward(*a, *b, None, g),
            Op::Linear { x, w, b } => self.matmul_backward(*x, *w, Some(*b), g),
            Op::AddBias(a, b) => {
                self.accumulate(*a, |d| add_into(d, g));
                let n = self.nodes[b.0].value.len();
                self.accumulate(*b, |d| {
                    for row in g.chunks(n) {
                        add_into(d, row);
                    }
                });
            }
            Op::Gather { table, ids } => {
                let d = self.nodes[table.0].value.cols();
                self.accumulate(*table, |dt| {
                    for (r, &i) in ids.iter().enumerate() {
                        add_into(&mut dt[i * d..(i + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, means, rstds } => {
                let cols = self.nodes[x.0].value.cols();
                let mut dx = self.wants(*x).then(|| vec![T::zero(); g.len()]);
                let mut dg = self.wants(*gamma).then(|| vec![T::zero(); cols]);
                let mut db = self.wants(*beta).then(|| vec![T::zero(); cols]);
                kernels::layer_norm_backward(
                    self.nodes[x.0].value.data(),
                    self.nodes[gamma.0].value.data(),
                    means,
                    rstds,
                    g,
                    cols,
                    dx.as_deref_mut(),
                    dg.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    self.accumulate(*x, |d| add_into(d, &dx));
                }
                if let Some(dg) = dg {
                    self.accumulate(*gamma, |d| add_into(d, &dg));
                }
                if let Some(db) = db {
                    self.accumulate(*beta, |d| add_into(d, &db));
                }
            }
            Op::Gelu(x) => {
                let xv = self.nodes[x.0].value.data().to_vec();
                self.accumulate(*x, |d| {
                    for ((d, &gi), &v) in d.iter_mut().zip(g).zip(&xv) {
                        *d += gi * kernels::gelu_grad(v);
                    }
                });
            }
            Op::Attention { qkv, shape, probs } => {
                if self.wants(*qkv) {
                    let mut dq = vec![T::zero(); self.nodes[qkv.0].value.len()];
                    kernels::causal_attention_backward(self.nodes[qkv.0].value.data(), probs, g, *shape, &mut dq);
                    self.accumulate(*qkv, |d| add_into(d, &dq));
                }
            }
            Op::LogSoftmax(x) => {
                // dx = g - softmax * sum(g), row-wise
                let out = self.nodes[id].value.data().to_vec();
                let cols = self.nodes[id].value.cols();
                self.accumulate(*x, |d| {
                    for ((drow, grow), orow) in d.chunks_mut(cols).zip(g.chunks(cols)).zip(out.chunks(cols)) {
                        let gs = grow.iter().copied().sum::<T>();
                        for j in 0..cols {
                            drow[j] += grow[j] - orow[j].exp() * gs;
                        }
                    }
                });
            }
            Op::Pick { x, idx } => {
                self.accumulate(*x, |d| {
                    for (&i, &gi) in idx.iter().zip(g) {
                        d[i] += gi;
                    }
                });
            }
            Op::Log1mExp { x, slopes } => {
                self.accumulate(*x, |d| {
                    for ((d, &gi), &s) in d.iter_mut().zip(g).zip(slopes) {
                        *d += gi * s;
                    }
                });
            }
            Op::WeightedSum { x, weights } => {
                let g0 = g[0];
                self.accumulate(*x, |d| {
                    for (d, &w) in d.iter_mut().zip(weights) {
                        *d += g0 * w;
                    }
                });
            }
            Op::Dropout { x, mask } => {
                self.accumulate(*x, |d| {
                    for ((d, &gi), &m) in d.iter_mut().zip(g).zip(mask) {
                        *d += gi * m;
                    }
                });
            }
        }
        self.nodes[id].op = op;
    }

    fn matmul_backward(&mut self, x: Var, w: Var, b: Option<Var>, g: &[T]) {
        let (k, n) = {
            let wv = &self.nodes[w.0].value;
            (wv.shape()[0], wv.shape()[1])
        };
        let m = self.nodes[x.0].value.rows();
        if self.wants(x) {
            let mut dx = vec![T::zero(); m * k];
            T::gemm(m, n, k, T::one(), g, false, self.nodes[w.0].value.data(), true, T::zero(), &mut dx);
            self.accumulate(x, |d| add_into(d, &dx));
        }
        if self.wants(w) {
            let mut dw = vec![T::zero(); k * n];
            T::gemm(k, m, n, T::one(), self.nodes[x.0].value.data(), true, g, false, T::zero(), &mut dw);
            self.accumulate(w, |d| add_into(d, &dw));
        }
        if let Some(b) = b {
            self.accumulate(b, |d| {
                for row in g.chunks(n) {
                    add_into(d, row);
                }
            });
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut g = Graph::<f64>::new();
        let w = g.param(Array::from_vec(vec![0.3, -1.2, 4.0]));
        let s = g.sum(w);
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn half_squared_norm_gradient_is_identity() {
        let mut g = Graph::<f64>::new();
        let data = vec![0.5, -2.0, 3.25];
        let w = g.param(Array::from_vec(data.clone()));
        let sq = g.mul(w, w);
        let s = g.sum(sq);
        let l = g.scale(s, 0.5);
        g.backward(l).unwrap();
        assert_eq!(g.grad(w).unwrap(), data.as_slice());
    }

    #[test]
    fn second_backward_is_an_error() {
        let mut g = Graph::<f32>::new();
        let w = g.param(Array::from_vec(vec![1.0]));
        let s = g.sum(w);
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::BackwardAlreadyRan)));
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::<f32>::new();
        let w = g.param(Array::from_vec(vec![1.0, 2.0]));
        assert!(matches!(g.backward(w), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn nan_gradient_names_the_node() {
        let mut g = Graph::<f32>::new();
        let w = g.param(Array::from_vec(vec![1.0, 2.0]));
        let bad = g.scale(w, f32::NAN);
        let s = g.sum(bad);
        let err = g.backward(s).unwrap_err();
        match err {
            Error::NonFiniteGradient { node } => assert_eq!(node, w.id()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(Array::from_vec(vec![2.0]));
        let w = g.param(Array::from_vec(vec![3.0]));
        let p = g.mul(c, w);
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[2.0]);
        assert!(g.grad(c).is_none());
    }
}
