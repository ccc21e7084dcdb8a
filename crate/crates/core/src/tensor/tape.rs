use std::collections::HashMap;

use super::Tensor;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Support mask for [`Tape::masked_softmax`]; `true` keeps a position.
#[derive(Debug, Clone, PartialEq)]
pub enum Mask {
    /// One mask over the last axis, shared by every row.
    Shared(Vec<bool>),
    /// A full `rows × cols` mask, row-major.
    PerRow(Vec<bool>),
}

impl Mask {
    pub fn all(cols: usize) -> Self {
        Mask::Shared(vec![true; cols])
    }

    fn row(&self, r: usize, cols: usize) -> &[bool] {
        match self {
            Mask::Shared(m) => m,
            Mask::PerRow(m) => &m[r * cols..(r + 1) * cols],
        }
    }

    fn check(&self, rows: usize, cols: usize) -> Result<()> {
        let ok = match self {
            Mask::Shared(m) => m.len() == cols,
            Mask::PerRow(m) => m.len() == rows * cols,
        };
        if ok {
            Ok(())
        } else {
            let len = match self {
                Mask::Shared(m) | Mask::PerRow(m) => m.len(),
            };
            Err(Error::shape("masked_softmax mask", &[rows, cols], &[len]))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    Scalar,
    Row,
    Col,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Param(#[allow(dead_code)] ParamId),
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Concat(Vec<Var>, usize),
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Clamp(Var, f64, f64),
    Exp(Var),
    Log(Var),
    Square(Var),
    MaskedSoftmax(Var),
    Transpose(Var),
    MaxCols(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op,
    value: Tensor<T>,
    needs_grad: bool,
}

/// Append-only computation record. Inputs of a node always precede it, so
/// reverse append order is a valid backward schedule.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, inner)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Single element of a one-element tensor.
    pub fn scalar_value(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, op: Op, value: Tensor<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable input that is not a parameter (gradients readable from [`Grads`]).
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Constant, t, false)
    }

    /// Records a parameter; repeated calls for the same id return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let mut value = store.get(id).clone();
        value.zero_grad();
        let t = Tensor::new(value.shape().to_vec(), value.into_data()).expect("param shape");
        let v = self.push(Op::Param(id), t, true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let crow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = ad[i * k + p];
                let brow = &bd[p * n..(p + 1) * n];
                for (c, &bv) in crow.iter_mut().zip(brow) {
                    *c += aip * bv;
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::MatMul(a, b), value, ng))
    }

    fn broadcast_kind(op: &'static str, lhs: &Tensor<T>, rhs: &Tensor<T>) -> Result<Broadcast> {
        if lhs.shape() == rhs.shape() {
            Ok(Broadcast::Same)
        } else if rhs.len() == 1 {
            Ok(Broadcast::Scalar)
        } else if rhs.rows() == 1 && rhs.cols() == lhs.cols() && lhs.shape().len() == 2 {
            Ok(Broadcast::Row)
        } else if rhs.shape().len() == 2 && rhs.cols() == 1 && rhs.rows() == lhs.rows() && lhs.shape().len() == 2 {
            Ok(Broadcast::Col)
        } else {
            Err(Error::shape(op, lhs.shape(), rhs.shape()))
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        make: impl Fn(Var, Var, Broadcast) -> Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let kind = Self::broadcast_kind(name, ta, tb)?;
        let cols = ta.cols();
        let (ad, bd) = (ta.data(), tb.data());
        let out: Vec<T> = match kind {
            Broadcast::Same => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Scalar => ad.iter().map(|&x| f(x, bd[0])).collect(),
            Broadcast::Row => ad.iter().enumerate().map(|(i, &x)| f(x, bd[i % cols])).collect(),
            Broadcast::Col => ad.iter().enumerate().map(|(i, &x)| f(x, bd[i / cols])).collect(),
        };
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(make(a, b, kind), value, ng))
    }

    /// Elementwise sum; `b` may broadcast as a scalar, a row, or a column.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let c = self.constant(Tensor::scalar(factor));
        self.mul(a, c).expect("scalar broadcast")
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::invalid("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut shape = base.clone();
        shape[axis] = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            shape[axis] += s[axis];
        }
        let (outer, inner) = outer_inner(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let block = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let value = Tensor::new(shape, out)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Op::Concat(parts.to_vec(), axis), value, ng))
    }

    /// Half-open range `[start, end)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start > end || end > s[axis] {
            return Err(Error::shape("slice", &s, &[axis, start, end]));
        }
        let (outer, inner) = outer_inner(&s, axis);
        let mut shape = s.clone();
        shape[axis] = end - start;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            let base = o * s[axis] * inner;
            out.extend_from_slice(&src[base + start * inner..base + end * inner]);
        }
        let value = Tensor::new(shape, out)?;
        let ng = self.ng(x);
        Ok(self.push(Op::Slice { input: x, axis, start }, value, ng))
    }

    pub fn rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        self.slice(x, 0, start, end)
    }

    pub fn cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let axis = self.shape(x).len().saturating_sub(1);
        self.slice(x, axis, start, end)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        let ng = self.ng(x);
        self.push(Op::Sum(x), Tensor::scalar(s), ng)
    }

    /// Mean of all entries; the mean of an empty tensor is zero.
    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = t.len().max(1);
        let s: T = t.data().iter().copied().sum::<T>() / T::of(n as f64);
        let ng = self.ng(x);
        self.push(Op::Mean(x), Tensor::scalar(s), ng)
    }

    fn reduce_axis(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::shape("reduce_axis", &s, &[axis]));
        }
        let (outer, inner) = outer_inner(&s, axis);
        let len = s[axis];
        let src = self.value(x).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let row = &src[(o * len + a) * inner..(o * len + a + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        if mean && len > 0 {
            let d = T::of(len as f64);
            out.iter_mut().for_each(|v| *v /= d);
        }
        let mut shape = s;
        shape[axis] = 1;
        let value = Tensor::new(shape, out)?;
        let ng = self.ng(x);
        let op = if mean { Op::MeanAxis(x, axis) } else { Op::SumAxis(x, axis) };
        Ok(self.push(op, value, ng))
    }

    /// Sum along `axis`, keeping it with size 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, false)
    }

    /// Mean along `axis`, keeping it with size 1.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, true)
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op) -> Var {
        let t = self.value(x);
        let out: Vec<T> = t.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        let ng = self.ng(x);
        self.push(op, value, ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    /// Elementwise clamp to `[lo, hi]`; the gradient passes only strictly inside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (T::of(lo), T::of(hi));
        self.unary(x, |v| v.max(l).min(h), Op::Clamp(x, lo, hi))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), Op::Log(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// Softmax over the last axis restricted to the mask's support.
    ///
    /// Masked positions come out as exactly zero. A row with no unmasked
    /// position is an error rather than a NaN row.
    pub fn masked_softmax(&mut self, x: Var, mask: &Mask) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = (t.rows(), t.cols());
        mask.check(rows, cols)?;
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            let m = mask.row(r, cols);
            let row = &t.data()[r * cols..(r + 1) * cols];
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &keep)| keep)
                .map(|(&v, _)| v)
                .fold(None, |acc: Option<T>, v| Some(acc.map_or(v, |a| a.max(v))))
                .ok_or(Error::EmptySupport { row: r })?;
            let dst = &mut out[r * cols..(r + 1) * cols];
            let mut total = T::zero();
            for ((d, &v), &keep) in dst.iter_mut().zip(row).zip(m) {
                if keep {
                    *d = (v - max).exp();
                    total += *d;
                }
            }
            dst.iter_mut().for_each(|d| *d /= total);
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let ng = self.ng(x);
        Ok(self.push(Op::MaskedSoftmax(x), value, ng))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("transpose", &s, &[]));
        }
        let (m, n) = (s[0], s[1]);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let value = Tensor::new(vec![n, m], out)?;
        let ng = self.ng(x);
        Ok(self.push(Op::Transpose(x), value, ng))
    }

    /// Row-wise maximum over the last axis, shape `rows × 1`. The gradient
    /// flows to the first maximal entry of each row.
    pub fn max_cols(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = (t.rows(), t.cols());
        if cols == 0 {
            return Err(Error::invalid("max_cols", "zero columns"));
        }
        let mut arg = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &t.data()[r * cols..(r + 1) * cols];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            arg.push(best);
            out.push(row[best]);
        }
        let value = Tensor::new(vec![rows, 1], out)?;
        let ng = self.ng(x);
        Ok(self.push(Op::MaxCols(x, arg), value, ng))
    }

    /// Row lookup into a 2-D table, e.g. an embedding matrix.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(Error::shape("gather_rows", t.shape(), &[]));
        }
        let (v, e) = (t.shape()[0], t.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            if id >= v {
                return Err(Error::OutOfVocabulary { id, vocab_size: v });
            }
            out.extend_from_slice(&t.data()[id * e..(id + 1) * e]);
        }
        let value = Tensor::new(vec![ids.len(), e], out)?;
        let ng = self.ng(table);
        Ok(self.push(Op::GatherRows(table, ids.to_vec()), value, ng))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        let loss_shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(loss_shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        let params = self
            .params
            .iter()
            .map(|(&id, &v)| (id, v))
            .collect::<Vec<_>>();
        Ok(Grads { grads, params })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut acc = |v: Var, f: &dyn Fn(&mut [T])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let n = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
            f(slot);
        };
        match &node.op {
            Op::Leaf | Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (ad, bd) = (val(*a), val(*b));
                acc(*a, &|ga| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            let mut s = T::zero();
                            for (&x, &y) in grow.iter().zip(brow) {
                                s += x * y;
                            }
                            ga[i * k + p] += s;
                        }
                    }
                });
                acc(*b, &|gb| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            for (dst, &x) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *dst += aip * x;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b, kind) | Op::Sub(a, b, kind) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
                acc(*a, &|ga| ga.iter_mut().zip(g).for_each(|(d, &x)| *d += x));
                let cols = node.value.cols();
                acc(*b, &|gb| reduce_broadcast(*kind, cols, g, gb, |x, _| x * sign));
            }
            Op::Mul(a, b, kind) => {
                let (ad, bd) = (val(*a), val(*b));
                let cols = node.value.cols();
                acc(*a, &|ga| {
                    for (i, d) in ga.iter_mut().enumerate() {
                        let bv = match kind {
                            Broadcast::Same => bd[i],
                            Broadcast::Scalar => bd[0],
                            Broadcast::Row => bd[i % cols],
                            Broadcast::Col => bd[i / cols],
                        };
                        *d += g[i] * bv;
                    }
                });
                acc(*b, &|gb| reduce_broadcast(*kind, cols, g, gb, |x, i| x * ad[i]));
            }
            Op::Concat(parts, axis) => {
                let shape = node.value.shape();
                let (outer, inner) = outer_inner(shape, *axis);
                let mut offset = 0;
                let total = shape[*axis] * inner;
                for &p in parts {
                    let block = self.shape(p)[*axis] * inner;
                    acc(p, &|gp| {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + block];
                            for (d, &x) in gp[o * block..(o + 1) * block].iter_mut().zip(src) {
                                *d += x;
                            }
                        }
                    });
                    offset += block;
                }
            }
            Op::Slice { input, axis, start } => {
                let s = self.shape(*input);
                let (outer, inner) = outer_inner(s, *axis);
                let len = node.value.shape()[*axis];
                let full = s[*axis];
                acc(*input, &|gi| {
                    for o in 0..outer {
                        let base = o * full * inner + start * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        for (d, &x) in gi[base..base + len * inner].iter_mut().zip(src) {
                            *d += x;
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &|gx| gx.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(x) => {
                let n = T::of(self.nodes[x.0].value.len().max(1) as f64);
                acc(*x, &|gx| gx.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::SumAxis(x, axis) | Op::MeanAxis(x, axis) => {
                let s = self.shape(*x);
                let (outer, inner) = outer_inner(s, *axis);
                let len = s[*axis];
                let scale = if matches!(node.op, Op::MeanAxis(..)) && len > 0 {
                    T::one() / T::of(len as f64)
                } else {
                    T::one()
                };
                acc(*x, &|gx| {
                    for o in 0..outer {
                        for a in 0..len {
                            let dst = &mut gx[(o * len + a) * inner..(o * len + a + 1) * inner];
                            for (d, &v) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                                *d += v * scale;
                            }
                        }
                    }
                });
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                acc(*x, &|gx| {
                    for ((d, &gy), &yv) in gx.iter_mut().zip(g).zip(y) {
                        *d += gy * (T::one() - yv * yv);
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(*x, &|gx| {
                    for ((d, &gy), &yv) in gx.iter_mut().zip(g).zip(y) {
                        *d += gy * yv * (T::one() - yv);
                    }
                });
            }
            Op::Relu(x) => {
                let xv = val(*x);
                acc(*x, &|gx| {
                    for ((d, &gy), &v) in gx.iter_mut().zip(g).zip(xv) {
                        if v > T::zero() {
                            *d += gy;
                        }
                    }
                });
            }
            Op::Clamp(x, lo, hi) => {
                let xv = val(*x);
                let (l, h) = (T::of(*lo), T::of(*hi));
                acc(*x, &|gx| {
                    for ((d, &gy), &v) in gx.iter_mut().zip(g).zip(xv) {
                        if v > l && v < h {
                            *d += gy;
                        }
                    }
                });
            }
            Op::Exp(x) => {
                let y = node.value.data();
                acc(*x, &|gx| gx.iter_mut().zip(g).zip(y).for_each(|((d, &gy), &yv)| *d += gy * yv));
            }
            Op::Log(x) => {
                let xv = val(*x);
                acc(*x, &|gx| gx.iter_mut().zip(g).zip(xv).for_each(|((d, &gy), &v)| *d += gy / v));
            }
            Op::Square(x) => {
                let xv = val(*x);
                let two = T::of(2.0);
                acc(*x, &|gx| gx.iter_mut().zip(g).zip(xv).for_each(|((d, &gy), &v)| *d += two * gy * v));
            }
            Op::MaskedSoftmax(x) => {
                let y = node.value.data();
                let (rows, cols) = (node.value.rows(), node.value.cols());
                acc(*x, &|gx| {
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for j in 0..cols {
                            gx[r * cols + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Transpose(x) => {
                let s = self.shape(*x);
                let (m, n) = (s[0], s[1]);
                acc(*x, &|gx| {
                    for i in 0..m {
                        for j in 0..n {
                            gx[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::MaxCols(x, arg) => {
                let cols = self.nodes[x.0].value.cols();
                acc(*x, &|gx| {
                    for (r, &j) in arg.iter().enumerate() {
                        gx[r * cols + j] += g[r];
                    }
                });
            }
            Op::GatherRows(table, ids) => {
                let e = self.shape(*table)[1];
                acc(*table, &|gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        for (d, &x) in gt[id * e..(id + 1) * e].iter_mut().zip(&g[r * e..(r + 1) * e]) {
                            *d += x;
                        }
                    }
                });
            }
        }
    }
}

fn reduce_broadcast<T: Scalar>(
    kind: Broadcast,
    cols: usize,
    g: &[T],
    gb: &mut [T],
    f: impl Fn(T, usize) -> T,
) {
    for (i, &x) in g.iter().enumerate() {
        let j = match kind {
            Broadcast::Same => i,
            Broadcast::Scalar => 0,
            Broadcast::Row => i % cols,
            Broadcast::Col => i / cols,
        };
        gb[j] += f(x, i);
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Gradients from one backward sweep.
#[derive(Debug, Clone)]
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient of the loss with respect to `v`, or `None` if no path reaches it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds parameter gradients into the store's grad buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for &(id, v) in &self.params {
            if let Some(g) = self.get(v) {
                let dst = store.get_mut(id).grad_mut();
                dst.iter_mut().zip(g).for_each(|(d, &x)| *d += x);
            }
        }
    }
}
