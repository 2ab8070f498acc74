//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every operation evaluates eagerly and appends one record to the tape.
//! Records can only refer to earlier records, so the tape is always in
//! topological order and [`Tape::backward`] is a single reverse sweep.
//! Gradients accumulate in tape order, which makes repeated sweeps bitwise
//! reproducible.

use std::collections::BTreeMap;

use super::kernels;
use super::params::{ParamGrads, ParameterSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Probabilities below this are clamped before taking the log.
pub const LOG_FLOOR: f64 = 1e-30;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Row,
    Column,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    Tanh(Var),
    Sigmoid(Var),
    RepeatCols(Var),
    ConcatRows(Var, Var),
    StackRows(Vec<Var>),
    Transpose(Var),
    Reshape(Var),
    Gather { x: Var, indices: Vec<usize>, axis: Axis },
    Softmax(Var),
    SoftmaxRows(Var),
    Sum(Var),
    Nll { probs: Var, index: usize },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Result of [`Tape::nll`].
#[derive(Clone, Copy, Debug)]
pub struct NllOutput {
    pub loss: Var,
    /// The target probability was below [`LOG_FLOOR`] and got clamped.
    pub clamped: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Parameters of a [`ParameterSet`] recorded as leaves of one tape.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Per-record gradients from one backward sweep.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient for every bound parameter; parameters the root does not
    /// depend on get zeros.
    pub fn collect(&self, bindings: &Bindings, params: &ParameterSet) -> ParamGrads {
        let mut out = ParamGrads::default();
        for (name, tensor) in params.iter() {
            let grad = bindings
                .vars
                .get(name)
                .and_then(|v| self.get(*v))
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; tensor.len()]);
            out.insert(name.to_string(), grad);
        }
        out
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a leaf; it participates in gradients iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let g = t.requires_grad();
        self.push(t, Op::Leaf, g)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.with_grad(false), Op::Leaf, false)
    }

    /// Records every parameter as a gradient-tracking leaf.
    pub fn bind(&mut self, params: &ParameterSet) -> Bindings {
        let vars = params
            .iter()
            .map(|(name, t)| {
                let v = self.push(t.clone().with_grad(true), Op::Leaf, true);
                (name.to_string(), v)
            })
            .collect();
        Bindings { vars }
    }

    /// Matrix product. A rank-1 left operand is a row vector, a rank-1 right
    /// operand a column vector; the corresponding output axis is dropped.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() == 0 || tb.rank() == 0 {
            return Err(Error::dim("matmul", ta.shape(), tb.shape()));
        }
        let (p, q) = if ta.rank() == 1 {
            (1, ta.len())
        } else {
            (ta.rows(), ta.cols())
        };
        let (q2, r) = if tb.rank() == 1 {
            (tb.len(), 1)
        } else {
            (tb.rows(), tb.cols())
        };
        if q != q2 {
            return Err(Error::dim("matmul", ta.shape(), tb.shape()));
        }
        let data = kernels::matmul(ta.data(), tb.data(), p, q, r);
        let shape = match (ta.rank(), tb.rank()) {
            (2, 2) => vec![p, r],
            (2, 1) => vec![p],
            (1, 2) => vec![r],
            _ => vec![],
        };
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::MatMul(a, b), g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim("add", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), g))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim("mul", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Mul(a, b), g))
    }

    /// `scale · x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| scale * v + shift).collect();
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        let g = self.needs(x);
        self.push(t, Op::Affine { x, scale }, g)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v.tanh()).collect();
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        let g = self.needs(x);
        self.push(t, Op::Tanh(x), g)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| kernels::sigmoid(v)).collect();
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        let g = self.needs(x);
        self.push(t, Op::Sigmoid(x), g)
    }

    /// `[v v … v]`: an `l×n` matrix whose every column is the vector `v`.
    pub fn repeat_cols(&mut self, v: Var, n: usize) -> Result<Var> {
        if n == 0 {
            return Err(Error::invalid("repeat_cols needs n >= 1"));
        }
        let tv = self.value(v);
        if tv.rank() != 1 {
            return Err(Error::dim("repeat_cols", tv.shape(), &[0]));
        }
        let l = tv.len();
        let mut data = Vec::with_capacity(l * n);
        for &x in tv.data() {
            data.extend(std::iter::repeat_n(x, n));
        }
        let g = self.needs(v);
        Ok(self.push(Tensor::matrix(l, n, data)?, Op::RepeatCols(v), g))
    }

    /// Stacks `a` above `b`. Two vectors concatenate into one longer vector.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = match (ta.rank(), tb.rank()) {
            (1, 1) => vec![ta.len() + tb.len()],
            (2, 2) if ta.cols() == tb.cols() => vec![ta.rows() + tb.rows(), ta.cols()],
            _ => return Err(Error::dim("concat_rows", ta.shape(), tb.shape())),
        };
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        data.extend_from_slice(ta.data());
        data.extend_from_slice(tb.data());
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::ConcatRows(a, b), g))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return Err(Error::invalid("stack_rows of an empty list"));
        };
        let width = self.value(first).len();
        let mut data = Vec::with_capacity(width * rows.len());
        let mut g = false;
        for &r in rows {
            let t = self.value(r);
            if t.rank() != 1 || t.len() != width {
                return Err(Error::dim("stack_rows", &[width], t.shape()));
            }
            data.extend_from_slice(t.data());
            g |= self.needs(r);
        }
        let t = Tensor::matrix(rows.len(), width, data)?;
        Ok(self.push(t, Op::StackRows(rows.to_vec()), g))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 {
            return Err(Error::dim("transpose", tx.shape(), &[0, 0]));
        }
        let t = tx.transpose();
        let g = self.needs(x);
        Ok(self.push(t, Op::Transpose(x), g))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let t = Tensor::new(shape.to_vec(), tx.data().to_vec())
            .map_err(|_| Error::dim("reshape", tx.shape(), shape))?;
        let g = self.needs(x);
        Ok(self.push(t, Op::Reshape(x), g))
    }

    /// Selects rows or columns (or vector entries) in the given order.
    pub fn gather(&mut self, x: Var, indices: &[usize], axis: Axis) -> Result<Var> {
        let tx = self.value(x);
        let t = match (tx.rank(), axis) {
            (1, _) => {
                let d = tx.data();
                let mut out = Vec::with_capacity(indices.len());
                for &i in indices {
                    out.push(*d.get(i).ok_or(Error::Index {
                        index: i,
                        len: d.len(),
                    })?);
                }
                Tensor::vector(out)
            }
            (2, Axis::Row) => {
                let (r, c) = (tx.rows(), tx.cols());
                let mut out = Vec::with_capacity(indices.len() * c);
                for &i in indices {
                    if i >= r {
                        return Err(Error::Index { index: i, len: r });
                    }
                    out.extend_from_slice(tx.row(i));
                }
                Tensor::matrix(indices.len(), c, out)?
            }
            (2, Axis::Column) => {
                let (r, c) = (tx.rows(), tx.cols());
                if let Some(&bad) = indices.iter().find(|&&j| j >= c) {
                    return Err(Error::Index { index: bad, len: c });
                }
                let d = tx.data();
                let mut out = Vec::with_capacity(r * indices.len());
                for i in 0..r {
                    out.extend(indices.iter().map(|&j| d[i * c + j]));
                }
                Tensor::matrix(r, indices.len(), out)?
            }
            _ => return Err(Error::dim("gather", tx.shape(), &[0])),
        };
        let g = self.needs(x);
        Ok(self.push(
            t,
            Op::Gather {
                x,
                indices: indices.to_vec(),
                axis,
            },
            g,
        ))
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 {
            return Err(Error::dim("row", tx.shape(), &[0, 0]));
        }
        if i >= tx.rows() {
            return Err(Error::Index {
                index: i,
                len: tx.rows(),
            });
        }
        let t = Tensor::vector(tx.row(i).to_vec());
        let g = self.needs(x);
        Ok(self.push(
            t,
            Op::Gather {
                x,
                indices: vec![i],
                axis: Axis::Row,
            },
            g,
        ))
    }

    /// Softmax of a vector restricted to the `valid` positions.
    pub fn masked_softmax(&mut self, logits: Var, valid: Option<&[bool]>) -> Result<Var> {
        let tx = self.value(logits);
        if tx.rank() != 1 {
            return Err(Error::dim("masked_softmax", tx.shape(), &[0]));
        }
        let probs = kernels::masked_softmax(tx.data(), valid)?;
        let g = self.needs(logits);
        Ok(self.push(
            Tensor::vector(probs),
            Op::Softmax(logits),
            g,
        ))
    }

    /// Independent softmax over each row of a matrix.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 {
            return Err(Error::dim("softmax_rows", tx.shape(), &[0, 0]));
        }
        let mut data = Vec::with_capacity(tx.len());
        for i in 0..tx.rows() {
            data.extend(kernels::masked_softmax(tx.row(i), None)?);
        }
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let g = self.needs(x);
        Ok(self.push(t, Op::SoftmaxRows(x), g))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let g = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), g)
    }

    /// `−ln p[index]` for a probability vector, with the probability floored
    /// at [`LOG_FLOOR`]. A floored target passes no gradient.
    pub fn nll(&mut self, probs: Var, index: usize) -> Result<NllOutput> {
        let tp = self.value(probs);
        let p = *tp.data().get(index).ok_or(Error::Index {
            index,
            len: tp.len(),
        })?;
        let clamped = p < LOG_FLOOR;
        let loss = -p.max(LOG_FLOOR).ln();
        let g = self.needs(probs);
        let var = self.push(Tensor::scalar(loss), Op::Nll { probs, index }, g);
        Ok(NllOutput { loss: var, clamped })
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rt = self.value(root);
        if rt.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar root, got shape {:?}",
                rt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let acc = |v: Var, grads: &mut [Option<Vec<f64>>], f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let len = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (p, q) = if ta.rank() == 1 {
                    (1, ta.len())
                } else {
                    (ta.rows(), ta.cols())
                };
                let r = if tb.rank() == 1 { 1 } else { tb.cols() };
                // dA = G · Bᵀ, dB = Aᵀ · G
                acc(*a, grads, &mut |s| {
                    let d = kernels::matmul_bt(g, tb.data(), p, r, q);
                    s.iter_mut().zip(d).for_each(|(x, y)| *x += y);
                });
                acc(*b, grads, &mut |s| {
                    let d = kernels::matmul_at(ta.data(), g, p, q, r);
                    s.iter_mut().zip(d).for_each(|(x, y)| *x += y);
                });
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    acc(*v, grads, &mut |s| {
                        s.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    });
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, grads, &mut |s| {
                    for ((x, gi), bi) in s.iter_mut().zip(g).zip(tb.data()) {
                        *x += gi * bi;
                    }
                });
                acc(*b, grads, &mut |s| {
                    for ((x, gi), ai) in s.iter_mut().zip(g).zip(ta.data()) {
                        *x += gi * ai;
                    }
                });
            }
            Op::Affine { x, scale } => {
                acc(*x, grads, &mut |s| {
                    s.iter_mut().zip(g).for_each(|(a, b)| *a += scale * b);
                });
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                acc(*x, grads, &mut |s| {
                    for ((a, gi), yi) in s.iter_mut().zip(g).zip(y) {
                        *a += gi * (1.0 - yi * yi);
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(*x, grads, &mut |s| {
                    for ((a, gi), yi) in s.iter_mut().zip(g).zip(y) {
                        *a += gi * yi * (1.0 - yi);
                    }
                });
            }
            Op::RepeatCols(v) => {
                let n = node.value.cols();
                acc(*v, grads, &mut |s| {
                    for (i, a) in s.iter_mut().enumerate() {
                        *a += g[i * n..(i + 1) * n].iter().sum::<f64>();
                    }
                });
            }
            Op::ConcatRows(a, b) => {
                let split = self.value(*a).len();
                acc(*a, grads, &mut |s| {
                    s.iter_mut().zip(&g[..split]).for_each(|(x, y)| *x += y);
                });
                acc(*b, grads, &mut |s| {
                    s.iter_mut().zip(&g[split..]).for_each(|(x, y)| *x += y);
                });
            }
            Op::StackRows(rows) => {
                let w = node.value.cols();
                for (i, r) in rows.iter().enumerate() {
                    acc(*r, grads, &mut |s| {
                        s.iter_mut()
                            .zip(&g[i * w..(i + 1) * w])
                            .for_each(|(x, y)| *x += y);
                    });
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (node.value.rows(), node.value.cols());
                acc(*x, grads, &mut |s| {
                    // s is c×r, g is r×c
                    for i in 0..r {
                        for j in 0..c {
                            s[j * r + i] += g[i * c + j];
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                acc(*x, grads, &mut |s| {
                    s.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                });
            }
            Op::Gather { x, indices, axis } => {
                let tx = self.value(*x);
                acc(*x, grads, &mut |s| match (tx.rank(), axis) {
                    (1, _) => {
                        for (k, &i) in indices.iter().enumerate() {
                            s[i] += g[k];
                        }
                    }
                    (_, Axis::Row) => {
                        let c = tx.cols();
                        for (k, &i) in indices.iter().enumerate() {
                            for j in 0..c {
                                s[i * c + j] += g[k * c + j];
                            }
                        }
                    }
                    (_, Axis::Column) => {
                        let (r, c, m) = (tx.rows(), tx.cols(), indices.len());
                        for i in 0..r {
                            for (k, &j) in indices.iter().enumerate() {
                                s[i * c + j] += g[i * m + k];
                            }
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let p = node.value.data();
                acc(*x, grads, &mut |s| kernels::softmax_backward(p, g, s));
            }
            Op::SoftmaxRows(x) => {
                let (r, c) = (node.value.rows(), node.value.cols());
                let p = node.value.data();
                acc(*x, grads, &mut |s| {
                    for i in 0..r {
                        let span = i * c..(i + 1) * c;
                        kernels::softmax_backward(&p[span.clone()], &g[span.clone()], &mut s[span]);
                    }
                });
            }
            Op::Sum(x) => {
                acc(*x, grads, &mut |s| s.iter_mut().for_each(|a| *a += g[0]));
            }
            Op::Nll { probs, index } => {
                let p = self.value(*probs).data()[*index];
                if p >= LOG_FLOOR {
                    acc(*probs, grads, &mut |s| s[*index] -= g[0] / p);
                }
            }
        }
    }
}
