use std::collections::HashMap;

use rand::Rng;

use super::lstm::{self, LstmCache, LstmWeights};
use super::param::{ParamId, ParamStore};
use super::{gemm, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    /// Slope applied on the non-positive side.
    LeakyRelu(f64),
}

/// Reduction/normalization axis of a matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Along axis 0: one slice per column.
    Rows,
    /// Along axis 1: one slice per row.
    Cols,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Mean,
    Max,
}

/// What a masked softmax does with a slice that has no unmasked entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmptySlice {
    Error,
    /// Emit an all-zero slice.
    Zero,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Act(Var, Activation),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    ScaleRows(Var, Var),
    OuterAdd(Var, Var),
    Softmax(Var, Axis),
    Pool {
        x: Var,
        kind: PoolKind,
        axis: Axis,
        argmax: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    MulConst(Var, Vec<f64>),
    Lstm {
        x: Var,
        wx: Var,
        wh: Var,
        b: Var,
        cache: LstmCache,
    },
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
    Bce {
        p: Var,
        targets: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed ops. Every node's inputs precede it, so reverse
/// index order is a valid backward schedule.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<ParamId, Var>,
}

fn broadcastable(a: &[usize], b: &[usize]) -> bool {
    let nb: usize = b.iter().product();
    a == b || nb == 1 || (b.len() <= a.len() && a.ends_with(b))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_into(acc: &mut Option<Vec<f64>>, g: &[f64]) {
    match acc {
        Some(a) => a.iter_mut().zip(g).for_each(|(x, y)| *x += y),
        None => *acc = Some(g.to_vec()),
    }
}

/// Bounds for BCE probabilities.
const BCE_EPS: f64 = 1e-7;

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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward pass w.r.t. `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(name));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable input (gradient is recorded).
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, true, "leaf")
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, false, "constant")
    }

    /// Brings a stored parameter onto the tape. Repeated calls return the same var.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Param,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !broadcastable(ta.shape(), tb.shape()) {
            return Err(TensorError::ShapeMismatch {
                op: name,
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let nb = tb.len();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, tb.data()[i % nb]))
            .collect();
        Tensor::new(ta.shape(), data)
    }

    /// `a + b`; `b` may broadcast over the leading dims of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(t, Op::Add(a, b), rg, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(t, Op::Sub(a, b), rg, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(t, Op::Mul(a, b), rg, "mul")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let ta = self.value(a);
        let t = Tensor::new(ta.shape(), ta.data().iter().map(|x| x * factor).collect())?;
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, factor), rg, "scale")
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Result<Var> {
        let ta = self.value(a);
        let f: fn(f64, f64) -> f64 = match act {
            Activation::Sigmoid => |x, _| sigmoid(x),
            Activation::Tanh => |x, _| x.tanh(),
            Activation::Relu => |x, _| x.max(0.0),
            Activation::LeakyRelu(_) => |x, s| if x > 0.0 { x } else { s * x },
        };
        let slope = match act {
            Activation::LeakyRelu(s) => s,
            _ => 0.0,
        };
        let t = Tensor::new(ta.shape(), ta.data().iter().map(|&x| f(x, slope)).collect())?;
        let rg = self.rg(a);
        self.push(t, Op::Act(a, act), rg, "activation")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.activate(a, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.activate(a, Activation::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.activate(a, Activation::Relu)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.activate(a, Activation::LeakyRelu(slope))
    }

    /// Matrix product; vectors are treated as a single row.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2();
        let (k2, n) = self.value(b).dims2();
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg, "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(t, Op::Transpose(a), rg, "transpose")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        self.push(t, Op::Reshape(a), rg, "reshape")
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.shape(parts[0]).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::new(&[rows, total], out)?, Op::ConcatCols(parts.to_vec()), rg, "concat_cols")
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    left: self.shape(parts[0]).to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            rows += t.rows();
            out.extend_from_slice(t.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::new(&[rows, cols], out)?, Op::ConcatRows(parts.to_vec()), rg, "concat_rows")
    }

    /// Selects rows by index (repeats allowed). Backward scatter-adds.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = t.dims2();
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange { index: i, len: rows });
            }
            out.extend_from_slice(t.row(i));
        }
        let rg = self.rg(a);
        self.push(Tensor::new(&[idx.len(), cols], out)?, Op::GatherRows(a, idx.to_vec()), rg, "gather_rows")
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let idx: Vec<usize> = (start..end).collect();
        self.gather_rows(a, &idx)
    }

    /// Row `i` of `x` multiplied by `v[i]`.
    pub fn scale_rows(&mut self, x: Var, v: Var) -> Result<Var> {
        let (tx, tv) = (self.value(x), self.value(v));
        let (rows, cols) = tx.dims2();
        if tv.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                left: tx.shape().to_vec(),
                right: tv.shape().to_vec(),
            });
        }
        let mut out = tx.data().to_vec();
        for (r, chunk) in out.chunks_mut(cols).enumerate() {
            let s = tv.data()[r];
            chunk.iter_mut().for_each(|c| *c *= s);
        }
        let t = Tensor::new(tx.shape(), out)?;
        let rg = self.rg(x) || self.rg(v);
        self.push(t, Op::ScaleRows(x, v), rg, "scale_rows")
    }

    /// `out[i][j] = a[i] + b[j]`.
    pub fn outer_add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, m) = (ta.len(), tb.len());
        let mut out = Vec::with_capacity(n * m);
        for &x in ta.data() {
            out.extend(tb.data().iter().map(|y| x + y));
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(&[n, m], out)?, Op::OuterAdd(a, b), rg, "outer_add")
    }

    /// Max-stabilized softmax. Masked-out entries are exactly zero.
    pub fn softmax(&mut self, x: Var, axis: Axis, mask: Option<&[bool]>, empty: EmptySlice) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = tx.dims2();
        if let Some(m) = mask {
            if m.len() != tx.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "softmax mask",
                    left: tx.shape().to_vec(),
                    right: vec![m.len()],
                });
            }
        }
        let (n_slices, slice_len) = match axis {
            Axis::Cols => (rows, cols),
            Axis::Rows => (cols, rows),
        };
        let index = |s: usize, k: usize| match axis {
            Axis::Cols => s * cols + k,
            Axis::Rows => k * cols + s,
        };
        let mut out = vec![0.0; tx.len()];
        for s in 0..n_slices {
            let live = |k: usize| mask.map_or(true, |m| m[index(s, k)]);
            let max = (0..slice_len)
                .filter(|&k| live(k))
                .map(|k| tx.data()[index(s, k)])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                match empty {
                    EmptySlice::Error => return Err(TensorError::EmptySlice(s)),
                    EmptySlice::Zero => continue,
                }
            }
            let mut total = 0.0;
            for k in (0..slice_len).filter(|&k| live(k)) {
                let e = (tx.data()[index(s, k)] - max).exp();
                out[index(s, k)] = e;
                total += e;
            }
            for k in (0..slice_len).filter(|&k| live(k)) {
                out[index(s, k)] /= total;
            }
        }
        let t = Tensor::new(tx.shape(), out)?;
        let rg = self.rg(x);
        self.push(t, Op::Softmax(x, axis), rg, "softmax")
    }

    /// Mean or max pooling. `Axis::Rows` pools `n×d` down to `d`.
    pub fn pool(&mut self, x: Var, kind: PoolKind, axis: Axis) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = tx.dims2();
        let (n_out, n_in) = match axis {
            Axis::Rows => (cols, rows),
            Axis::Cols => (rows, cols),
        };
        if n_in == 0 {
            return Err(TensorError::EmptyAxis);
        }
        let at = |o: usize, k: usize| match axis {
            Axis::Rows => tx.data()[k * cols + o],
            Axis::Cols => tx.data()[o * cols + k],
        };
        let mut out = vec![0.0; n_out];
        let mut argmax = Vec::new();
        match kind {
            PoolKind::Mean => {
                for (o, slot) in out.iter_mut().enumerate() {
                    *slot = (0..n_in).map(|k| at(o, k)).sum::<f64>() / n_in as f64;
                }
            }
            PoolKind::Max => {
                argmax = vec![0; n_out];
                for o in 0..n_out {
                    let mut best = 0;
                    for k in 1..n_in {
                        // strict comparison keeps the first index on ties
                        if at(o, k) > at(o, best) {
                            best = k;
                        }
                    }
                    argmax[o] = best;
                    out[o] = at(o, best);
                }
            }
        }
        let rg = self.rg(x);
        self.push(
            Tensor::vector(out),
            Op::Pool {
                x,
                kind,
                axis,
                argmax,
            },
            rg,
            "pool",
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(TensorError::EmptyAxis);
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg, "mean")
    }

    /// Elementwise product with fixed (non-differentiable) weights.
    pub fn mul_const(&mut self, x: Var, weights: Vec<f64>) -> Result<Var> {
        let tx = self.value(x);
        if weights.len() != tx.len() {
            return Err(TensorError::ShapeMismatch {
                op: "mul_const",
                left: tx.shape().to_vec(),
                right: vec![weights.len()],
            });
        }
        let data = tx.data().iter().zip(&weights).map(|(a, b)| a * b).collect();
        let t = Tensor::new(tx.shape(), data)?;
        let rg = self.rg(x);
        self.push(t, Op::MulConst(x, weights), rg, "mul_const")
    }

    /// Inverted dropout. Identity in eval mode or at rate 0.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::BadRate(rate));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        self.mul_const(x, mask)
    }

    /// Single-direction LSTM over the rows of `x` from a zero state.
    pub fn lstm(&mut self, x: Var, wx: Var, wh: Var, b: Var) -> Result<Var> {
        let (steps, d_in) = self.value(x).dims2();
        let (wx_rows, g4) = self.value(wx).dims2();
        let hidden = self.value(wh).rows();
        if steps == 0 {
            return Err(TensorError::EmptyAxis);
        }
        if wx_rows != d_in || g4 != 4 * hidden || self.value(wh).cols() != g4 || self.value(b).len() != g4 {
            return Err(TensorError::ShapeMismatch {
                op: "lstm",
                left: self.shape(x).to_vec(),
                right: self.shape(wx).to_vec(),
            });
        }
        let w = LstmWeights {
            wx: self.value(wx).data(),
            wh: self.value(wh).data(),
            b: self.value(b).data(),
            d_in,
            hidden,
        };
        let (out, cache) = lstm::forward(self.value(x).data(), steps, w);
        let rg = self.rg(x) || self.rg(wx) || self.rg(wh) || self.rg(b);
        self.push(
            Tensor::new(&[steps, hidden], out)?,
            Op::Lstm { x, wx, wh, b, cache },
            rg,
            "lstm",
        )
    }

    /// `-log softmax(logits)[target]` over all entries of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let t = self.value(logits);
        if target >= t.len() {
            return Err(TensorError::IndexOutOfRange {
                index: target,
                len: t.len(),
            });
        }
        let max = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = t.data().iter().map(|x| (x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let loss = total.ln() + max - t.data()[target];
        let probs = exps.iter().map(|e| e / total).collect();
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
            rg,
            "cross_entropy",
        )
    }

    /// Mean binary cross-entropy of probabilities against targets in `[0, 1]`.
    /// Probabilities are clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce(&mut self, p: Var, targets: &[f64]) -> Result<Var> {
        let tp = self.value(p);
        if tp.len() != targets.len() || tp.is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "bce",
                left: tp.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let n = targets.len() as f64;
        let loss = tp
            .data()
            .iter()
            .zip(targets)
            .map(|(&p, &t)| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / n;
        let rg = self.rg(p);
        self.push(
            Tensor::scalar(loss),
            Op::Bce {
                p,
                targets: targets.to_vec(),
            },
            rg,
            "bce",
        )
    }

    /// Reverse pass from a scalar. Gradients of earlier passes are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss).to_vec();
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.backprop_node(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Adds the gradients reached by the last backward pass into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for (&id, &v) in &self.params {
            if let Some(g) = self.grad(v) {
                store.accumulate_grad(id, g);
            }
        }
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if rg(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if rg(*b) {
                    let nb = self.value(*b).len();
                    let mut gb = vec![0.0; nb];
                    for (k, gv) in g.iter().enumerate() {
                        gb[k % nb] += sign * gv;
                    }
                    add_into(&mut grads[b.0], &gb);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                let nb = tb.len();
                if rg(*a) {
                    let ga: Vec<f64> = g.iter().enumerate().map(|(k, gv)| gv * tb[k % nb]).collect();
                    add_into(&mut grads[a.0], &ga);
                }
                if rg(*b) {
                    let mut gb = vec![0.0; nb];
                    for (k, gv) in g.iter().enumerate() {
                        gb[k % nb] += gv * ta[k];
                    }
                    add_into(&mut grads[b.0], &gb);
                }
            }
            Op::Scale(a, f) => {
                let ga: Vec<f64> = g.iter().map(|x| x * f).collect();
                add_into(&mut grads[a.0], &ga);
            }
            Op::Act(a, act) => {
                let x = self.value(*a).data();
                let y = node.value.data();
                let ga: Vec<f64> = g
                    .iter()
                    .enumerate()
                    .map(|(k, gv)| {
                        gv * match act {
                            Activation::Sigmoid => y[k] * (1.0 - y[k]),
                            Activation::Tanh => 1.0 - y[k] * y[k],
                            Activation::Relu => {
                                if x[k] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Activation::LeakyRelu(s) => {
                                if x[k] > 0.0 {
                                    1.0
                                } else {
                                    *s
                                }
                            }
                        }
                    })
                    .collect();
                add_into(&mut grads[a.0], &ga);
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let n = self.value(*b).cols();
                if rg(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, false, self.value(*b).data(), true, &mut ga, 0.0);
                    add_into(&mut grads[a.0], &ga);
                }
                if rg(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, self.value(*a).data(), true, g, false, &mut gb, 0.0);
                    add_into(&mut grads[b.0], &gb);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = node.value.dims2();
                let gt = Tensor::new(&[r, c], g.to_vec()).expect("grad shape").transpose();
                add_into(&mut grads[a.0], gt.data());
            }
            Op::Reshape(a) => add_into(&mut grads[a.0], g),
            Op::ConcatCols(parts) => {
                let (rows, total) = node.value.dims2();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if rg(*p) {
                        let mut gp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        add_into(&mut grads[p.0], &gp);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    if rg(*p) {
                        add_into(&mut grads[p.0], &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::GatherRows(a, idx) => {
                let ta = self.value(*a);
                let cols = ta.cols();
                let mut ga = vec![0.0; ta.len()];
                for (r, &src) in idx.iter().enumerate() {
                    for c in 0..cols {
                        ga[src * cols + c] += g[r * cols + c];
                    }
                }
                add_into(&mut grads[a.0], &ga);
            }
            Op::ScaleRows(x, v) => {
                let (tx, tv) = (self.value(*x), self.value(*v));
                let cols = tx.cols();
                if rg(*x) {
                    let gx: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(k, gv)| gv * tv.data()[k / cols])
                        .collect();
                    add_into(&mut grads[x.0], &gx);
                }
                if rg(*v) {
                    let gv: Vec<f64> = (0..tv.len())
                        .map(|r| {
                            (0..cols)
                                .map(|c| g[r * cols + c] * tx.data()[r * cols + c])
                                .sum()
                        })
                        .collect();
                    add_into(&mut grads[v.0], &gv);
                }
            }
            Op::OuterAdd(a, b) => {
                let (n, m) = node.value.dims2();
                if rg(*a) {
                    let ga: Vec<f64> = (0..n).map(|i| g[i * m..(i + 1) * m].iter().sum()).collect();
                    add_into(&mut grads[a.0], &ga);
                }
                if rg(*b) {
                    let mut gb = vec![0.0; m];
                    for i in 0..n {
                        for j in 0..m {
                            gb[j] += g[i * m + j];
                        }
                    }
                    add_into(&mut grads[b.0], &gb);
                }
            }
            Op::Softmax(x, axis) => {
                let y = node.value.data();
                let (rows, cols) = node.value.dims2();
                let (n_slices, slice_len) = match axis {
                    Axis::Cols => (rows, cols),
                    Axis::Rows => (cols, rows),
                };
                let index = |s: usize, k: usize| match axis {
                    Axis::Cols => s * cols + k,
                    Axis::Rows => k * cols + s,
                };
                let mut gx = vec![0.0; y.len()];
                for s in 0..n_slices {
                    let dot: f64 = (0..slice_len).map(|k| y[index(s, k)] * g[index(s, k)]).sum();
                    for k in 0..slice_len {
                        let at = index(s, k);
                        gx[at] = y[at] * (g[at] - dot);
                    }
                }
                add_into(&mut grads[x.0], &gx);
            }
            Op::Pool {
                x,
                kind,
                axis,
                argmax,
            } => {
                let (rows, cols) = self.value(*x).dims2();
                let mut gx = vec![0.0; rows * cols];
                let at = |o: usize, k: usize| match axis {
                    Axis::Rows => k * cols + o,
                    Axis::Cols => o * cols + k,
                };
                let n_in = match axis {
                    Axis::Rows => rows,
                    Axis::Cols => cols,
                };
                for (o, gv) in g.iter().enumerate() {
                    match kind {
                        PoolKind::Mean => {
                            for k in 0..n_in {
                                gx[at(o, k)] += gv / n_in as f64;
                            }
                        }
                        PoolKind::Max => gx[at(o, argmax[o])] += gv,
                    }
                }
                add_into(&mut grads[x.0], &gx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                add_into(&mut grads[x.0], &vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                add_into(&mut grads[x.0], &vec![g[0] / n as f64; n]);
            }
            Op::MulConst(x, w) => {
                let gx: Vec<f64> = g.iter().zip(w).map(|(a, b)| a * b).collect();
                add_into(&mut grads[x.0], &gx);
            }
            Op::Lstm { x, wx, wh, b, cache } => {
                let (steps, d_in) = self.value(*x).dims2();
                let w = LstmWeights {
                    wx: self.value(*wx).data(),
                    wh: self.value(*wh).data(),
                    b: self.value(*b).data(),
                    d_in,
                    hidden: self.value(*wh).rows(),
                };
                let lg = lstm::backward(self.value(*x).data(), steps, w, node.value.data(), cache, g);
                for (v, gv) in [(x, lg.dx), (wx, lg.dwx), (wh, lg.dwh), (b, lg.db)] {
                    if rg(*v) {
                        add_into(&mut grads[v.0], &gv);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                target,
                probs,
            } => {
                let gl: Vec<f64> = probs
                    .iter()
                    .enumerate()
                    .map(|(k, p)| g[0] * (p - if k == *target { 1.0 } else { 0.0 }))
                    .collect();
                add_into(&mut grads[logits.0], &gl);
            }
            Op::Bce { p, targets } => {
                let n = targets.len() as f64;
                let gp: Vec<f64> = self
                    .value(*p)
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&p, &t)| {
                        if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
                            0.0
                        } else {
                            g[0] * (-t / p + (1.0 - t) / (1.0 - p)) / n
                        }
                    })
                    .collect();
                add_into(&mut grads[p.0], &gp);
            }
        }
    }
}
