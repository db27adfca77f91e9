//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends one node to the tape; node indices are a valid
//! topological order, so the backward pass is a single reverse sweep. The
//! tape is rebuilt for every forward pass.

use std::sync::Arc;

use crate::error::{contract, Result, VqlError};
use crate::scalar::{c, Scalar};
use crate::tensor::{matmul_nt_into, matmul_tn_into, softmax_in_place, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    Transpose(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Sum(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Reshape(Var),
    StopGradient,
    /// Forward value taken from elsewhere, gradient routed to the input.
    StraightThrough(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Dynamic computation graph for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable or constant input.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.leaf_shared(Arc::new(value), requires_grad)
    }

    /// Leaf sharing storage with the caller (parameters are not copied).
    pub fn leaf_shared(&mut self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    /// `x[m×n] + row[n]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        let n = xv.cols();
        if rv.len() != n {
            return Err(VqlError::Shape {
                op: "add_row",
                left: xv.shape().to_vec(),
                right: rv.shape().to_vec(),
            });
        }
        let mut out = xv.clone();
        for r in out.data_mut().chunks_mut(n) {
            for (o, &b) in r.iter_mut().zip(rv.data()) {
                *o = *o + b;
            }
        }
        Ok(self.push(out, Op::AddRow(x, row), &[x, row]))
    }

    pub fn scale(&mut self, x: Var, k: T) -> Var {
        let v = self.value(x).map(|e| e * k);
        self.push(v, Op::Scale(x, k), &[x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 2 {
            return Err(VqlError::Shape {
                op: "transpose",
                left: xv.shape().to_vec(),
                right: vec![],
            });
        }
        let v = xv.transpose();
        Ok(self.push(v, Op::Transpose(x), &[x]))
    }

    /// Softmax over the trailing axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x).softmax_rows();
        self.push(v, Op::Softmax(x), &[x])
    }

    /// Layer normalisation over the trailing axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.cols();
        let (gv, bv) = (self.value(gain), self.value(bias));
        if gv.len() != n || bv.len() != n {
            return Err(VqlError::Shape {
                op: "layer_norm",
                left: xv.shape().to_vec(),
                right: gv.shape().to_vec(),
            });
        }
        let nf = T::of_usize(n);
        let eps: T = c(LAYER_NORM_EPS);
        let mut out = xv.clone();
        let mut xhat = Vec::with_capacity(xv.len());
        let mut rstd = Vec::with_capacity(xv.rows());
        for r in out.data_mut().chunks_mut(n) {
            let mean = r.iter().copied().sum::<T>() / nf;
            let var = r.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for (j, o) in r.iter_mut().enumerate() {
                let h = (*o - mean) * rs;
                xhat.push(h);
                *o = h * gv.data()[j] + bv.data()[j];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    /// tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(gelu_fwd);
        self.push(v, Op::Gelu(x), &[x])
    }

    /// Gathers rows of `table[V×d]`; output is `[ids.len()×d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (rows, d) = (tv.rows(), tv.cols());
        if ids.is_empty() {
            return Err(VqlError::Input("embedding lookup with no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(VqlError::Input(format!("id {bad} out of range for table of {rows} rows")));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(tv.row(i));
        }
        let v = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.push(
            v,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Mean token cross-entropy of row-wise logits against target ids.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (n, vocab) = (lv.rows(), lv.cols());
        if targets.len() != n {
            return Err(VqlError::Shape {
                op: "cross_entropy",
                left: lv.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= vocab) {
            return Err(VqlError::Input(format!("target {bad} out of range for {vocab} classes")));
        }
        let mut probs = lv.data().to_vec();
        let mut loss = T::zero();
        for (i, row) in probs.chunks_mut(vocab).enumerate() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            loss = loss + lse - row[targets[i]];
            softmax_in_place(row);
        }
        let v = Tensor::scalar(loss / T::of_usize(n));
        Ok(self.push(
            v,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::of_usize(self.value(x).len());
        let s = self.sum(x);
        self.scale(s, T::one() / n)
    }

    /// Squared Euclidean norm of `a - b`, summed over every element.
    pub fn squared_error(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.sum(sq))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = (xv.rows(), xv.cols());
        if xv.shape().len() != 2 || start + len > n || len == 0 {
            return Err(VqlError::Shape {
                op: "slice_cols",
                left: xv.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        let v = Tensor::new(vec![m, len], data)?;
        Ok(self.push(v, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(*parts.first().ok_or_else(|| contract("concat of nothing"))?);
        let m = first.rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let pv = self.value(p);
            if pv.shape().len() != 2 || pv.rows() != m {
                return Err(VqlError::Shape {
                    op: "concat_cols",
                    left: first.shape().to_vec(),
                    right: pv.shape().to_vec(),
                });
            }
            widths.push(pv.cols());
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let v = Tensor::new(vec![m, n], data)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x), &[x]))
    }

    /// Forward identity; backward deposits nothing upstream.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let v = self.value(x).clone();
        self.nodes.push(Node {
            value: Arc::new(v),
            op: Op::StopGradient,
            requires_grad: false,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// `x + sg[target - x]` as one node: the value is `target` itself, so it
    /// carries no rounding from the sum, and the Jacobian w.r.t. `x` is the
    /// identity.
    pub fn straight_through(&mut self, x: Var, target: Var) -> Result<Var> {
        let (xv, tv) = (self.value(x), self.value(target));
        if xv.shape() != tv.shape() {
            return Err(VqlError::Shape {
                op: "straight_through",
                left: xv.shape().to_vec(),
                right: tv.shape().to_vec(),
            });
        }
        let v = tv.clone();
        Ok(self.push(v, Op::StraightThrough(x), &[x]))
    }

    /// Reverse sweep from a scalar loss. Leaf gradients accumulate across
    /// calls until [`Tape::zero_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            if matches!(self.nodes[i].op, Op::Leaf) {
                let slot = self.nodes[i].grad.get_or_insert_with(|| vec![T::zero(); g.len()]);
                for (s, &v) in slot.iter_mut().zip(&g) {
                    *s = *s + v;
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let mut deposit = |v: Var, f: &dyn Fn(&mut [T])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let n = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
            f(slot);
        };
        match &node.op {
            Op::Leaf | Op::StopGradient => {}
            Op::Add(a, b) => {
                deposit(*a, &|s| add_into(s, g));
                deposit(*b, &|s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                deposit(*a, &|s| add_into(s, g));
                deposit(*b, &|s| {
                    for (o, &v) in s.iter_mut().zip(g) {
                        *o = *o - v;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                deposit(*a, &|s| {
                    for ((o, &v), &y) in s.iter_mut().zip(g).zip(bv) {
                        *o = *o + v * y;
                    }
                });
                deposit(*b, &|s| {
                    for ((o, &v), &x) in s.iter_mut().zip(g).zip(av) {
                        *o = *o + v * x;
                    }
                });
            }
            Op::AddRow(x, row) => {
                deposit(*x, &|s| add_into(s, g));
                let n = self.value(*row).len();
                deposit(*row, &|s| {
                    for r in g.chunks(n) {
                        add_into(s, r);
                    }
                });
            }
            Op::Scale(x, k) => deposit(*x, &|s| {
                for (o, &v) in s.iter_mut().zip(g) {
                    *o = *o + v * *k;
                }
            }),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                deposit(*a, &|s| matmul_nt_into(g, bv.data(), s, m, n, k));
                deposit(*b, &|s| matmul_tn_into(av.data(), g, s, m, k, n));
            }
            Op::Transpose(x) => {
                let (m, n) = (node.value.rows(), node.value.cols());
                deposit(*x, &|s| {
                    for r in 0..m {
                        for col in 0..n {
                            s[col * m + r] = s[col * m + r] + g[r * n + col];
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let n = node.value.cols();
                deposit(*x, &|s| {
                    for ((sr, yr), gr) in s.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                        let dot = yr.iter().zip(gr).fold(T::zero(), |a, (&p, &q)| a + p * q);
                        for ((o, &p), &q) in sr.iter_mut().zip(yr).zip(gr) {
                            *o = *o + p * (q - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gv = self.value(*gain).data();
                let n = gv.len();
                let nf = T::of_usize(n);
                deposit(*x, &|s| {
                    for (r, ((sr, gr), hr)) in s
                        .chunks_mut(n)
                        .zip(g.chunks(n))
                        .zip(xhat.chunks(n))
                        .enumerate()
                    {
                        let dh: Vec<T> = gr.iter().zip(gv).map(|(&a, &b)| a * b).collect();
                        let mean_dh = dh.iter().copied().sum::<T>() / nf;
                        let mean_dh_h = dh.iter().zip(hr).map(|(&a, &b)| a * b).sum::<T>() / nf;
                        for ((o, &d), &h) in sr.iter_mut().zip(&dh).zip(hr) {
                            *o = *o + rstd[r] * (d - mean_dh - h * mean_dh_h);
                        }
                    }
                });
                deposit(*gain, &|s| {
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for ((o, &a), &h) in s.iter_mut().zip(gr).zip(hr) {
                            *o = *o + a * h;
                        }
                    }
                });
                deposit(*bias, &|s| {
                    for gr in g.chunks(n) {
                        add_into(s, gr);
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                deposit(*x, &|s| {
                    for ((o, &v), &xi) in s.iter_mut().zip(g).zip(xv) {
                        *o = *o + v * gelu_grad(xi);
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = node.value.cols();
                deposit(*table, &|s| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut s[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let vocab = self.value(*logits).cols();
                let scale = g[0] / T::of_usize(targets.len());
                deposit(*logits, &|s| {
                    for (r, (sr, pr)) in s.chunks_mut(vocab).zip(probs.chunks(vocab)).enumerate() {
                        for (j, (o, &p)) in sr.iter_mut().zip(pr).enumerate() {
                            let y = if j == targets[r] { T::one() } else { T::zero() };
                            *o = *o + scale * (p - y);
                        }
                    }
                });
            }
            Op::Sum(x) => deposit(*x, &|s| {
                for o in s.iter_mut() {
                    *o = *o + g[0];
                }
            }),
            Op::SliceCols { x, start } => {
                let (m, len) = (node.value.rows(), node.value.cols());
                let n = self.value(*x).cols();
                deposit(*x, &|s| {
                    for r in 0..m {
                        add_into(&mut s[r * n + start..r * n + start + len], &g[r * len..(r + 1) * len]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (m, n) = (node.value.rows(), node.value.cols());
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    deposit(p, &|s| {
                        for r in 0..m {
                            add_into(&mut s[r * w..(r + 1) * w], &g[r * n + off..r * n + off + w]);
                        }
                    });
                    off += w;
                }
            }
            Op::Reshape(x) | Op::StraightThrough(x) => deposit(*x, &|s| add_into(s, g)),
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_fwd<T: Scalar>(x: T) -> T {
    let inner = c::<T>(GELU_K) * (x + c::<T>(GELU_A) * x * x * x);
    c::<T>(0.5) * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let inner = c::<T>(GELU_K) * (x + c::<T>(GELU_A) * x * x * x);
    let t = inner.tanh();
    let dinner = c::<T>(GELU_K) * (T::one() + c::<T>(3.0 * GELU_A) * x * x);
    c::<T>(0.5) * (T::one() + t) + c::<T>(0.5) * x * (T::one() - t * t) * dinner
}
