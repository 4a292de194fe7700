use rand::Rng;

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Tanh,
    Sigmoid,
    Relu,
    Exp,
    Log,
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Matmul(Var, Var),
    Binary(BinaryOp, Var, Var),
    Unary(UnaryOp, Var),
    Scale(Var, S),
    ClampMin(Var, S),
    Reduce {
        op: ReduceOp,
        x: Var,
        axis: usize,
        argmax: Vec<usize>,
    },
    SumAll(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    IndexSelect {
        x: Var,
        indices: Vec<usize>,
    },
    ScatterAdd {
        base: Var,
        indices: Vec<usize>,
        src: Var,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Dropout {
        x: Var,
        mask: Vec<S>,
    },
    Reshape(Var),
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Reverse-mode differentiation tape.
///
/// Records are appended in creation order, so inputs always precede the
/// operations that consume them; `backward` walks the records in exact
/// reverse order. A tape is single-threaded; build one per worker.
#[derive(Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

/// `(outer, axis_len, inner)` decomposition of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn broadcast_dims(
    op: &'static str,
    a: &[usize],
    (ra, ca): (usize, usize),
    b: &[usize],
    (rb, cb): (usize, usize),
) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(ra, rb), dim(ca, cb)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::Dimension {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        }),
    }
}

fn binary_name(op: BinaryOp) -> &'static str {
    match op {
        BinaryOp::Add => "add",
        BinaryOp::Sub => "sub",
        BinaryOp::Mul => "mul",
        BinaryOp::Div => "div",
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
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

    /// Records an input tensor; it receives a gradient iff `requires_grad`.
    pub fn leaf(&mut self, t: Tensor<S>) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    pub fn param(&mut self, t: Tensor<S>) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    /// Gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<S>> {
        let t = &mut self.nodes[v.0].value;
        let g = t.grad().map(<[S]>::to_vec);
        t.zero_grad();
        g
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![S::zero(); m * n];
        S::gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, false);
        let value = Tensor::new(vec![m, n], out)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Matmul(a, b), ng))
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let value = if ta.shape() == tb.shape() {
            let data = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| apply_binary(op, x, y))
                .collect();
            Tensor::new(ta.shape().to_vec(), data)?
        } else {
            let (da, db) = (ta.dims2(), tb.dims2());
            let (r, c) = broadcast_dims(binary_name(op), ta.shape(), da, tb.shape(), db)?;
            let mut data = Vec::with_capacity(r * c);
            for i in 0..r {
                let ia = if da.0 == 1 { 0 } else { i };
                let ib = if db.0 == 1 { 0 } else { i };
                for j in 0..c {
                    let x = ta.data()[ia * da.1 + if da.1 == 1 { 0 } else { j }];
                    let y = tb.data()[ib * db.1 + if db.1 == 1 { 0 } else { j }];
                    data.push(apply_binary(op, x, y));
                }
            }
            let shape = if (r, c) == da && ta.rank() >= tb.rank() {
                ta.shape().to_vec()
            } else if (r, c) == db && tb.rank() >= ta.rank() {
                tb.shape().to_vec()
            } else {
                vec![r, c]
            };
            Tensor::new(shape, data)?
        };
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Binary(op, a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn unary(&mut self, op: UnaryOp, x: Var) -> Result<Var> {
        let tx = self.value(x);
        match op {
            UnaryOp::Log if tx.data().iter().any(|&v| !(v > S::zero())) => {
                return Err(Error::Domain {
                    op: "log",
                    msg: "argument must be positive".into(),
                })
            }
            UnaryOp::Sqrt if tx.data().iter().any(|&v| v < S::zero()) => {
                return Err(Error::Domain {
                    op: "sqrt",
                    msg: "argument must be nonnegative".into(),
                })
            }
            _ => {}
        }
        let value = tx.map(|v| match op {
            UnaryOp::Neg => -v,
            UnaryOp::Tanh => v.tanh(),
            UnaryOp::Sigmoid => sigmoid(v),
            UnaryOp::Relu => v.max(S::zero()),
            UnaryOp::Exp => v.exp(),
            UnaryOp::Log => v.ln(),
            UnaryOp::Sqrt => v.sqrt(),
        });
        let ng = self.needs(x);
        Ok(self.push(value, Op::Unary(op, x), ng))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Tanh, x).expect("total op")
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Sigmoid, x).expect("total op")
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Relu, x).expect("total op")
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Exp, x).expect("total op")
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(UnaryOp::Neg, x).expect("total op")
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Sqrt, x)
    }

    pub fn scale(&mut self, x: Var, c: S) -> Var {
        let value = self.value(x).map(|v| v * c);
        let ng = self.needs(x);
        self.push(value, Op::Scale(x, c), ng)
    }

    /// `max(x, floor)`; the gradient is blocked where the floor is active.
    pub fn clamp_min(&mut self, x: Var, floor: S) -> Var {
        let value = self.value(x).map(|v| v.max(floor));
        let ng = self.needs(x);
        self.push(value, Op::ClampMin(x, floor), ng)
    }

    /// Reduction along `axis`, keeping it as a size-1 dimension. Max routes
    /// the gradient to the first maximal entry.
    pub fn reduce(&mut self, op: ReduceOp, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        if axis >= tx.rank() {
            return Err(Error::Usage(format!(
                "reduce axis {axis} for rank {}",
                tx.rank()
            )));
        }
        let (outer, len, inner) = split_axis(tx.shape(), axis);
        if len == 0 {
            return Err(Error::Usage("reduction over an empty axis".into()));
        }
        let d = tx.data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::new();
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| d[(o * len + k) * inner + i];
                match op {
                    ReduceOp::Sum | ReduceOp::Mean => {
                        let mut s = S::zero();
                        for k in 0..len {
                            s += at(k);
                        }
                        if op == ReduceOp::Mean {
                            s /= S::lit(len as f64);
                        }
                        out.push(s);
                    }
                    ReduceOp::Max => {
                        let mut best = 0;
                        for k in 1..len {
                            if at(k) > at(best) {
                                best = k;
                            }
                        }
                        argmax.push(best);
                        out.push(at(best));
                    }
                }
            }
        }
        let mut shape = tx.shape().to_vec();
        shape[axis] = 1;
        let value = Tensor::new(shape, out)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::Reduce { op, x, axis, argmax }, ng))
    }

    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(ReduceOp::Sum, x, axis)
    }

    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(ReduceOp::Mean, x, axis)
    }

    pub fn max(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(ReduceOp::Max, x, axis)
    }

    /// Sum of every element as a `1×1` tensor.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), ng)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        if axis >= tx.rank() {
            return Err(Error::Usage(format!(
                "softmax axis {axis} for rank {}",
                tx.rank()
            )));
        }
        let (outer, len, inner) = split_axis(tx.shape(), axis);
        let d = tx.data();
        let mut out = vec![S::zero(); d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let mut m = S::neg_infinity();
                for k in 0..len {
                    m = m.max(d[idx(k)]);
                }
                let mut z = S::zero();
                for k in 0..len {
                    let e = (d[idx(k)] - m).exp();
                    out[idx(k)] = e;
                    z += e;
                }
                for k in 0..len {
                    out[idx(k)] /= z;
                }
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::Softmax { x, axis }, ng))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Usage("concat of zero tensors".into()))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::Usage(format!(
                "concat axis {axis} for rank {}",
                base.len()
            )));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.value(v).shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        let ng = inputs.iter().any(|&v| self.needs(v));
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            ng,
        ))
    }

    /// Gathers rows (first-axis slices) of `x`.
    pub fn index_select(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let n = tx.shape().first().copied().unwrap_or(1);
        let width = tx.numel() / n.max(1);
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::Bounds {
                op: "index_select",
                index: bad,
                bound: n,
            });
        }
        let mut out = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            out.extend_from_slice(&tx.data()[i * width..(i + 1) * width]);
        }
        let mut shape = tx.shape().to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        shape[0] = indices.len();
        let value = Tensor::new(shape, out)?;
        let ng = self.needs(x);
        Ok(self.push(
            value,
            Op::IndexSelect {
                x,
                indices: indices.to_vec(),
            },
            ng,
        ))
    }

    /// `base` with row `src[i]` added into row `indices[i]` for every `i`.
    pub fn scatter_add(&mut self, base: Var, indices: &[usize], src: Var) -> Result<Var> {
        let (tb, ts) = (self.value(base), self.value(src));
        let n = tb.shape().first().copied().unwrap_or(1);
        let width = tb.numel() / n.max(1);
        if ts.shape().first().copied() != Some(indices.len()) || ts.numel() != indices.len() * width
        {
            return Err(Error::Dimension {
                op: "scatter_add",
                lhs: tb.shape().to_vec(),
                rhs: ts.shape().to_vec(),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::Bounds {
                op: "scatter_add",
                index: bad,
                bound: n,
            });
        }
        let mut out = tb.data().to_vec();
        for (k, &i) in indices.iter().enumerate() {
            let row = &ts.data()[k * width..(k + 1) * width];
            for (o, &s) in out[i * width..(i + 1) * width].iter_mut().zip(row) {
                *o += s;
            }
        }
        let value = Tensor::new(tb.shape().to_vec(), out)?;
        let ng = self.needs(base) || self.needs(src);
        Ok(self.push(
            value,
            Op::ScatterAdd {
                base,
                indices: indices.to_vec(),
                src,
            },
            ng,
        ))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        if axis >= tx.rank() || start + len > tx.shape()[axis] {
            return Err(Error::Bounds {
                op: "narrow",
                index: start + len,
                bound: tx.shape().get(axis).copied().unwrap_or(0),
            });
        }
        let (outer, full, inner) = split_axis(tx.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * full + start) * inner;
            out.extend_from_slice(&tx.data()[from..from + len * inner]);
        }
        let mut shape = tx.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::new(shape, out)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::Narrow { x, axis, start }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::Reshape(x), ng))
    }

    /// Inverted dropout. Identity when `p == 0` or outside training.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} not in [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = S::lit(1.0 / (1.0 - p));
        let tx = self.value(x);
        let mask: Vec<S> = (0..tx.numel())
            .map(|_| if rng.gen::<f64>() < p { S::zero() } else { keep })
            .collect();
        let data = tx.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let ng = self.needs(x);
        Ok(self.push(value, Op::Dropout { x, mask }, ng))
    }

    /// Accumulates d(loss)/d(leaf) into every `requires_grad` leaf. Leaves
    /// that do not influence the loss get an all-zero gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Usage("backward on an empty tape".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![S::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].value.set_grad(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        for node in &mut self.nodes {
            if matches!(node.op, Op::Leaf) && node.needs_grad && node.value.grad().is_none() {
                let n = node.value.numel();
                node.value.set_grad(vec![S::zero(); n]);
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if let Some(ga) = slot(nodes, grads, *a) {
                    S::gemm(m, n, k, g, false, tb.data(), true, ga, true);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    S::gemm(k, m, n, ta.data(), true, g, false, gb, true);
                }
            }
            Op::Binary(op, a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (da, db) = (ta.dims2(), tb.dims2());
                let (r, c) = (da.0.max(db.0), da.1.max(db.1));
                let (xa, xb) = (ta.data(), tb.data());
                let ia = |i: usize, j: usize| {
                    (if da.0 == 1 { 0 } else { i }) * da.1 + if da.1 == 1 { 0 } else { j }
                };
                let ib = |i: usize, j: usize| {
                    (if db.0 == 1 { 0 } else { i }) * db.1 + if db.1 == 1 { 0 } else { j }
                };
                if let Some(ga) = slot(nodes, grads, *a) {
                    for i in 0..r {
                        for j in 0..c {
                            let gv = g[i * c + j];
                            let (p, q) = (ia(i, j), ib(i, j));
                            ga[p] += match op {
                                BinaryOp::Add | BinaryOp::Sub => gv,
                                BinaryOp::Mul => gv * xb[q],
                                BinaryOp::Div => gv / xb[q],
                            };
                        }
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    for i in 0..r {
                        for j in 0..c {
                            let gv = g[i * c + j];
                            let (p, q) = (ia(i, j), ib(i, j));
                            gb[q] += match op {
                                BinaryOp::Add => gv,
                                BinaryOp::Sub => -gv,
                                BinaryOp::Mul => gv * xa[p],
                                BinaryOp::Div => -gv * xa[p] / (xb[q] * xb[q]),
                            };
                        }
                    }
                }
            }
            Op::Unary(op, x) => {
                let xv = self.nodes[x.0].value.data();
                if let Some(gx) = slot(nodes, grads, *x) {
                    let two = S::lit(2.0);
                    for k in 0..gx.len() {
                        gx[k] += match op {
                            UnaryOp::Neg => -g[k],
                            UnaryOp::Tanh => g[k] * (S::one() - y[k] * y[k]),
                            UnaryOp::Sigmoid => g[k] * y[k] * (S::one() - y[k]),
                            UnaryOp::Relu => {
                                if xv[k] > S::zero() {
                                    g[k]
                                } else {
                                    S::zero()
                                }
                            }
                            UnaryOp::Exp => g[k] * y[k],
                            UnaryOp::Log => g[k] / xv[k],
                            UnaryOp::Sqrt => g[k] / (two * y[k]),
                        };
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    for (o, &gv) in gx.iter_mut().zip(g) {
                        *o += gv * *c;
                    }
                }
            }
            Op::ClampMin(x, floor) => {
                let xv = self.nodes[x.0].value.data();
                if let Some(gx) = slot(nodes, grads, *x) {
                    for k in 0..gx.len() {
                        if xv[k] > *floor {
                            gx[k] += g[k];
                        }
                    }
                }
            }
            Op::Reduce { op, x, axis, argmax } => {
                let shape = self.nodes[x.0].value.shape().to_vec();
                let (outer, len, inner) = split_axis(&shape, *axis);
                if let Some(gx) = slot(nodes, grads, *x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let gv = g[o * inner + i];
                            let at = |k: usize| (o * len + k) * inner + i;
                            match op {
                                ReduceOp::Sum => (0..len).for_each(|k| gx[at(k)] += gv),
                                ReduceOp::Mean => {
                                    let s = gv / S::lit(len as f64);
                                    (0..len).for_each(|k| gx[at(k)] += s);
                                }
                                ReduceOp::Max => gx[at(argmax[o * inner + i])] += gv,
                            }
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    gx.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                if let Some(gx) = slot(nodes, grads, *x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| (o * len + k) * inner + i;
                            let dot: S = (0..len).map(|k| g[at(k)] * y[at(k)]).sum();
                            for k in 0..len {
                                gx[at(k)] += y[at(k)] * (g[at(k)] - dot);
                            }
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let w = self.nodes[v.0].value.shape()[*axis];
                    if let Some(gv) = slot(nodes, grads, v) {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * w * inner;
                            for (d, &s) in gv[dst..dst + w * inner]
                                .iter_mut()
                                .zip(&g[src..src + w * inner])
                            {
                                *d += s;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::IndexSelect { x, indices } => {
                let width = if indices.is_empty() {
                    0
                } else {
                    g.len() / indices.len()
                };
                if let Some(gx) = slot(nodes, grads, *x) {
                    for (k, &r) in indices.iter().enumerate() {
                        for (d, &s) in gx[r * width..(r + 1) * width]
                            .iter_mut()
                            .zip(&g[k * width..(k + 1) * width])
                        {
                            *d += s;
                        }
                    }
                }
            }
            Op::ScatterAdd { base, indices, src } => {
                if let Some(gb) = slot(nodes, grads, *base) {
                    for (d, &s) in gb.iter_mut().zip(g) {
                        *d += s;
                    }
                }
                if let Some(gs) = slot(nodes, grads, *src) {
                    let width = if indices.is_empty() {
                        0
                    } else {
                        gs.len() / indices.len()
                    };
                    for (k, &r) in indices.iter().enumerate() {
                        for (d, &s) in gs[k * width..(k + 1) * width]
                            .iter_mut()
                            .zip(&g[r * width..(r + 1) * width])
                        {
                            *d += s;
                        }
                    }
                }
            }
            Op::Narrow { x, axis, start } => {
                let shape = self.nodes[x.0].value.shape().to_vec();
                let (outer, full, inner) = split_axis(&shape, *axis);
                let len = node.value.shape()[*axis];
                if let Some(gx) = slot(nodes, grads, *x) {
                    for o in 0..outer {
                        let dst = (o * full + start) * inner;
                        let src = o * len * inner;
                        for (d, &s) in gx[dst..dst + len * inner]
                            .iter_mut()
                            .zip(&g[src..src + len * inner])
                        {
                            *d += s;
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    for k in 0..gx.len() {
                        gx[k] += g[k] * mask[k];
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    for (d, &s) in gx.iter_mut().zip(g) {
                        *d += s;
                    }
                }
            }
        }
    }
}

fn slot<'g, S: Scalar>(
    nodes: &[Node<S>],
    grads: &'g mut [Option<Vec<S>>],
    v: Var,
) -> Option<&'g mut Vec<S>> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    let n = nodes[v.0].value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![S::zero(); n]))
}

fn apply_binary<S: Scalar>(op: BinaryOp, x: S, y: S) -> S {
    match op {
        BinaryOp::Add => x + y,
        BinaryOp::Sub => x - y,
        BinaryOp::Mul => x * y,
        BinaryOp::Div => x / y,
    }
}

fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}
