//! Define-by-run reverse-mode automatic differentiation.
//!
//! Every operation on a [`Tape`] appends a node holding its forward value and
//! the ids of its inputs. Nodes are appended in evaluation order, so the node
//! vector is already topologically sorted and [`Tape::backward`] is a single
//! reverse sweep.
//!
//! A node is *tracked* when at least one of its inputs is tracked and grad
//! recording is enabled. Untracked nodes keep their value but record no
//! operation, so gradients never flow into constants or detached values.
//!
//! Broadcasting is limited to the leading batch dimension: for binary ops the
//! right operand may have the shape of the left operand with its first axis
//! removed (a bias row `[d]` against a batch `[b, d]`, or a scalar `[]`
//! against a vector `[b]`).

use crate::error::{Error, Result};
use crate::tensor::{gemm, gemm_into, Tensor};

/// Floor applied to the argument of [`Tape::log`].
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Rows,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    Add(usize, usize, Bcast),
    Sub(usize, usize, Bcast),
    Mul(usize, usize, Bcast),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Exp(usize),
    Log(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Softplus(usize),
    LogSigmoid(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    SumRows(usize),
    Mean(usize),
    Broadcast(usize),
    Reshape(usize),
    Concat(Vec<usize>, usize),
    Slice {
        input: usize,
        axis: usize,
        start: usize,
    },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of [`Tape::backward`]: one accumulated gradient per reached node.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the root w.r.t. `var`; zeros when `var` was not reached
    /// or is untracked.
    pub fn get(&self, var: Var) -> Tensor {
        match self.grads.get(var.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn reached(&self, var: Var) -> bool {
        matches!(self.grads.get(var.0), Some(Some(_)))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Clears all nodes so the tape can be reused for another iteration.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    /// When disabled, new nodes are recorded untracked regardless of inputs.
    pub fn set_grad_enabled(&mut self, enabled: bool) {
        self.grad_enabled = enabled;
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn item(&self, v: Var) -> Result<f64> {
        self.nodes[v.0].value.item()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// A differentiable leaf (a parameter or an input we want gradients for).
    pub fn param(&mut self, value: Tensor) -> Var {
        let tracked = self.grad_enabled;
        self.push_node(
            value,
            if tracked { Op::Leaf } else { Op::Constant },
            tracked,
        )
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Constant, false)
    }

    /// Same value as `v`, cut from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        if !self.nodes[v.0].tracked {
            return v;
        }
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    fn push_node(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let tracked = self.grad_enabled && inputs.iter().any(|&i| self.nodes[i].tracked);
        let op = if tracked { op } else { Op::Constant };
        self.push_node(value, op, tracked)
    }

    fn bcast(&self, op: &'static str, a: Var, b: Var) -> Result<Bcast> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb {
            Ok(Bcast::Same)
        } else if !sa.is_empty() && &sa[1..] == sb {
            Ok(Bcast::Rows)
        } else {
            Err(Error::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            })
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(usize, usize, Bcast) -> Op,
    ) -> Result<Var> {
        let mode = self.bcast(name, a, b)?;
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let data: Vec<f64> = match mode {
            Bcast::Same => av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(&x, &y)| f(x, y))
                .collect(),
            Bcast::Rows => {
                let w = bv.numel();
                av.data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, bv.data()[i % w]))
                    .collect()
            }
        };
        let value = Tensor::raw(av.shape().to_vec(), data);
        Ok(self.push(value, op(a.0, b.0, mode), &[a.0, b.0]))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.nodes[a.0].value.map(f);
        self.push(value, op, &[a.0])
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = gemm(
            self.nodes[a.0].value.data(),
            self.nodes[b.0].value.data(),
            m,
            k,
            n,
        );
        Ok(self.push(
            Tensor::raw(vec![m, n], data),
            Op::MatMul(a.0, b.0),
            &[a.0, b.0],
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a.0, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a.0))
    }

    /// Natural log with the argument floored at [`LOG_FLOOR`]. Negative or
    /// NaN inputs are a domain error.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        if let Some(i) = v.data().iter().position(|&x| !(x >= 0.0)) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("argument {} at flat index {i}", v.data()[i]),
            });
        }
        Ok(self.unary(a, |x| x.max(LOG_FLOOR).ln(), Op::Log(a.0)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a.0))
    }

    /// `log(1 + e^x)`, evaluated as `max(x, 0) + log1p(e^{-|x|})`.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a.0))
    }

    /// `log σ(x) = -softplus(-x)`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| -softplus(-x), Op::LogSigmoid(a.0))
    }

    /// Elementwise clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a.0, lo, hi))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.sum();
        self.push(Tensor::scalar(s), Op::Sum(a.0), &[a.0])
    }

    /// Per-row sum over all trailing axes: `[b, ...] -> [b]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        if v.rank() == 0 {
            return Err(Error::InvalidShape {
                op: "sum_rows",
                shape: vec![],
                reason: "needs a leading batch axis".into(),
            });
        }
        let data: Vec<f64> = (0..v.rows()).map(|i| v.row(i).iter().sum()).collect();
        let value = Tensor::raw(vec![v.rows()], data);
        Ok(self.push(value, Op::SumRows(a.0), &[a.0]))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.nodes[a.0].value.mean();
        self.push(Tensor::scalar(m), Op::Mean(a.0), &[a.0])
    }

    /// Repeats `a` along a new leading axis of length `rows`.
    pub fn broadcast(&mut self, a: Var, rows: usize) -> Result<Var> {
        if rows == 0 {
            return Err(Error::InvalidArgument("broadcast to zero rows".into()));
        }
        let v = &self.nodes[a.0].value;
        let mut shape = vec![rows];
        shape.extend_from_slice(v.shape());
        let data = v.data().repeat(rows);
        Ok(self.push(Tensor::raw(shape, data), Op::Broadcast(a.0), &[a.0]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.nodes[a.0].value.reshape(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape(a.0), &[a.0]))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::InvalidShape {
                op: "concat",
                shape: base,
                reason: format!("axis {axis} out of range"),
            });
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let v = &self.nodes[p.0].value;
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push(
            Tensor::raw(shape, data),
            Op::Concat(ids.clone(), axis),
            &ids,
        ))
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        let shape = v.shape().to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::InvalidShape {
                op: "slice",
                shape,
                reason: format!("cannot take {len} from {start} along axis {axis}"),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&v.data()[base..base + len * inner]);
        }
        let mut out = shape;
        out[axis] = len;
        Ok(self.push(
            Tensor::raw(out, data),
            Op::Slice {
                input: a.0,
                axis,
                start,
            },
            &[a.0],
        ))
    }

    /// Reverse sweep from a scalar root. May run once per recording; call
    /// [`Tape::reset`] before reusing the tape.
    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        if self.consumed {
            return Err(Error::BackwardTwice);
        }
        let rv = &self.nodes[root.0].value;
        if rv.numel() != 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if node.tracked {
                self.propagate(id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }

        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.filter(|_| n.tracked)
                    .map(|g| Tensor::raw(n.value.shape().to_vec(), g))
            })
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = node.value.data();
        let val = |i: usize| self.nodes[i].value.data();
        let tracked = |i: usize| self.nodes[i].tracked;

        let mut acc = |i: usize, contrib: Vec<f64>| {
            if !self.nodes[i].tracked {
                return;
            }
            match &mut grads[i] {
                Some(existing) => existing.iter_mut().zip(&contrib).for_each(|(e, c)| *e += c),
                slot => *slot = Some(contrib),
            }
        };
        let elementwise = |i: usize, f: &dyn Fn(usize) -> f64| -> Vec<f64> {
            (0..self.nodes[i].value.numel()).map(f).collect()
        };

        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let sa = self.nodes[*a].value.shape();
                let sb = self.nodes[*b].value.shape();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if tracked(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_into(g, false, val(*b), true, &mut da, m, n, k);
                    acc(*a, da);
                }
                if tracked(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_into(val(*a), true, g, false, &mut db, k, m, n);
                    acc(*b, db);
                }
            }
            Op::Add(a, b, mode) | Op::Sub(a, b, mode) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                acc(*a, g.to_vec());
                if tracked(*b) {
                    let db = match mode {
                        Bcast::Same => g.iter().map(|x| sign * x).collect(),
                        Bcast::Rows => {
                            let w = self.nodes[*b].value.numel();
                            let mut db = vec![0.0; w];
                            for (i, x) in g.iter().enumerate() {
                                db[i % w] += sign * x;
                            }
                            db
                        }
                    };
                    acc(*b, db);
                }
            }
            Op::Mul(a, b, mode) => {
                let (av, bv) = (val(*a), val(*b));
                let w = bv.len();
                if tracked(*a) {
                    let da = g.iter().enumerate().map(|(i, x)| x * bv[i % w]).collect();
                    acc(*a, da);
                }
                if tracked(*b) {
                    let db = match mode {
                        Bcast::Same => g.iter().zip(av).map(|(x, y)| x * y).collect(),
                        Bcast::Rows => {
                            let mut db = vec![0.0; w];
                            for (i, x) in g.iter().enumerate() {
                                db[i % w] += x * av[i];
                            }
                            db
                        }
                    };
                    acc(*b, db);
                }
            }
            Op::Neg(a) => acc(*a, g.iter().map(|x| -x).collect()),
            Op::Scale(a, c) => acc(*a, g.iter().map(|x| x * c).collect()),
            Op::AddScalar(a) => acc(*a, g.to_vec()),
            Op::Exp(a) => acc(*a, elementwise(*a, &|i| g[i] * out[i])),
            Op::Log(a) => {
                let x = val(*a);
                acc(
                    *a,
                    elementwise(*a, &|i| if x[i] >= LOG_FLOOR { g[i] / x[i] } else { 0.0 }),
                )
            }
            Op::Sigmoid(a) => acc(*a, elementwise(*a, &|i| g[i] * out[i] * (1.0 - out[i]))),
            Op::Tanh(a) => acc(*a, elementwise(*a, &|i| g[i] * (1.0 - out[i] * out[i]))),
            Op::Relu(a) => {
                let x = val(*a);
                acc(
                    *a,
                    elementwise(*a, &|i| if x[i] > 0.0 { g[i] } else { 0.0 }),
                )
            }
            Op::Softplus(a) => {
                let x = val(*a);
                acc(*a, elementwise(*a, &|i| g[i] * sigmoid(x[i])))
            }
            Op::LogSigmoid(a) => {
                let x = val(*a);
                acc(*a, elementwise(*a, &|i| g[i] * sigmoid(-x[i])))
            }
            Op::Clamp(a, lo, hi) => {
                let x = val(*a);
                acc(
                    *a,
                    elementwise(*a, &|i| {
                        if x[i] >= *lo && x[i] <= *hi {
                            g[i]
                        } else {
                            0.0
                        }
                    }),
                )
            }
            Op::Sum(a) => acc(*a, vec![g[0]; self.nodes[*a].value.numel()]),
            Op::Mean(a) => {
                let n = self.nodes[*a].value.numel();
                acc(*a, vec![g[0] / n as f64; n])
            }
            Op::SumRows(a) => {
                let w = self.nodes[*a].value.row_len();
                acc(*a, elementwise(*a, &|i| g[i / w]))
            }
            Op::Broadcast(a) => {
                let w = self.nodes[*a].value.numel();
                let mut da = vec![0.0; w];
                for (i, x) in g.iter().enumerate() {
                    da[i % w] += x;
                }
                acc(*a, da)
            }
            Op::Reshape(a) => acc(*a, g.to_vec()),
            Op::Concat(parts, axis) => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let chunk = self.nodes[p].value.shape()[*axis] * inner;
                    if tracked(p) {
                        let mut dp = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            let base = o * row + offset;
                            dp.extend_from_slice(&g[base..base + chunk]);
                        }
                        acc(p, dp);
                    }
                    offset += chunk;
                }
            }
            Op::Slice { input, axis, start } => {
                let in_shape = self.nodes[*input].value.shape();
                let len = node.value.shape()[*axis];
                let outer: usize = in_shape[..*axis].iter().product();
                let inner: usize = in_shape[axis + 1..].iter().product();
                let mut da = vec![0.0; self.nodes[*input].value.numel()];
                for o in 0..outer {
                    let src = o * len * inner;
                    let dst = (o * in_shape[*axis] + start) * inner;
                    da[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                acc(*input, da)
            }
        }
    }
}
