//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every primitive in execution order, so reverse
//! traversal of the tape is a valid topological order. Graphs are cheap to
//! build and are rebuilt for every forward pass; parameters enter as leaves
//! and their gradients are read back after [`Graph::backward`].

use crate::error::{dim_err, Error, Result};
use crate::tensor::{dot, gemm, Tensor};

/// Default epsilon inside every l2 normalization.
pub const L2_EPS: f64 = 1e-8;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// `a * b`, or `a * b^T` when `trans_b`.
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Row-broadcast product with a vector over the last axis.
    MulRow(Var, Var),
    AddRow(Var, Var),
    /// Product with a one-element tensor.
    MulScalar(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Softplus(Var),
    Square(Var),
    Log(Var, f64),
    Minimum(Var, Var),
    Softmax(Var),
    L2Normalize(Var),
    LayerNorm(Var),
    Concat(Var, Var),
    SliceCols(Var, usize),
    SumAll(Var),
    MeanAll(Var),
    SumLastAxis(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Per-row saved quantities (inverse norms, inverse std).
    aux: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(x, y)| *x += y),
        None => *dst = Some(src.to_vec()),
    }
}

fn add_into_with(dst: &mut Option<Vec<f64>>, len: usize, f: impl Fn(usize) -> f64) {
    let d = dst.get_or_insert_with(|| vec![0.0; len]);
    d.iter_mut().enumerate().for_each(|(i, x)| *x += f(i));
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var], aux: Vec<f64>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(value, op, requires_grad, aux)
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool, aux: Vec<f64>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            aux,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push_node(value, Op::Leaf, requires_grad, Vec::new())
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copies the current value of `v` into a new constant leaf.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient of `v` shaped like its value; zeros if nothing reached it.
    pub fn grad_tensor(&self, v: Var) -> Tensor {
        let value = &self.nodes[v.0].value;
        match &self.grads[v.0] {
            Some(g) => Tensor::new(value.shape().to_vec(), g.clone()).expect("grad shape"),
            None => Tensor::zeros(value.shape()),
        }
    }

    /// Clears all gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }

    // ---- primitives -------------------------------------------------------

    /// Matrix product of a `[m, k]` and a `[k, n]` tensor.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `x * w^T` for a batch `x` of shape `[m, k]` and weight `w` of shape
    /// `[n, k]` (rows are output units).
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        self.matmul_impl(x, w, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 {
            return Err(dim_err(
                "matmul",
                format!(
                    "rank-2 operands required, got {:?} and {:?}",
                    ta.shape(),
                    tb.shape()
                ),
            ));
        }
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let (kb, n) = if trans_b {
            (tb.shape()[1], tb.shape()[0])
        } else {
            (tb.shape()[0], tb.shape()[1])
        };
        if k != kb {
            return Err(dim_err(
                "matmul",
                format!(
                    "inner extents {k} and {kb} differ ({:?} x {:?})",
                    ta.shape(),
                    tb.shape()
                ),
            ));
        }
        let mut out = vec![0.0; m * n];
        let b_strides = if trans_b {
            (1, k as isize)
        } else {
            (n as isize, 1)
        };
        gemm(
            m,
            k,
            n,
            ta.data(),
            (k as isize, 1),
            tb.data(),
            b_strides,
            &mut out,
            false,
        );
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul { a, b, trans_b }, &[a, b], Vec::new()))
    }

    fn zip_map(
        &mut self,
        op: Op,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(name, ta, tb)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, op, &[a, b], Vec::new()))
    }

    fn map(&mut self, op: Op, x: Var, f: impl Fn(f64) -> f64) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(value, op, &[x], Vec::new())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(Op::Add(a, b), a, b, "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(Op::Sub(a, b), a, b, "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(Op::Mul(a, b), a, b, "mul", |x, y| x * y)
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map(Op::Minimum(a, b), a, b, "minimum", f64::min)
    }

    fn row_broadcast(&mut self, x: Var, v: Var, name: &'static str, mul: bool) -> Result<Var> {
        let (tx, tv) = (self.value(x), self.value(v));
        let c = tx.cols();
        if tv.numel() != c {
            return Err(dim_err(
                name,
                format!("vector of length {} against last extent {c}", tv.numel()),
            ));
        }
        let vd = tv.data();
        let mut data = tx.data().to_vec();
        for row in data.chunks_exact_mut(c) {
            for (e, v) in row.iter_mut().zip(vd) {
                if mul {
                    *e *= v;
                } else {
                    *e += v;
                }
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let op = if mul {
            Op::MulRow(x, v)
        } else {
            Op::AddRow(x, v)
        };
        Ok(self.push(value, op, &[x, v], Vec::new()))
    }

    /// `x ⊙ v` with `v` broadcast along every last-axis slice of `x`.
    pub fn mul_row(&mut self, x: Var, v: Var) -> Result<Var> {
        self.row_broadcast(x, v, "mul_row", true)
    }

    pub fn add_row(&mut self, x: Var, v: Var) -> Result<Var> {
        self.row_broadcast(x, v, "add_row", false)
    }

    /// `x * s` for a one-element `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.numel() != 1 {
            return Err(dim_err(
                "mul_scalar",
                format!("scalar expected, got {:?}", sv.shape()),
            ));
        }
        let c = sv.data()[0];
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v * c).collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(value, Op::MulScalar(x, s), &[x, s], Vec::new()))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(Op::Scale(x, c), x, |v| v * c)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.map(Op::Shift(x), x, |v| v + c)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(Op::Relu(x), x, |v| v.max(0.0))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(Op::Tanh(x), x, f64::tanh)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(Op::Exp(x), x, f64::exp)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.map(Op::Softplus(x), x, softplus)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map(Op::Square(x), x, |v| v * v)
    }

    /// `ln(x + eps)`.
    pub fn log(&mut self, x: Var, eps: f64) -> Var {
        self.map(Op::Log(x, eps), x, |v| (v + eps).ln())
    }

    /// Softmax over the last axis, stabilized by max subtraction.
    pub fn softmax_lastaxis(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let mut out = tx.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::Softmax(x), &[x], Vec::new())
    }

    /// Divides each last-axis slice by `sqrt(sum of squares + eps)`.
    pub fn l2_normalize_lastaxis(&mut self, x: Var, eps: f64) -> Var {
        let tx = self.value(x);
        let mut out = tx.clone();
        let mut inv = Vec::with_capacity(out.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let s = 1.0 / (row.iter().map(|v| v * v).sum::<f64>() + eps).sqrt();
            row.iter_mut().for_each(|v| *v *= s);
            inv.push(s);
        }
        self.push(out, Op::L2Normalize(x), &[x], inv)
    }

    /// Zero-mean unit-variance standardization of each last-axis slice
    /// (no affine part).
    pub fn layer_norm_lastaxis(&mut self, x: Var, eps: f64) -> Var {
        let tx = self.value(x);
        let mut out = tx.clone();
        let c = out.cols() as f64;
        let mut inv = Vec::with_capacity(out.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().sum::<f64>() / c;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
            let s = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * s);
            inv.push(s);
        }
        self.push(out, Op::LayerNorm(x), &[x], inv)
    }

    /// Concatenation along the last axis; leading extents must agree.
    pub fn concat_lastaxis(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(dim_err("concat", format!("{sa:?} vs {sb:?}")));
        }
        let (ca, cb) = (ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(ta.numel() + tb.numel());
        for r in 0..ta.rows() {
            data.extend_from_slice(ta.row(r));
            data.extend_from_slice(tb.row(r));
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat(a, b), &[a, b], Vec::new()))
    }

    /// Columns `start..start + len` of every last-axis slice.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        if len == 0 || start + len > tx.cols() {
            return Err(dim_err(
                "slice_cols",
                format!("{start}..{} out of {}", start + len, tx.cols()),
            ));
        }
        let mut data = Vec::with_capacity(tx.rows() * len);
        for r in 0..tx.rows() {
            data.extend_from_slice(&tx.row(r)[start..start + len]);
        }
        let mut shape = tx.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::SliceCols(x, start), &[x], Vec::new()))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x), &[x], Vec::new())
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::MeanAll(x), &[x], Vec::new())
    }

    /// Sums each last-axis slice; the last extent becomes 1.
    pub fn sum_lastaxis(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = (0..tx.rows()).map(|r| tx.row(r).iter().sum()).collect();
        let mut shape = tx.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        let value = Tensor::new(shape, data).expect("row sums");
        self.push(value, Op::SumLastAxis(x), &[x], Vec::new())
    }

    // ---- reverse pass -----------------------------------------------------

    /// Accumulates `d loss / d leaf` into every leaf that requires grad.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Usage(
                "backward called twice without reset_grads".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            backprop_node(&self.nodes, &mut self.grads, i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }
}

/// Adds an owned buffer into a gradient slot, moving it when the slot is
/// still empty.
fn add_owned(dst: &mut Option<Vec<f64>>, src: Vec<f64>) {
    match dst {
        Some(d) => d.iter_mut().zip(&src).for_each(|(x, y)| *x += y),
        None => *dst = Some(src),
    }
}

/// Propagates `g = d loss / d node_i` to the inputs of node `i`.
fn backprop_node(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    let node = &nodes[i];
    let y = node.value.data();
    let wants = |v: Var| nodes[v.0].requires_grad;
    let val = |v: Var| nodes[v.0].value.data();
    match node.op {
        Op::Leaf => {}
        Op::MatMul { a, b, trans_b } => {
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (m, k) = (ta.shape()[0], ta.shape()[1]);
            let n = node.value.shape()[1];
            if wants(a) {
                // dA = G * op(B)^T
                let bt_strides = if trans_b {
                    (k as isize, 1)
                } else {
                    (1, n as isize)
                };
                let slot = &mut grads[a.0];
                let acc = slot.is_some();
                let da = slot.get_or_insert_with(|| vec![0.0; m * k]);
                gemm(m, n, k, g, (n as isize, 1), tb.data(), bt_strides, da, acc);
            }
            if wants(b) {
                let slot = &mut grads[b.0];
                let acc = slot.is_some();
                let db = slot.get_or_insert_with(|| vec![0.0; n * k]);
                if trans_b {
                    // B is [n, k]: dB = G^T * A
                    gemm(
                        n,
                        m,
                        k,
                        g,
                        (1, n as isize),
                        ta.data(),
                        (k as isize, 1),
                        db,
                        acc,
                    );
                } else {
                    // B is [k, n]: dB = A^T * G
                    gemm(
                        k,
                        m,
                        n,
                        ta.data(),
                        (1, k as isize),
                        g,
                        (n as isize, 1),
                        db,
                        acc,
                    );
                }
            }
        }
        Op::Add(a, b) => {
            if wants(a) {
                add_into(&mut grads[a.0], g);
            }
            if wants(b) {
                add_into(&mut grads[b.0], g);
            }
        }
        Op::Sub(a, b) => {
            if wants(a) {
                add_into(&mut grads[a.0], g);
            }
            if wants(b) {
                add_into_with(&mut grads[b.0], g.len(), |j| -g[j]);
            }
        }
        Op::Mul(a, b) => {
            if wants(a) {
                let bv = val(b);
                add_into_with(&mut grads[a.0], g.len(), |j| g[j] * bv[j]);
            }
            if wants(b) {
                let av = val(a);
                add_into_with(&mut grads[b.0], g.len(), |j| g[j] * av[j]);
            }
        }
        Op::Minimum(a, b) => {
            let (av, bv) = (val(a), val(b));
            if wants(a) {
                add_into_with(&mut grads[a.0], g.len(), |j| {
                    if av[j] <= bv[j] {
                        g[j]
                    } else {
                        0.0
                    }
                });
            }
            if wants(b) {
                add_into_with(&mut grads[b.0], g.len(), |j| {
                    if av[j] <= bv[j] {
                        0.0
                    } else {
                        g[j]
                    }
                });
            }
        }
        Op::MulRow(x, v) => {
            let vv = val(v);
            let c = vv.len();
            if wants(x) {
                let dx = grads[x.0].get_or_insert_with(|| vec![0.0; g.len()]);
                for (dr, gr) in dx.chunks_exact_mut(c).zip(g.chunks_exact(c)) {
                    for j in 0..c {
                        dr[j] += gr[j] * vv[j];
                    }
                }
            }
            if wants(v) {
                let mut dv = vec![0.0; c];
                for (gr, xr) in g.chunks_exact(c).zip(val(x).chunks_exact(c)) {
                    for j in 0..c {
                        dv[j] += gr[j] * xr[j];
                    }
                }
                add_owned(&mut grads[v.0], dv);
            }
        }
        Op::AddRow(x, v) => {
            let c = val(v).len();
            if wants(x) {
                add_into(&mut grads[x.0], g);
            }
            if wants(v) {
                let mut dv = vec![0.0; c];
                for gr in g.chunks_exact(c) {
                    for j in 0..c {
                        dv[j] += gr[j];
                    }
                }
                add_owned(&mut grads[v.0], dv);
            }
        }
        Op::MulScalar(x, s) => {
            let sv = val(s)[0];
            if wants(x) {
                add_into_with(&mut grads[x.0], g.len(), |j| g[j] * sv);
            }
            if wants(s) {
                let d = dot(g, val(x));
                add_into(&mut grads[s.0], &[d]);
            }
        }
        Op::Scale(x, c) => add_into_with(&mut grads[x.0], g.len(), |j| g[j] * c),
        Op::Shift(x) => add_into(&mut grads[x.0], g),
        Op::Relu(x) => {
            let xv = val(x);
            add_into_with(&mut grads[x.0], g.len(), |j| {
                if xv[j] > 0.0 {
                    g[j]
                } else {
                    0.0
                }
            });
        }
        Op::Tanh(x) => add_into_with(&mut grads[x.0], g.len(), |j| g[j] * (1.0 - y[j] * y[j])),
        Op::Exp(x) => add_into_with(&mut grads[x.0], g.len(), |j| g[j] * y[j]),
        Op::Softplus(x) => {
            let xv = val(x);
            add_into_with(&mut grads[x.0], g.len(), |j| g[j] * sigmoid(xv[j]));
        }
        Op::Square(x) => {
            let xv = val(x);
            add_into_with(&mut grads[x.0], g.len(), |j| 2.0 * g[j] * xv[j]);
        }
        Op::Log(x, eps) => {
            let xv = val(x);
            add_into_with(&mut grads[x.0], g.len(), |j| g[j] / (xv[j] + eps));
        }
        Op::Softmax(x) => {
            let c = node.value.cols();
            let dx = grads[x.0].get_or_insert_with(|| vec![0.0; g.len()]);
            for ((yr, gr), dr) in y
                .chunks_exact(c)
                .zip(g.chunks_exact(c))
                .zip(dx.chunks_exact_mut(c))
            {
                let s = dot(yr, gr);
                for j in 0..c {
                    dr[j] += yr[j] * (gr[j] - s);
                }
            }
        }
        Op::L2Normalize(x) => {
            let c = node.value.cols();
            let inv = &node.aux;
            let dx = grads[x.0].get_or_insert_with(|| vec![0.0; g.len()]);
            for (r, ((yr, gr), dr)) in y
                .chunks_exact(c)
                .zip(g.chunks_exact(c))
                .zip(dx.chunks_exact_mut(c))
                .enumerate()
            {
                let s = dot(yr, gr);
                for j in 0..c {
                    dr[j] += (gr[j] - yr[j] * s) * inv[r];
                }
            }
        }
        Op::LayerNorm(x) => {
            let c = node.value.cols();
            let cf = c as f64;
            let inv = &node.aux;
            let dx = grads[x.0].get_or_insert_with(|| vec![0.0; g.len()]);
            for (r, ((yr, gr), dr)) in y
                .chunks_exact(c)
                .zip(g.chunks_exact(c))
                .zip(dx.chunks_exact_mut(c))
                .enumerate()
            {
                let mg = gr.iter().sum::<f64>() / cf;
                let mgy = dot(gr, yr) / cf;
                for j in 0..c {
                    dr[j] += inv[r] * (gr[j] - mg - yr[j] * mgy);
                }
            }
        }
        Op::Concat(a, b) => {
            let ca = nodes[a.0].value.cols();
            let cb = nodes[b.0].value.cols();
            let c = ca + cb;
            if wants(a) {
                let da: Vec<f64> = g
                    .chunks_exact(c)
                    .flat_map(|r| r[..ca].iter().copied())
                    .collect();
                add_owned(&mut grads[a.0], da);
            }
            if wants(b) {
                let db: Vec<f64> = g
                    .chunks_exact(c)
                    .flat_map(|r| r[ca..].iter().copied())
                    .collect();
                add_owned(&mut grads[b.0], db);
            }
        }
        Op::SliceCols(x, start) => {
            let len = node.value.cols();
            let cx = nodes[x.0].value.cols();
            let n = nodes[x.0].value.numel();
            let dst = grads[x.0].get_or_insert_with(|| vec![0.0; n]);
            for (r, gr) in g.chunks_exact(len).enumerate() {
                for (j, gj) in gr.iter().enumerate() {
                    dst[r * cx + start + j] += gj;
                }
            }
        }
        Op::SumAll(x) => {
            let n = nodes[x.0].value.numel();
            add_into_with(&mut grads[x.0], n, |_| g[0]);
        }
        Op::MeanAll(x) => {
            let n = nodes[x.0].value.numel();
            add_into_with(&mut grads[x.0], n, |_| g[0] / n as f64);
        }
        Op::SumLastAxis(x) => {
            let c = nodes[x.0].value.cols();
            let n = nodes[x.0].value.numel();
            add_into_with(&mut grads[x.0], n, |j| g[j / c]);
        }
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}
