//! Dense binary64 tensors with a tape-based reverse mode.
//!
//! Forward operations are recorded on a [`Tape`] in execution order, so the
//! tape is topologically sorted by construction and `backward` is a single
//! reverse sweep. There is no implicit broadcasting: operands of elementwise
//! operations must have identical shapes, and expansion is explicit
//! (`expand_cols`, `gather_rows`). The only exceptions are the scalar
//! multiplications `scale` (by a constant) and `mul_scalar` (by a one-element
//! tensor).
//!
//! Rank-1 tensors of length `n` act as `n x 1` columns wherever a matrix is
//! expected.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "new",
                detail: format!("shape {shape:?} needs {n} values, got {}", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// `(rows, cols)` view; rank-1 tensors are columns.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [n] => Some((*n, 1)),
            [r, c] => Some((*r, *c)),
            _ => None,
        }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        let (_, cols) = self.dims2().expect("rank <= 2");
        self.data[r * cols + c]
    }
}

impl fmt::Display for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.data)
    }
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Sum(Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulScalar { x: Var, s: Var },
    Softmax { x: Var, axis: usize },
    Pow(Var, f64),
    Log2(Var),
    GatherCols { table: Var, idx: Vec<usize> },
    GatherRows { table: Var, idx: Vec<usize> },
    ExpandCols(Var),
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Sum(..) => "sum",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MulScalar { .. } => "mul_scalar",
            Op::Softmax { .. } => "softmax",
            Op::Pow(..) => "pow",
            Op::Log2(..) => "log2",
            Op::GatherCols { .. } => "gather_cols",
            Op::GatherRows { .. } => "gather_rows",
            Op::ExpandCols(..) => "expand_cols",
            Op::Reshape(..) => "reshape",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::MulScalar { x, s } => vec![*x, *s],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::Sum(x)
            | Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Pow(x, _)
            | Op::Log2(x)
            | Op::ExpandCols(x)
            | Op::Reshape(x)
            | Op::Slice { x, .. }
            | Op::Softmax { x, .. }
            | Op::GatherCols { table: x, .. }
            | Op::GatherRows { table: x, .. } => vec![*x],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Records forward operations and replays them backwards.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Layout of the slices a softmax along `axis` normalizes:
/// `(groups, group length, element stride, group stride)`.
fn softmax_layout(shape: &[usize], axis: usize) -> Option<(usize, usize, usize, usize)> {
    match (shape, axis) {
        ([n], 0) => Some((1, *n, 1, 0)),
        ([r, c], 0) => Some((*c, *r, *c, 1)),
        ([r, c], 1) => Some((*r, *c, 1, *c)),
        _ => None,
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        #[cfg(debug_assertions)]
        {
            let inputs_finite = op.inputs().iter().all(|v| self.nodes[v.0].value.is_finite());
            debug_assert!(
                !inputs_finite || value.is_finite(),
                "{} produced a non-finite value from finite inputs",
                op.name()
            );
        }
        self.nodes.push(Node { value, op, needs_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf; gradients are kept for it when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` loss w.r.t. `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad.as_ref().map(|g| Tensor { shape: node.value.shape.clone(), data: g.clone() })
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        self.value(v)
            .dims2()
            .ok_or_else(|| shape_err(op, format!("expected rank <= 2, got {:?}", self.shape(v))))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(shape_err("matmul", format!("{:?} x {:?}", self.shape(a), self.shape(b))));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(&self.value(a).data, &self.value(b).data, m, k, n, &mut out);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul(a, b)))
    }

    fn zip_with(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(op.name(), a, b)?;
        let (x, y) = (&self.value(a).data, &self.value(b).data);
        let data = x.iter().zip(y).map(|(p, q)| f(*p, *q)).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor { shape, data }, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Add(a, b), a, b, |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Sub(a, b), a, b, |p, q| p - q)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Mul(a, b), a, b, |p, q| p * q)
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let v = self.value(x);
        let t = Tensor { shape: v.shape.clone(), data: v.data.iter().map(|&a| f(a)).collect() };
        self.push(t, op)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, Op::Tanh(x), f64::tanh)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.map(x, Op::Scale(x, s), |a| a * s)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.map(x, Op::AddScalar(x), |a| a + s)
    }

    /// Elementwise `x^p` for a constant exponent.
    pub fn pow(&mut self, x: Var, p: f64) -> Var {
        self.map(x, Op::Pow(x, p), |a| if p == 0.0 { 1.0 } else { a.powf(p) })
    }

    pub fn log2(&mut self, x: Var) -> Var {
        self.map(x, Op::Log2(x), f64::log2)
    }

    /// Multiplies every element of `x` by the one-element tensor `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self
            .value(s)
            .item()
            .ok_or_else(|| shape_err("mul_scalar", format!("scalar operand has shape {:?}", self.shape(s))))?;
        Ok(self.map(x, Op::MulScalar { x, s }, |a| a * sv))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(shape_err("reshape", format!("{:?} -> {shape:?}", self.shape(x))));
        }
        let t = Tensor { shape: shape.to_vec(), data: self.value(x).data.clone() };
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Concatenates rank-2 (or rank-1 along axis 0) tensors.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no operands".into()));
        }
        let rank1 = parts.iter().all(|p| self.shape(*p).len() == 1);
        if rank1 && axis == 0 {
            let data: Vec<f64> = parts.iter().flat_map(|p| self.value(*p).data.iter().copied()).collect();
            return Ok(self.push(Tensor::vector(data), Op::Concat { parts: parts.to_vec(), axis }));
        }
        let dims: Vec<(usize, usize)> = parts.iter().map(|p| self.dims2("concat", *p)).collect::<Result<_>>()?;
        let shapes = || parts.iter().map(|p| self.shape(*p).to_vec()).collect::<Vec<_>>();
        match axis {
            0 => {
                let c = dims[0].1;
                if dims.iter().any(|d| d.1 != c) {
                    return Err(shape_err("concat", format!("axis 0 column mismatch: {:?}", shapes())));
                }
                let rows = dims.iter().map(|d| d.0).sum();
                let data = parts.iter().flat_map(|p| self.value(*p).data.iter().copied()).collect();
                Ok(self.push(Tensor { shape: vec![rows, c], data }, Op::Concat { parts: parts.to_vec(), axis }))
            }
            1 => {
                let r = dims[0].0;
                if dims.iter().any(|d| d.0 != r) {
                    return Err(shape_err("concat", format!("axis 1 row mismatch: {:?}", shapes())));
                }
                let cols: usize = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(r * cols);
                for i in 0..r {
                    for (p, d) in parts.iter().zip(&dims) {
                        data.extend_from_slice(&self.value(*p).data[i * d.1..(i + 1) * d.1]);
                    }
                }
                Ok(self.push(Tensor { shape: vec![r, cols], data }, Op::Concat { parts: parts.to_vec(), axis }))
            }
            _ => Err(shape_err("concat", format!("axis {axis} unsupported"))),
        }
    }

    /// Contiguous range `[start, start + len)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let bad = || shape_err("slice", format!("{shape:?} axis {axis} range {start}..{}", start + len));
        let t = match (shape.as_slice(), axis) {
            ([n], 0) => {
                if start + len > *n {
                    return Err(bad());
                }
                Tensor::vector(self.value(x).data[start..start + len].to_vec())
            }
            ([r, c], 0) => {
                if start + len > *r {
                    return Err(bad());
                }
                Tensor { shape: vec![len, *c], data: self.value(x).data[start * c..(start + len) * c].to_vec() }
            }
            ([r, c], 1) => {
                if start + len > *c {
                    return Err(bad());
                }
                let src = &self.value(x).data;
                let data = (0..*r).flat_map(|i| src[i * c + start..i * c + start + len].iter().copied()).collect();
                Tensor { shape: vec![*r, len], data }
            }
            _ => return Err(bad()),
        };
        Ok(self.push(t, Op::Slice { x, axis, start }))
    }

    /// Softmax over `axis` (rank-1 tensors use axis 0).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (groups, len, stride, gstride) = softmax_layout(&shape, axis)
            .ok_or_else(|| shape_err("softmax", format!("{shape:?} axis {axis}")))?;
        let src = &self.value(x).data;
        let mut out = vec![0.0; src.len()];
        for g in 0..groups {
            let base = g * gstride;
            let idx = |i: usize| base + i * stride;
            let mx = (0..len).map(|i| src[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for i in 0..len {
                let e = (src[idx(i)] - mx).exp();
                out[idx(i)] = e;
                total += e;
            }
            for i in 0..len {
                out[idx(i)] /= total;
            }
        }
        Ok(self.push(Tensor { shape, data: out }, Op::Softmax { x, axis }))
    }

    /// Selects columns of a rank-2 table: result is `rows x idx.len()`.
    pub fn gather_cols(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2("gather_cols", table)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= c) {
            return Err(Error::Index(format!("gather_cols: column {bad} out of range for {c}")));
        }
        let src = &self.value(table).data;
        let mut data = vec![0.0; r * idx.len()];
        for i in 0..r {
            for (j, &col) in idx.iter().enumerate() {
                data[i * idx.len() + j] = src[i * c + col];
            }
        }
        Ok(self.push(Tensor { shape: vec![r, idx.len()], data }, Op::GatherCols { table, idx: idx.to_vec() }))
    }

    /// Selects rows (elements, for rank-1 tables).
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        let (r, c) = self.dims2("gather_rows", table)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::Index(format!("gather_rows: row {bad} out of range for {r}")));
        }
        let src = &self.value(table).data;
        let data: Vec<f64> = idx.iter().flat_map(|&i| src[i * c..(i + 1) * c].iter().copied()).collect();
        let out_shape = if shape.len() == 1 { vec![idx.len()] } else { vec![idx.len(), c] };
        Ok(self.push(Tensor { shape: out_shape, data }, Op::GatherRows { table, idx: idx.to_vec() }))
    }

    /// Repeats a column vector (`[n]` or `[n, 1]`) into `n x k`.
    pub fn expand_cols(&mut self, x: Var, k: usize) -> Result<Var> {
        let (n, c) = self.dims2("expand_cols", x)?;
        if c != 1 {
            return Err(shape_err("expand_cols", format!("expected a column, got {:?}", self.shape(x))));
        }
        let src = &self.value(x).data;
        let data = (0..n).flat_map(|i| std::iter::repeat(src[i]).take(k)).collect();
        Ok(self.push(Tensor { shape: vec![n, k], data }, Op::ExpandCols(x)))
    }

    /// First recorded operation whose output is not finite.
    pub fn first_non_finite(&self) -> Option<String> {
        self.nodes.iter().enumerate().find(|(_, n)| !n.value.is_finite()).map(|(i, n)| {
            format!("tape entry {i} ({}) with shape {:?}", n.op.name(), n.value.shape)
        })
    }

    /// Clears accumulated gradients so `backward` may run again.
    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    /// Fills gradients of `loss` (a one-element tensor) w.r.t. every
    /// recorded value that depends on a `requires_grad` leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::State("backward already ran; call zero_grads first".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::domain(format!("loss must be scalar, got shape {:?}", self.shape(loss))));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else { continue };
            if self.nodes[i].needs_grad {
                let op = self.nodes[i].op.clone();
                self.propagate(i, &op, &g);
            }
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [f64], &[Node])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let mut g = self.nodes[v.0]
            .grad
            .take()
            .unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(&mut g, &self.nodes);
        self.nodes[v.0].grad = Some(g);
    }

    fn propagate(&mut self, out: usize, op: &Op, g: &[f64]) {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(*a, |ga, _| ga.iter_mut().zip(g).for_each(|(x, d)| *x += d));
                self.accumulate(*b, |gb, _| gb.iter_mut().zip(g).for_each(|(x, d)| *x += d));
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, |ga, _| ga.iter_mut().zip(g).for_each(|(x, d)| *x += d));
                self.accumulate(*b, |gb, _| gb.iter_mut().zip(g).for_each(|(x, d)| *x -= d));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, |ga, n| {
                    for ((x, d), y) in ga.iter_mut().zip(g).zip(&n[b.0].value.data) {
                        *x += d * y;
                    }
                });
                self.accumulate(b, |gb, n| {
                    for ((x, d), y) in gb.iter_mut().zip(g).zip(&n[a.0].value.data) {
                        *x += d * y;
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (m, k) = self.nodes[a.0].value.dims2().expect("checked in forward");
                let n_cols = self.nodes[b.0].value.dims2().expect("checked in forward").1;
                // dA = dC * B^T
                self.accumulate(a, |ga, nodes| {
                    let bv = &nodes[b.0].value.data;
                    for i in 0..m {
                        let grow = &g[i * n_cols..(i + 1) * n_cols];
                        for p in 0..k {
                            let brow = &bv[p * n_cols..(p + 1) * n_cols];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                // dB = A^T * dC
                self.accumulate(b, |gb, nodes| {
                    let av = &nodes[a.0].value.data;
                    for i in 0..m {
                        let grow = &g[i * n_cols..(i + 1) * n_cols];
                        for p in 0..k {
                            let s = av[i * k + p];
                            if s == 0.0 {
                                continue;
                            }
                            for (x, d) in gb[p * n_cols..(p + 1) * n_cols].iter_mut().zip(grow) {
                                *x += s * d;
                            }
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                self.accumulate(*x, |gx, n| {
                    for ((a, d), y) in gx.iter_mut().zip(g).zip(&n[out].value.data) {
                        *a += d * y * (1.0 - y);
                    }
                });
            }
            Op::Tanh(x) => {
                self.accumulate(*x, |gx, n| {
                    for ((a, d), y) in gx.iter_mut().zip(g).zip(&n[out].value.data) {
                        *a += d * (1.0 - y * y);
                    }
                });
            }
            Op::Scale(x, s) => {
                let s = *s;
                self.accumulate(*x, |gx, _| gx.iter_mut().zip(g).for_each(|(a, d)| *a += d * s));
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                self.accumulate(*x, |gx, _| gx.iter_mut().zip(g).for_each(|(a, d)| *a += d));
            }
            Op::MulScalar { x, s } => {
                let (x, s) = (*x, *s);
                let sv = self.nodes[s.0].value.data[0];
                self.accumulate(x, |gx, _| gx.iter_mut().zip(g).for_each(|(a, d)| *a += d * sv));
                self.accumulate(s, |gs, n| {
                    gs[0] += g.iter().zip(&n[x.0].value.data).map(|(d, v)| d * v).sum::<f64>();
                });
            }
            Op::Sum(x) => {
                let d = g[0];
                self.accumulate(*x, |gx, _| gx.iter_mut().for_each(|a| *a += d));
            }
            Op::Pow(x, p) => {
                let p = *p;
                if p == 0.0 {
                    return;
                }
                self.accumulate(*x, |gx, n| {
                    for ((a, d), v) in gx.iter_mut().zip(g).zip(&n[x.0].value.data) {
                        *a += d * p * v.powf(p - 1.0);
                    }
                });
            }
            Op::Log2(x) => {
                self.accumulate(*x, |gx, n| {
                    for ((a, d), v) in gx.iter_mut().zip(g).zip(&n[x.0].value.data) {
                        *a += d / (v * std::f64::consts::LN_2);
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let shape = self.nodes[out].value.shape.clone();
                let (groups, len, stride, gstride) = softmax_layout(&shape, *axis).expect("checked in forward");
                self.accumulate(*x, |gx, n| {
                    let y = &n[out].value.data;
                    for grp in 0..groups {
                        let base = grp * gstride;
                        let dot: f64 = (0..len).map(|i| g[base + i * stride] * y[base + i * stride]).sum();
                        for i in 0..len {
                            let j = base + i * stride;
                            gx[j] += y[j] * (g[j] - dot);
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let rank1 = parts.iter().all(|p| self.nodes[p.0].value.shape.len() == 1);
                if rank1 || *axis == 0 {
                    let mut off = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        let seg = &g[off..off + len];
                        self.accumulate(*p, |gp, _| gp.iter_mut().zip(seg).for_each(|(a, d)| *a += d));
                        off += len;
                    }
                } else {
                    let total: usize = self.nodes[out].value.shape[1];
                    let mut col = 0;
                    for p in parts {
                        let (r, c) = self.nodes[p.0].value.dims2().expect("checked in forward");
                        self.accumulate(*p, |gp, _| {
                            for i in 0..r {
                                for j in 0..c {
                                    gp[i * c + j] += g[i * total + col + j];
                                }
                            }
                        });
                        col += c;
                    }
                }
            }
            Op::Slice { x, axis, start } => {
                let src_shape = self.nodes[x.0].value.shape.clone();
                let out_shape = self.nodes[out].value.shape.clone();
                let start = *start;
                let axis = *axis;
                self.accumulate(*x, |gx, _| match (src_shape.as_slice(), axis) {
                    ([_], _) => gx[start..start + g.len()].iter_mut().zip(g).for_each(|(a, d)| *a += d),
                    ([_, c], 0) => gx[start * c..start * c + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(a, d)| *a += d),
                    ([r, c], _) => {
                        let len = out_shape[1];
                        for i in 0..*r {
                            for j in 0..len {
                                gx[i * c + start + j] += g[i * len + j];
                            }
                        }
                    }
                    _ => unreachable!("slice shapes checked in forward"),
                });
            }
            Op::GatherCols { table, idx } => {
                let c = self.nodes[table.0].value.dims2().expect("checked").1;
                let k = idx.len();
                self.accumulate(*table, |gt, _| {
                    for i in 0..g.len() / k.max(1) {
                        for (j, &col) in idx.iter().enumerate() {
                            gt[i * c + col] += g[i * k + j];
                        }
                    }
                });
            }
            Op::GatherRows { table, idx } => {
                let c = self.nodes[table.0].value.dims2().expect("checked").1;
                self.accumulate(*table, |gt, _| {
                    for (j, &row) in idx.iter().enumerate() {
                        for q in 0..c {
                            gt[row * c + q] += g[j * c + q];
                        }
                    }
                });
            }
            Op::ExpandCols(x) => {
                let k = self.nodes[out].value.shape[1];
                self.accumulate(*x, |gx, _| {
                    for (i, a) in gx.iter_mut().enumerate() {
                        *a += g[i * k..(i + 1) * k].iter().sum::<f64>();
                    }
                });
            }
        }
    }
}

/// Compares an analytic gradient against central differences of `f`.
///
/// Returns `max_i |g_a - g_n| / max(1e-8, |g_a| + |g_n|)`.
pub fn finite_diff_check<F>(mut f: F, params: &[f64], analytic: &[f64], eps: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "one analytic gradient entry per parameter");
    let mut x = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let up = f(&x);
        x[i] = orig - eps;
        let down = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn activations_at_zero() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::scalar(0.0));
        let s = t.sigmoid(z);
        let h = t.tanh(z);
        assert_eq!(t.value(s).item(), Some(0.5));
        assert_eq!(t.value(h).item(), Some(0.0));
    }

    #[test]
    fn identity_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::new();
        let x = rand_tensor(&mut rng, &[3, 5]);
        let i = t.constant(Tensor::identity(3));
        let xv = t.constant(x.clone());
        let y = t.matmul(i, xv).unwrap();
        assert_eq!(t.value(y), &x);
    }

    #[test]
    fn softmax_matches_scalar_reference() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let y = t.softmax(x, 0).unwrap();
        let denom = 1f64.exp() + 2f64.exp() + 3f64.exp();
        let want = [1f64.exp() / denom, 2f64.exp() / denom, 3f64.exp() / denom];
        for (a, b) in t.value(y).data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((t.value(y).data().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        let c = t.constant(Tensor::zeros(&[3, 2]));
        match t.matmul(a, b) {
            Err(Error::Shape { op, detail }) => {
                assert_eq!(op, "matmul");
                assert!(detail.contains("[2, 3]"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(t.add(a, c), Err(Error::Shape { op: "add", .. })));
        assert!(matches!(t.mul(a, c), Err(Error::Shape { op: "mul", .. })));
        assert!(matches!(t.concat(&[a, c], 0), Err(Error::Shape { op: "concat", .. })));
        assert!(matches!(t.slice(a, 1, 2, 2), Err(Error::Shape { op: "slice", .. })));
        assert!(matches!(t.gather_cols(a, &[3]), Err(Error::Index(_))));
    }

    #[test]
    fn simple_gradients() {
        let mut t = Tape::new();
        let xv = Tensor::vector(vec![1.0, -2.0, 3.5]);
        let x = t.param(xv.clone());
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut t = Tape::new();
        let x = t.param(xv.clone());
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[2.0, -4.0, 7.0]);
    }

    #[test]
    fn backward_state_errors() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::Domain(_))));
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert!(matches!(t.backward(s), Err(Error::State(_))));
        t.zero_grads();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn finite_diff_harness_basics() {
        let rel = finite_diff_check(|x| x[0] * x[0], &[3.0], &[6.0], 1e-5);
        assert!(rel < 1e-9, "{rel}");
        assert_eq!(finite_diff_check(|_| 4.0, &[1.0, 2.0], &[0.0, 0.0], 1e-5), 0.0);
    }

    /// Runs every primitive on flat parameters `p` and returns a scalar.
    fn composite(t: &mut Tape, p: &[f64], grad: bool) -> (Var, Var) {
        let x = t.leaf(Tensor::new(vec![p.len()], p.to_vec()).unwrap(), grad);
        let a = t.slice(x, 0, 0, 12).unwrap();
        let a = t.reshape(a, &[3, 4]).unwrap();
        let b = t.slice(x, 0, 12, 8).unwrap();
        let b = t.reshape(b, &[4, 2]).unwrap();
        let ab = t.matmul(a, b).unwrap(); // 3x2
        let s1 = t.sigmoid(ab);
        let s2 = t.tanh(ab);
        let m = t.mul(s1, s2).unwrap();
        let d = t.sub(m, s1).unwrap();
        let c0 = t.concat(&[d, ab], 1).unwrap(); // 3x4
        let c1 = t.concat(&[c0, a], 0).unwrap(); // 6x4
        let sm = t.softmax(c1, 1).unwrap();
        let sm0 = t.softmax(c1, 0).unwrap();
        let e = t.add(sm, sm0).unwrap();
        let cols = t.gather_cols(e, &[0, 3, 3, 1]).unwrap();
        let rows = t.gather_rows(cols, &[5, 0, 0]).unwrap();
        let sc = t.slice(x, 0, 20, 1).unwrap();
        let r = t.mul_scalar(rows, sc).unwrap();
        let r = t.scale(r, 1.7);
        let r = t.add_scalar(r, 2.0);
        let r = t.pow(r, 2.5);
        let r = t.log2(r);
        let col = t.slice(x, 0, 21, 3).unwrap();
        let ex = t.expand_cols(col, 4).unwrap();
        let r = t.add(r, ex).unwrap();
        let s = t.sum(r);
        (x, s)
    }

    #[test]
    fn all_primitives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let p: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut t = Tape::new();
            let (x, s) = composite(&mut t, &p, true);
            t.backward(s).unwrap();
            let g = t.grad(x).unwrap();
            let f = |q: &[f64]| {
                let mut t = Tape::new();
                let (_, s) = composite(&mut t, q, false);
                t.value(s).item().unwrap()
            };
            let rel = finite_diff_check(f, &p, g.data(), 1e-5);
            assert!(rel < 1e-5, "rel err {rel}");
        }
    }

    #[test]
    fn three_layer_network_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let shapes = [[4, 3], [4, 4], [1, 4]];
        let ws: Vec<Tensor> = shapes.iter().map(|s| rand_tensor(&mut rng, s)).collect();
        let input = rand_tensor(&mut rng, &[3, 2]);
        let run = |t: &mut Tape, ws: &[Tensor]| {
            let vars: Vec<Var> = ws.iter().map(|w| t.param(w.clone())).collect();
            let mut h = t.constant(input.clone());
            for (i, w) in vars.iter().enumerate() {
                h = t.matmul(*w, h).unwrap();
                if i < 2 {
                    h = t.tanh(h);
                }
            }
            let sq = t.mul(h, h).unwrap();
            (vars, t.sum(sq))
        };
        let mut t = Tape::new();
        let (vars, loss) = run(&mut t, &ws);
        t.backward(loss).unwrap();
        for (li, v) in vars.iter().enumerate() {
            let g = t.grad(*v).unwrap();
            let f = |q: &[f64]| {
                let mut ws2 = ws.clone();
                ws2[li] = Tensor::new(ws[li].shape().to_vec(), q.to_vec()).unwrap();
                let mut t = Tape::new();
                let (_, l) = run(&mut t, &ws2);
                t.value(l).item().unwrap()
            };
            let rel = finite_diff_check(f, ws[li].data(), g.data(), 1e-5);
            assert!(rel < 1e-6, "layer {li}: {rel}");
        }
    }

    #[test]
    fn reused_values_accumulate() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        let a = t.scale(x, 2.0);
        let b = t.mul(x, x).unwrap();
        let c = t.add(a, b).unwrap();
        let d = t.add(c, x).unwrap();
        t.backward(d).unwrap();
        // d = 2x + x^2 + x
        assert_eq!(t.grad(x).unwrap().item(), Some(2.0 + 6.0 + 1.0));
    }

    #[test]
    fn non_finite_values_are_located() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(f64::NAN));
        let y = t.scale(x, 2.0);
        let _ = y;
        assert!(t.first_non_finite().unwrap().contains("leaf"));
    }

    proptest! {
        #[test]
        fn softmax_invariants(v in proptest::collection::vec(-30.0f64..30.0, 1..12), shift in -50.0f64..50.0) {
            let mut t = Tape::new();
            let x = t.constant(Tensor::vector(v.clone()));
            let y = t.softmax(x, 0).unwrap();
            let shifted = t.constant(Tensor::vector(v.iter().map(|a| a + shift).collect()));
            let ys = t.softmax(shifted, 0).unwrap();
            let p = t.value(y).data();
            prop_assert!(p.iter().all(|a| *a >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, b) in p.iter().zip(t.value(ys).data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn gradient_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = rand_tensor(&mut rng, &[3, 3]);
            let xv = rand_tensor(&mut rng, &[3, 2]);
            let grad_of = |ca: f64, cb: f64| {
                let mut t = Tape::new();
                let x = t.param(xv.clone());
                let wv = t.constant(w.clone());
                let h = t.matmul(wv, x).unwrap();
                let f1 = t.tanh(h);
                let f1 = t.sum(f1);
                let g1 = t.sigmoid(x);
                let g1 = t.mul(g1, x).unwrap();
                let g1 = t.sum(g1);
                let f = t.scale(f1, ca);
                let g = t.scale(g1, cb);
                let l = t.add(f, g).unwrap();
                t.backward(l).unwrap();
                t.grad(x).unwrap()
            };
            let combined = grad_of(a, b);
            let gf = grad_of(1.0, 0.0);
            let gg = grad_of(0.0, 1.0);
            for i in 0..combined.len() {
                let want = a * gf.data()[i] + b * gg.data()[i];
                prop_assert!((combined.data()[i] - want).abs() < 1e-12);
            }
        }
    }
}
