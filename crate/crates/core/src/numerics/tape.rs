//! Reverse-mode differentiation over a closed set of matrix primitives.
//!
//! A [`Tape`] records every primitive in execution order. Parameters are
//! read in place from a [`ParamValues`] borrow and never copied; their
//! gradients are accumulated straight into a [`Gradients`] buffer when
//! [`Tape::backward`] walks the record in reverse.

use super::params::{Gradients, ParamId, ParamValues};
use super::tensor::{matmul_nt_into, matmul_tn_into, Tensor};
use crate::error::{Error, Result};

/// Probabilities are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` by the log loss.
pub const PROB_CLAMP: f64 = 1e-7;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
        }
    }

    /// Derivative expressed through the output `y = f(x)`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(slope) => {
                if y > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Concat(Vec<Var>, Axis),
    Slice {
        src: Var,
        axis: Axis,
        start: usize,
    },
    Transpose(Var),
    RowSoftmax(Var),
    Pointwise(Var, Activation),
    Sum(Var),
    Mean(Var),
    LogLoss {
        pred: Var,
        labels: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "parameter",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddBias(..) => "add_bias",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Transpose(_) => "transpose",
            Op::RowSoftmax(_) => "row_softmax",
            Op::Pointwise(_, Activation::Sigmoid) => "sigmoid",
            Op::Pointwise(_, Activation::Tanh) => "tanh",
            Op::Pointwise(_, Activation::Relu) => "relu",
            Op::Pointwise(_, Activation::LeakyRelu(_)) => "leaky_relu",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::LogLoss { .. } => "log_loss",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    /// `None` for parameters, which are read from the store.
    value: Option<Tensor>,
    shape: (usize, usize),
    needs_grad: bool,
}

/// The computation record for one forward pass.
pub struct Tape<'p> {
    params: &'p ParamValues,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamValues) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        node_value(&self.nodes, self.params, v)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let needs_grad = match &op {
            Op::Constant => false,
            Op::Param(_) => true,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) => {
                self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad
            }
            Op::Concat(parts, _) => parts.iter().any(|p| self.nodes[p.0].needs_grad),
            Op::Scale(a, _)
            | Op::Slice { src: a, .. }
            | Op::Transpose(a)
            | Op::RowSoftmax(a)
            | Op::Pointwise(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::LogLoss { pred: a, .. } => self.nodes[a.0].needs_grad,
        };
        let shape = (value.rows(), value.cols());
        self.nodes.push(Node {
            op,
            value: Some(value),
            shape,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        let shape = (value.rows(), value.cols());
        self.nodes.push(Node {
            op: Op::Constant,
            value: Some(value),
            shape,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let t = self.params.get(id);
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            shape: (t.rows(), t.cols()),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), out)
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape(format!("{op} of {sa:?} and {sb:?}")));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.rows(), ta.cols(), data).expect("shapes checked")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push(Op::Add(a, b), out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_with(a, b, |x, y| x - y);
        self.push(Op::Sub(a, b), out)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push(Op::Mul(a, b), out)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::new(t.rows(), t.cols(), t.data().iter().map(|x| x * factor).collect())?;
        self.push(Op::Scale(a, factor), out)
    }

    /// Adds a `1 × c` bias row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(bias) != (1, c) {
            return Err(Error::Shape(format!(
                "bias {:?} for input {:?}",
                self.shape(bias),
                (r, c)
            )));
        }
        let (tx, tb) = (self.value(x), self.value(bias));
        let mut out = tx.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, b) in row.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        self.push(Op::AddBias(x, bias), out)
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let (r0, c0) = self.shape(first);
        let out = match axis {
            Axis::Rows => {
                let mut data = Vec::new();
                let mut rows = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if c != c0 {
                        return Err(Error::Shape(format!("row concat of {c0} and {c} columns")));
                    }
                    rows += r;
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::new(rows, c0, data)?
            }
            Axis::Cols => {
                let mut cols = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if r != r0 {
                        return Err(Error::Shape(format!("column concat of {r0} and {r} rows")));
                    }
                    cols += c;
                }
                let mut data = Vec::with_capacity(r0 * cols);
                for i in 0..r0 {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(i));
                    }
                }
                Tensor::new(r0, cols, data)?
            }
        };
        self.push(Op::Concat(parts.to_vec(), axis), out)
    }

    /// Contiguous block of `len` rows or columns starting at `start`.
    pub fn slice(&mut self, src: Var, axis: Axis, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(src);
        let t = self.value(src);
        let out = match axis {
            Axis::Rows => {
                if start + len > r {
                    return Err(Error::Shape(format!(
                        "row slice {start}..{} of {r} rows",
                        start + len
                    )));
                }
                Tensor::new(len, c, t.data()[start * c..(start + len) * c].to_vec())?
            }
            Axis::Cols => {
                if start + len > c {
                    return Err(Error::Shape(format!(
                        "column slice {start}..{} of {c} columns",
                        start + len
                    )));
                }
                let data = (0..r)
                    .flat_map(|i| t.row(i)[start..start + len].iter().copied())
                    .collect();
                Tensor::new(r, len, data)?
            }
        };
        self.push(Op::Slice { src, axis, start }, out)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.push(Op::Transpose(a), out)
    }

    /// Softmax along each row. Masked entries (`mask[r*cols + c] == true`)
    /// are excluded and come out as exactly zero.
    pub fn row_softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = (t.rows(), t.cols());
        if let Some(m) = mask {
            if m.len() != r * c {
                return Err(Error::Shape(format!(
                    "softmax mask of {} entries for [{r}, {c}]",
                    m.len()
                )));
            }
        }
        let hidden = |i: usize, j: usize| mask.is_some_and(|m| m[i * c + j]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = t.row(i);
            let max = (0..c)
                .filter(|&j| !hidden(i, j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::input(format!("row {i} of softmax is fully masked")));
            }
            let mut total = 0.0;
            for j in 0..c {
                if !hidden(i, j) {
                    let e = (row[j] - max).exp();
                    out[i * c + j] = e;
                    total += e;
                }
            }
            for v in &mut out[i * c..(i + 1) * c] {
                *v /= total;
            }
        }
        self.push(Op::RowSoftmax(x), Tensor::new(r, c, out)?)
    }

    pub fn pointwise(&mut self, x: Var, f: Activation) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::new(t.rows(), t.cols(), t.data().iter().map(|&v| f.apply(v)).collect())?;
        self.push(Op::Pointwise(x, f), out)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.pointwise(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.pointwise(x, Activation::Tanh)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.pointwise(x, Activation::Relu)
    }

    /// Sum of all entries, as a `1 × 1` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::Shape("mean of an empty tensor".into()));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Op::Mean(x), Tensor::scalar(s))
    }

    /// Mean binary cross-entropy of the probabilities in `pred` against
    /// `labels`, with probabilities clamped to `[1e-7, 1 − 1e-7]`.
    pub fn log_loss(&mut self, pred: Var, labels: &[f64]) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != labels.len() || labels.is_empty() {
            return Err(Error::Shape(format!(
                "log loss over {} predictions and {} labels",
                p.len(),
                labels.len()
            )));
        }
        let loss = log_loss_value(p.data(), labels);
        self.push(
            Op::LogLoss {
                pred,
                labels: labels.to_vec(),
            },
            Tensor::scalar(loss),
        )
    }

    /// Accumulates `scale · ∂loss/∂θ` into `grads` for every parameter θ
    /// reachable from `loss`.
    pub fn backward(&self, loss: Var, scale: f64, grads: &mut Gradients) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape(format!(
                "backward from non-scalar {:?}",
                self.shape(loss)
            )));
        }
        let nodes = &self.nodes;
        let params = self.params;
        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adjoints[loss.0] = Some(vec![scale]);

        for k in (0..=loss.0).rev() {
            let node = &nodes[k];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = adjoints[k].take() else {
                continue;
            };
            if dy.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: node.op.name() });
            }
            let mut sink = Sink {
                nodes,
                adjoints: &mut adjoints,
                grads: &mut *grads,
            };
            let (r, c) = node.shape;
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    for (g, d) in sink.grads.get_mut(*id).data_mut().iter_mut().zip(&dy) {
                        *g += d;
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (node_value(nodes, params, *a), node_value(nodes, params, *b));
                    let q = ta.cols();
                    if let Some(ga) = sink.target(*a) {
                        matmul_nt_into(&dy, tb.data(), ga, r, c, q);
                    }
                    if let Some(gb) = sink.target(*b) {
                        matmul_tn_into(ta.data(), &dy, gb, r, q, c);
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if let Some(g) = sink.target(v) {
                            add_into(g, &dy);
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if let Some(g) = sink.target(*a) {
                        add_into(g, &dy);
                    }
                    if let Some(g) = sink.target(*b) {
                        for (gi, d) in g.iter_mut().zip(&dy) {
                            *gi -= d;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (node_value(nodes, params, *a), node_value(nodes, params, *b));
                    if let Some(g) = sink.target(*a) {
                        for ((gi, d), bv) in g.iter_mut().zip(&dy).zip(tb.data()) {
                            *gi += d * bv;
                        }
                    }
                    if let Some(g) = sink.target(*b) {
                        for ((gi, d), av) in g.iter_mut().zip(&dy).zip(ta.data()) {
                            *gi += d * av;
                        }
                    }
                }
                Op::Scale(a, factor) => {
                    if let Some(g) = sink.target(*a) {
                        for (gi, d) in g.iter_mut().zip(&dy) {
                            *gi += d * factor;
                        }
                    }
                }
                Op::AddBias(x, bias) => {
                    if let Some(g) = sink.target(*x) {
                        add_into(g, &dy);
                    }
                    if let Some(g) = sink.target(*bias) {
                        for row in dy.chunks(c) {
                            add_into(g, row);
                        }
                    }
                }
                Op::Concat(parts, axis) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (pr, pc) = nodes[p.0].shape;
                        if let Some(g) = sink.target(p) {
                            match axis {
                                Axis::Rows => add_into(g, &dy[offset * c..(offset + pr) * c]),
                                Axis::Cols => {
                                    for i in 0..pr {
                                        let src = &dy[i * c + offset..i * c + offset + pc];
                                        add_into(&mut g[i * pc..(i + 1) * pc], src);
                                    }
                                }
                            }
                        }
                        offset += match axis {
                            Axis::Rows => pr,
                            Axis::Cols => pc,
                        };
                    }
                }
                Op::Slice { src, axis, start } => {
                    let (_, sc) = nodes[src.0].shape;
                    if let Some(g) = sink.target(*src) {
                        match axis {
                            Axis::Rows => add_into(&mut g[start * sc..(start + r) * sc], &dy),
                            Axis::Cols => {
                                for i in 0..r {
                                    add_into(
                                        &mut g[i * sc + start..i * sc + start + c],
                                        &dy[i * c..(i + 1) * c],
                                    );
                                }
                            }
                        }
                    }
                }
                Op::Transpose(a) => {
                    if let Some(g) = sink.target(*a) {
                        // dy is r×c, the source is c×r
                        for i in 0..r {
                            for j in 0..c {
                                g[j * r + i] += dy[i * c + j];
                            }
                        }
                    }
                }
                Op::RowSoftmax(x) => {
                    let y = node.value.as_ref().expect("softmax output");
                    if let Some(g) = sink.target(*x) {
                        for i in 0..r {
                            let yr = y.row(i);
                            let dr = &dy[i * c..(i + 1) * c];
                            let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                            for j in 0..c {
                                g[i * c + j] += yr[j] * (dr[j] - dot);
                            }
                        }
                    }
                }
                Op::Pointwise(x, f) => {
                    let y = node.value.as_ref().expect("pointwise output");
                    if let Some(g) = sink.target(*x) {
                        for ((gi, d), &yv) in g.iter_mut().zip(&dy).zip(y.data()) {
                            *gi += d * f.derivative_from_output(yv);
                        }
                    }
                }
                Op::Sum(x) => {
                    if let Some(g) = sink.target(*x) {
                        g.iter_mut().for_each(|gi| *gi += dy[0]);
                    }
                }
                Op::Mean(x) => {
                    if let Some(g) = sink.target(*x) {
                        let share = dy[0] / g.len() as f64;
                        g.iter_mut().for_each(|gi| *gi += share);
                    }
                }
                Op::LogLoss { pred, labels } => {
                    let p = node_value(nodes, params, *pred);
                    if let Some(g) = sink.target(*pred) {
                        let n = labels.len() as f64;
                        for ((gi, &pv), &y) in g.iter_mut().zip(p.data()).zip(labels) {
                            if pv > PROB_CLAMP && pv < 1.0 - PROB_CLAMP {
                                *gi += -dy[0] / n * (y / pv - (1.0 - y) / (1.0 - pv));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn log_loss_value(probs: &[f64], labels: &[f64]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum();
    -total / labels.len() as f64
}

fn node_value<'a>(nodes: &'a [Node], params: &'a ParamValues, v: Var) -> &'a Tensor {
    let node = &nodes[v.0];
    match (&node.value, &node.op) {
        (Some(t), _) => t,
        (None, Op::Param(id)) => params.get(*id),
        _ => unreachable!("only parameters are stored by reference"),
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Where gradient contributions for a node's inputs land.
struct Sink<'a> {
    nodes: &'a [Node],
    adjoints: &'a mut [Option<Vec<f64>>],
    grads: &'a mut Gradients,
}

impl Sink<'_> {
    fn target(&mut self, v: Var) -> Option<&mut [f64]> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        match node.op {
            Op::Param(id) => Some(self.grads.get_mut(id).data_mut()),
            _ => {
                let len = node.shape.0 * node.shape.1;
                Some(self.adjoints[v.0].get_or_insert_with(|| vec![0.0; len]))
            }
        }
    }
}
