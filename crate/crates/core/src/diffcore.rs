//! Minimal reverse-mode automatic differentiation over small dense tensors.
//!
//! A [`Tape`] is built fresh for every episode (define-by-run). Values live in
//! one contiguous arena; each node records the operation that produced it and
//! the ids of its inputs, so nodes are always in topological order. Learned
//! parameters are plain [`Tensor`]s owned outside the tape; they enter a tape
//! through [`Tape::param`] and receive gradients through a [`GradSink`].

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: String,
        right: String,
    },
    #[error("{op} expects a vector, got {shape}")]
    NotAVector { op: &'static str, shape: String },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("probability {value} at index {index} is not positive")]
    DeadProbability { index: usize, value: f64 },
    #[error("loss must be a scalar, got {0}")]
    NonScalarLoss(String),
    #[error("unknown activation `{0}`")]
    UnknownActivation(String),
    #[error("tensor with dims {dims:?} cannot hold {len} values")]
    BadTensor { dims: Vec<usize>, len: usize },
}

pub type Result<T> = std::result::Result<T, DiffError>;

/// Shape of a tape value. Only vectors and matrices are needed here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(self) -> usize {
        match self {
            Shape::Vector(n) => n,
            Shape::Matrix(m, n) => m * n,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    fn from_dims(dims: &[usize]) -> Option<Shape> {
        match *dims {
            [n] => Some(Shape::Vector(n)),
            [m, n] => Some(Shape::Matrix(m, n)),
            _ => None,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Vector(n) => write!(f, "[{n}]"),
            Shape::Matrix(m, n) => write!(f, "[{m}x{n}]"),
        }
    }
}

/// A dense array of `f64` with a gradient slot of the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if len != values.len() || dims.is_empty() || dims.len() > 2 {
            return Err(DiffError::BadTensor {
                dims,
                len: values.len(),
            });
        }
        let grad = vec![0.0; len];
        Ok(Tensor { dims, values, grad })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Tensor {
            dims,
            values: vec![0.0; len],
            grad: vec![0.0; len],
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        let n = values.len();
        Tensor {
            dims: vec![n],
            grad: vec![0.0; n],
            values,
        }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn shape(&self) -> Shape {
        Shape::from_dims(&self.dims).expect("rank checked at construction")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    /// Mutable values alongside read-only gradients.
    pub fn split_mut(&mut self) -> (&mut [f64], &[f64]) {
        (&mut self.values, &self.grad)
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Elementwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl FromStr for Activation {
    type Err = DiffError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(DiffError::UnknownActivation(other.to_string())),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(z))` without cancellation for large `|z|`.
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(v),
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        }
    }

    /// Derivative expressed through the forward output `y`.
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            // relu'(0) = 0
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(usize),
    Affine { w: Var, b: Option<Var>, x: Var },
    Act { kind: Activation, x: Var },
    LogSigmoid(Var),
    Softmax(Var),
    Concat(Var, Var),
    PickLogProb { dist: Var, index: usize },
    Add(Var, Var),
    Mul(Var, Var),
    OneMinus(Var),
    Scale(Var, f64),
    Row { m: Var, row: usize },
    Entropy(Var),
    Combine(Vec<(Var, f64)>),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    offset: usize,
    shape: Shape,
    tracked: bool,
}

/// Receives parameter gradients at the end of [`Tape::backward`].
pub trait GradSink {
    fn accumulate(&mut self, param: usize, grad: &[f64]);
}

impl GradSink for [Tensor] {
    fn accumulate(&mut self, param: usize, grad: &[f64]) {
        for (g, d) in self[param].grad.iter_mut().zip(grad) {
            *g += d;
        }
    }
}

impl GradSink for Vec<Tensor> {
    fn accumulate(&mut self, param: usize, grad: &[f64]) {
        self.as_mut_slice().accumulate(param, grad)
    }
}

/// Per-worker gradient buffers, one flat vector per parameter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradBuffer {
    pub grads: Vec<Vec<f64>>,
}

impl GradBuffer {
    pub fn zeros_like(params: &[Tensor]) -> Self {
        GradBuffer {
            grads: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    /// `self += scale * other`, parameter by parameter in index order.
    pub fn add_scaled(&mut self, other: &GradBuffer, scale: f64) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += scale * b;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.grads.iter().flatten().all(|g| *g == 0.0)
    }
}

impl GradSink for GradBuffer {
    fn accumulate(&mut self, param: usize, grad: &[f64]) {
        for (g, d) in self.grads[param].iter_mut().zip(grad) {
            *g += d;
        }
    }
}

/// Append-only record of a forward computation.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<f64>,
    param_cache: Vec<Option<Var>>,
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

    pub fn value(&self, v: Var) -> &[f64] {
        let node = &self.nodes[v.0];
        &self.values[node.offset..node.offset + node.shape.len()]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].shape
    }

    fn push(&mut self, op: Op, shape: Shape, values: &[f64], tracked: bool) -> Var {
        debug_assert_eq!(shape.len(), values.len());
        let offset = self.values.len();
        self.values.extend_from_slice(values);
        self.nodes.push(Node {
            op,
            offset,
            shape,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_with<F: FnOnce(&[f64], &mut Vec<f64>)>(
        &mut self,
        op: Op,
        shape: Shape,
        tracked: bool,
        fill: F,
    ) -> Var {
        let offset = self.values.len();
        let (existing, _) = self.values.split_at(offset);
        let mut out = Vec::with_capacity(shape.len());
        fill(existing, &mut out);
        debug_assert_eq!(out.len(), shape.len());
        self.values.extend_from_slice(&out);
        self.nodes.push(Node {
            op,
            offset,
            shape,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn range(&self, v: Var) -> std::ops::Range<usize> {
        let n = &self.nodes[v.0];
        n.offset..n.offset + n.shape.len()
    }

    fn vector_len(&self, op: &'static str, v: Var) -> Result<usize> {
        match self.shape(v) {
            Shape::Vector(n) => Ok(n),
            s => Err(DiffError::NotAVector {
                op,
                shape: s.to_string(),
            }),
        }
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, values: &[f64]) -> Var {
        self.push(Op::Constant, Shape::Vector(values.len()), values, false)
    }

    pub fn constant_shaped(&mut self, shape: Shape, values: &[f64]) -> Result<Var> {
        if shape.len() != values.len() {
            return Err(DiffError::ShapeMismatch {
                op: "constant",
                left: shape.to_string(),
                right: format!("[{}]", values.len()),
            });
        }
        Ok(self.push(Op::Constant, shape, values, false))
    }

    /// Registers parameter `id` on the tape. Repeated calls return the same
    /// node, so one tape should serve a single parameter store.
    pub fn param(&mut self, id: usize, tensor: &Tensor) -> Var {
        if let Some(Some(v)) = self.param_cache.get(id) {
            return *v;
        }
        let v = self.push(Op::Param(id), tensor.shape(), &tensor.values, true);
        if self.param_cache.len() <= id {
            self.param_cache.resize(id + 1, None);
        }
        self.param_cache[id] = Some(v);
        v
    }

    /// `W·x + b`. `b` may be omitted for a plain matrix-vector product.
    pub fn affine(&mut self, w: Var, b: Option<Var>, x: Var) -> Result<Var> {
        let (m, n) = match self.shape(w) {
            Shape::Matrix(m, n) => (m, n),
            s => {
                return Err(DiffError::ShapeMismatch {
                    op: "affine",
                    left: s.to_string(),
                    right: self.shape(x).to_string(),
                })
            }
        };
        if self.shape(x) != Shape::Vector(n) {
            return Err(DiffError::ShapeMismatch {
                op: "affine",
                left: self.shape(w).to_string(),
                right: self.shape(x).to_string(),
            });
        }
        if let Some(b) = b {
            if self.shape(b) != Shape::Vector(m) {
                return Err(DiffError::ShapeMismatch {
                    op: "affine",
                    left: self.shape(w).to_string(),
                    right: self.shape(b).to_string(),
                });
            }
        }
        let tracked = self.tracked(w) || self.tracked(x) || b.is_some_and(|b| self.tracked(b));
        let (wr, xr) = (self.range(w), self.range(x));
        let br = b.map(|b| self.range(b));
        Ok(self.push_with(
            Op::Affine { w, b, x },
            Shape::Vector(m),
            tracked,
            |vals, out| {
                let wv = &vals[wr];
                let xv = &vals[xr];
                for i in 0..m {
                    let row = &wv[i * n..(i + 1) * n];
                    let mut acc = match &br {
                        Some(r) => vals[r.start + i],
                        None => 0.0,
                    };
                    for (a, b) in row.iter().zip(xv) {
                        acc += a * b;
                    }
                    out.push(acc);
                }
            },
        ))
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Var {
        let shape = self.shape(x);
        let tracked = self.tracked(x);
        let xr = self.range(x);
        self.push_with(Op::Act { kind, x }, shape, tracked, |vals, out| {
            out.extend(vals[xr].iter().map(|&v| kind.apply(v)))
        })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(Activation::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(Activation::Tanh, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(Activation::Relu, x)
    }

    /// Elementwise `ln(sigmoid(x))`.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let shape = self.shape(x);
        let tracked = self.tracked(x);
        let xr = self.range(x);
        self.push_with(Op::LogSigmoid(x), shape, tracked, |vals, out| {
            out.extend(vals[xr].iter().map(|&v| log_sigmoid(v)))
        })
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let n = self.vector_len("softmax", x)?;
        let tracked = self.tracked(x);
        let xr = self.range(x);
        Ok(
            self.push_with(Op::Softmax(x), Shape::Vector(n), tracked, |vals, out| {
                softmax_into(&vals[xr], out)
            }),
        )
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.vector_len("concat", a)?;
        let m = self.vector_len("concat", b)?;
        let tracked = self.tracked(a) || self.tracked(b);
        let (ar, br) = (self.range(a), self.range(b));
        Ok(self.push_with(
            Op::Concat(a, b),
            Shape::Vector(n + m),
            tracked,
            |vals, out| {
                out.extend_from_slice(&vals[ar]);
                out.extend_from_slice(&vals[br]);
            },
        ))
    }

    /// `ln(dist[index])` as a one-element vector.
    pub fn pick_log_prob(&mut self, dist: Var, index: usize) -> Result<Var> {
        let n = self.vector_len("pick_log_prob", dist)?;
        if index >= n {
            return Err(DiffError::IndexOutOfRange { index, len: n });
        }
        let p = self.value(dist)[index];
        if p.is_nan() || p <= 0.0 {
            return Err(DiffError::DeadProbability { index, value: p });
        }
        let tracked = self.tracked(dist);
        Ok(self.push(
            Op::PickLogProb { dist, index },
            Shape::Vector(1),
            &[p.ln()],
            tracked,
        ))
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(DiffError::ShapeMismatch {
                op: op_name,
                left: sa.to_string(),
                right: sb.to_string(),
            });
        }
        let tracked = self.tracked(a) || self.tracked(b);
        let (ar, br) = (self.range(a), self.range(b));
        Ok(self.push_with(op, sa, tracked, |vals, out| {
            out.extend(vals[ar].iter().zip(&vals[br]).map(|(&x, &y)| f(x, y)))
        }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Elementwise `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let shape = self.shape(a);
        let tracked = self.tracked(a);
        let ar = self.range(a);
        self.push_with(Op::OneMinus(a), shape, tracked, |vals, out| {
            out.extend(vals[ar].iter().map(|v| 1.0 - v))
        })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let shape = self.shape(a);
        let tracked = self.tracked(a);
        let ar = self.range(a);
        self.push_with(Op::Scale(a, c), shape, tracked, |vals, out| {
            out.extend(vals[ar].iter().map(|v| c * v))
        })
    }

    /// Row `row` of matrix `m`, as a vector.
    pub fn row(&mut self, m: Var, row: usize) -> Result<Var> {
        let (rows, cols) = match self.shape(m) {
            Shape::Matrix(r, c) => (r, c),
            s => {
                return Err(DiffError::ShapeMismatch {
                    op: "row",
                    left: s.to_string(),
                    right: format!("row {row}"),
                })
            }
        };
        if row >= rows {
            return Err(DiffError::IndexOutOfRange {
                index: row,
                len: rows,
            });
        }
        let tracked = self.tracked(m);
        let start = self.nodes[m.0].offset + row * cols;
        Ok(self.push_with(
            Op::Row { m, row },
            Shape::Vector(cols),
            tracked,
            |vals, out| out.extend_from_slice(&vals[start..start + cols]),
        ))
    }

    /// Shannon entropy `-Σ p ln p` of a probability vector, as a one-element vector.
    pub fn entropy(&mut self, dist: Var) -> Result<Var> {
        self.vector_len("entropy", dist)?;
        let tracked = self.tracked(dist);
        let h: f64 = self
            .value(dist)
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum();
        Ok(self.push(Op::Entropy(dist), Shape::Vector(1), &[h], tracked))
    }

    /// Weighted sum `Σ c_i · s_i` of one-element terms.
    pub fn combine(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut acc = 0.0;
        let mut tracked = false;
        for &(v, c) in terms {
            if self.shape(v) != Shape::Vector(1) {
                return Err(DiffError::ShapeMismatch {
                    op: "combine",
                    left: "[1]".into(),
                    right: self.shape(v).to_string(),
                });
            }
            acc += c * self.scalar(v);
            tracked |= self.tracked(v);
        }
        Ok(self.push(
            Op::Combine(terms.to_vec()),
            Shape::Vector(1),
            &[acc],
            tracked,
        ))
    }

    /// Propagates `∂loss/∂·` back through the tape and hands every parameter's
    /// gradient to `sink`, which accumulates it.
    pub fn backward<S: GradSink + ?Sized>(&self, loss: Var, sink: &mut S) -> Result<()> {
        if self.shape(loss) != Shape::Vector(1) {
            return Err(DiffError::NonScalarLoss(self.shape(loss).to_string()));
        }
        if !self.tracked(loss) {
            return Ok(());
        }
        let mut grads = vec![0.0; self.values.len()];
        grads[self.nodes[loss.0].offset] = 1.0;
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let out = node.offset..node.offset + node.shape.len();
            if grads[out.clone()].iter().all(|g| *g == 0.0) {
                continue;
            }
            self.backprop_node(node, out, &mut grads);
        }
        for node in &self.nodes {
            if let Op::Param(id) = node.op {
                sink.accumulate(id, &grads[node.offset..node.offset + node.shape.len()]);
            }
        }
        Ok(())
    }

    fn backprop_node(&self, node: &Node, out: std::ops::Range<usize>, grads: &mut [f64]) {
        let vals = &self.values;
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::Affine { w, b, x } => {
                let (m, n) = match self.shape(*w) {
                    Shape::Matrix(m, n) => (m, n),
                    _ => unreachable!(),
                };
                let (wr, xr) = (self.range(*w), self.range(*x));
                let (tw, tx) = (self.tracked(*w), self.tracked(*x));
                for i in 0..m {
                    let g = grads[out.start + i];
                    if g == 0.0 {
                        continue;
                    }
                    if tw {
                        for j in 0..n {
                            grads[wr.start + i * n + j] += g * vals[xr.start + j];
                        }
                    }
                    if tx {
                        for j in 0..n {
                            grads[xr.start + j] += g * vals[wr.start + i * n + j];
                        }
                    }
                }
                if let Some(b) = b {
                    if self.tracked(*b) {
                        let br = self.range(*b);
                        for i in 0..m {
                            grads[br.start + i] += grads[out.start + i];
                        }
                    }
                }
            }
            Op::Act { kind, x } => {
                let xr = self.range(*x);
                for k in 0..out.len() {
                    grads[xr.start + k] +=
                        grads[out.start + k] * kind.derivative(vals[out.start + k]);
                }
            }
            Op::LogSigmoid(x) => {
                let xr = self.range(*x);
                for k in 0..out.len() {
                    // d/dz ln σ(z) = 1 − σ(z) = σ(−z)
                    grads[xr.start + k] += grads[out.start + k] * sigmoid(-vals[xr.start + k]);
                }
            }
            Op::Softmax(x) => {
                let xr = self.range(*x);
                let dot: f64 = (0..out.len())
                    .map(|k| grads[out.start + k] * vals[out.start + k])
                    .sum();
                for k in 0..out.len() {
                    let y = vals[out.start + k];
                    grads[xr.start + k] += y * (grads[out.start + k] - dot);
                }
            }
            Op::Concat(a, b) => {
                let (ar, br) = (self.range(*a), self.range(*b));
                let n = ar.len();
                if self.tracked(*a) {
                    for k in 0..n {
                        grads[ar.start + k] += grads[out.start + k];
                    }
                }
                if self.tracked(*b) {
                    for k in 0..br.len() {
                        grads[br.start + k] += grads[out.start + n + k];
                    }
                }
            }
            Op::PickLogProb { dist, index } => {
                let dr = self.range(*dist);
                let p = vals[dr.start + index];
                grads[dr.start + index] += grads[out.start] / p;
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.tracked(*v) {
                        let r = self.range(*v);
                        for k in 0..out.len() {
                            grads[r.start + k] += grads[out.start + k];
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ar, br) = (self.range(*a), self.range(*b));
                let (ta, tb) = (self.tracked(*a), self.tracked(*b));
                for k in 0..out.len() {
                    let g = grads[out.start + k];
                    if ta {
                        grads[ar.start + k] += g * vals[br.start + k];
                    }
                    if tb {
                        grads[br.start + k] += g * vals[ar.start + k];
                    }
                }
            }
            Op::OneMinus(a) => {
                let ar = self.range(*a);
                for k in 0..out.len() {
                    grads[ar.start + k] -= grads[out.start + k];
                }
            }
            Op::Scale(a, c) => {
                let ar = self.range(*a);
                for k in 0..out.len() {
                    grads[ar.start + k] += c * grads[out.start + k];
                }
            }
            Op::Row { m, row } => {
                let cols = out.len();
                let start = self.nodes[m.0].offset + row * cols;
                for k in 0..cols {
                    grads[start + k] += grads[out.start + k];
                }
            }
            Op::Entropy(dist) => {
                let dr = self.range(*dist);
                let g = grads[out.start];
                for k in 0..dr.len() {
                    let p = vals[dr.start + k];
                    if p > 0.0 {
                        grads[dr.start + k] += -g * (p.ln() + 1.0);
                    }
                }
            }
            Op::Combine(terms) => {
                let g = grads[out.start];
                for &(v, c) in terms {
                    if self.tracked(v) {
                        let off = self.nodes[v.0].offset;
                        grads[off] += c * g;
                    }
                }
            }
        }
    }
}

/// Numerically stable softmax of a slice.
pub fn softmax_into(x: &[f64], out: &mut Vec<f64>) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let start = out.len();
    let mut total = 0.0;
    for &v in x {
        let e = (v - max).exp();
        total += e;
        out.push(e);
    }
    for e in &mut out[start..] {
        *e /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn affine_identity_and_arithmetic() {
        let mut tape = Tape::new();
        let w = tape
            .constant_shaped(Shape::Matrix(2, 2), &[1.0, 0.0, 0.0, 1.0])
            .unwrap();
        let b = tape.constant(&[0.0, 0.0]);
        let x = tape.constant(&[3.0, -1.0]);
        let y = tape.affine(w, Some(b), x).unwrap();
        assert_eq!(tape.value(y), &[3.0, -1.0]);

        let w = tape
            .constant_shaped(Shape::Matrix(1, 2), &[1.0, 1.0])
            .unwrap();
        let b = tape.constant(&[0.5]);
        let x = tape.constant(&[1.0, 2.0]);
        let y = tape.affine(w, Some(b), x).unwrap();
        assert_eq!(tape.value(y), &[3.5]);
    }

    #[test]
    fn affine_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let w = tape
            .constant_shaped(Shape::Matrix(2, 3), &[0.0; 6])
            .unwrap();
        let x = tape.constant(&[1.0, 2.0]);
        let err = tape.affine(w, None, x).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2x3]") && msg.contains("[2]"), "{msg}");
    }

    #[test]
    fn activations() {
        let mut tape = Tape::new();
        let x = tape.constant(&[0.0]);
        let s = tape.sigmoid(x);
        assert_eq!(tape.value(s), &[0.5]);
        let x = tape.constant(&[-2.0, 3.0]);
        let r = tape.relu(x);
        assert_eq!(tape.value(r), &[0.0, 3.0]);
        let x = tape.constant(&[0.5]);
        let t = tape.tanh(x);
        // tanh(0.5) = (e − 1)/(e + 1) with e = exp(1)
        let e = 1f64.exp();
        assert!(close(tape.scalar(t), (e - 1.0) / (e + 1.0), 1e-15));
        assert!(close(tape.scalar(t), 0.462_117_157_260_009_7, 1e-15));
        assert!("softplus".parse::<Activation>().is_err());
        assert_eq!("relu".parse::<Activation>().unwrap(), Activation::Relu);
    }

    #[test]
    fn softmax_cases() {
        let mut tape = Tape::new();
        let x = tape.constant(&[0.0, 0.0]);
        let s = tape.softmax(x).unwrap();
        assert_eq!(tape.value(s), &[0.5, 0.5]);
        let x = tape.constant(&[2f64.ln(), 0.0]);
        let s = tape.softmax(x).unwrap();
        assert!(close(tape.value(s)[0], 2.0 / 3.0, 1e-15));
        assert!(close(tape.value(s)[1], 1.0 / 3.0, 1e-15));
        let x = tape.constant(&[1000.0, 1000.0]);
        let s = tape.softmax(x).unwrap();
        assert_eq!(tape.value(s), &[0.5, 0.5]);
    }

    #[test]
    fn concat_cases() {
        let mut tape = Tape::new();
        let a = tape.constant(&[1.0]);
        let b = tape.constant(&[2.0, 3.0]);
        let c = tape.concat(a, b).unwrap();
        assert_eq!(tape.value(c), &[1.0, 2.0, 3.0]);
        let a = tape.constant(&[]);
        let b = tape.constant(&[5.0]);
        let c = tape.concat(a, b).unwrap();
        assert_eq!(tape.value(c), &[5.0]);
        let m = tape.constant_shaped(Shape::Matrix(1, 1), &[1.0]).unwrap();
        assert!(matches!(
            tape.concat(m, b),
            Err(DiffError::NotAVector { .. })
        ));
    }

    #[test]
    fn pick_log_prob_cases() {
        let mut tape = Tape::new();
        let d = tape.constant(&[0.5, 0.5]);
        let l = tape.pick_log_prob(d, 0).unwrap();
        assert!(close(tape.scalar(l), -std::f64::consts::LN_2, 1e-15));
        let d = tape.constant(&[1.0]);
        let l = tape.pick_log_prob(d, 0).unwrap();
        assert_eq!(tape.scalar(l), 0.0);
        assert!(matches!(
            tape.pick_log_prob(d, 1),
            Err(DiffError::IndexOutOfRange { index: 1, len: 1 })
        ));
        let d = tape.constant(&[0.0, 1.0]);
        assert!(matches!(
            tape.pick_log_prob(d, 0),
            Err(DiffError::DeadProbability { .. })
        ));

        let mut params = vec![Tensor::vector(vec![0.25, 0.75])];
        let mut tape = Tape::new();
        let d = tape.param(0, &params[0]);
        let l = tape.pick_log_prob(d, 0).unwrap();
        tape.backward(l, &mut params).unwrap();
        assert_eq!(params[0].grad(), &[4.0, 0.0]);
    }

    #[test]
    fn backward_basic_cases() {
        let mut params = vec![Tensor::vector(vec![2.0])];
        let mut tape = Tape::new();
        let x = tape.param(0, &params[0]);
        tape.backward(x, &mut params).unwrap();
        assert_eq!(params[0].grad(), &[1.0]);

        // loss = sigmoid(w·x) at w = 0, x = 1
        let mut params = vec![Tensor::matrix(1, 1, vec![0.0]).unwrap()];
        let mut tape = Tape::new();
        let w = tape.param(0, &params[0]);
        let x = tape.constant(&[1.0]);
        let z = tape.affine(w, None, x).unwrap();
        let s = tape.sigmoid(z);
        tape.backward(s, &mut params).unwrap();
        assert_eq!(params[0].grad(), &[0.25]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut params = vec![Tensor::vector(vec![1.0, 2.0])];
        let mut tape = Tape::new();
        let x = tape.param(0, &params[0]);
        assert!(matches!(
            tape.backward(x, &mut params),
            Err(DiffError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn unused_param_keeps_zero_grad_and_calls_accumulate() {
        let mut params = vec![Tensor::vector(vec![1.0]), Tensor::vector(vec![3.0])];
        let mut tape = Tape::new();
        let a = tape.param(0, &params[0]);
        let _b = tape.param(1, &params[1]);
        let s = tape.sigmoid(a);
        tape.backward(s, &mut params).unwrap();
        assert_eq!(params[1].grad(), &[0.0]);
        let once = params[0].grad()[0];
        tape.backward(s, &mut params).unwrap();
        assert_eq!(params[0].grad()[0], 2.0 * once);
        params[0].zero_grad();
        assert_eq!(params[0].grad(), &[0.0]);
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!(close(log_sigmoid(0.0), -std::f64::consts::LN_2, 1e-15));
        assert!(log_sigmoid(-800.0).is_finite());
        assert!(close(log_sigmoid(-800.0), -800.0, 1e-9));
        assert!(log_sigmoid(800.0) <= 0.0);
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        let mut params = vec![Tensor::vector(vec![0.0])];
        let mut tape = Tape::new();
        let x = tape.param(0, &params[0]);
        let r = tape.relu(x);
        tape.backward(r, &mut params).unwrap();
        assert_eq!(params[0].grad(), &[0.0]);
    }

    #[test]
    fn tensor_construction_checks_length() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        let t = Tensor::new(vec![4, 0], vec![]).unwrap();
        assert_eq!(t.shape(), Shape::Matrix(4, 0));
    }
}
