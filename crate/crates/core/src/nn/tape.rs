//! Reverse-mode automatic differentiation over dense 64-bit tensors.
//!
//! A [`Tape`] records each operation of a forward pass eagerly (values are
//! computed at op creation), then [`Tape::backward`] walks the record in
//! reverse to accumulate gradients for every parameter tensor. Parameters
//! live outside the tape and are referenced by index, so building a tape per
//! sample never copies the model weights.
//!
//! Any non-finite value produced by an op poisons the tape with the name of
//! the offending op; `backward` refuses poisoned tapes, and non-finite
//! gradients are reported the same way.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("non-finite value produced by op {op}")]
    NonFinite { op: String },
    #[error("non-finite gradient produced behind op {op}")]
    NonFiniteGradient { op: String },
    #[error("model shape error: {0}")]
    Shape(String),
    #[error("unsupported checkpoint schema version {found:?}, expected {expected:?}")]
    SchemaVersion { found: String, expected: String },
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// A dense row-major 64-bit array with an explicit shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Tensor {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Entry of a rank-2 tensor.
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }
}

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Debug)]
enum Op {
    Param(usize),
    Constant,
    /// y = W^T x with W of shape (in, out).
    Linear { w: ValueId, x: ValueId },
    /// y = M x with M of shape (rows, cols).
    MatVec { m: ValueId, x: ValueId },
    Add { a: ValueId, b: ValueId },
    Sub { a: ValueId, b: ValueId },
    Scale { a: ValueId, factor: f64 },
    Dot { a: ValueId, b: ValueId },
    Slice { a: ValueId, start: usize },
    Concat { parts: Vec<ValueId> },
    LeakyRelu { a: ValueId, slope: f64 },
    Tanh { a: ValueId },
    /// Numerically stable softmax over a 1-D tensor.
    Softmax { a: ValueId },
    /// y = sum_m coeffs[m] * vectors[m].
    WeightedSum { coeffs: ValueId, vectors: Vec<ValueId> },
    LogCosh { a: ValueId },
    Square { a: ValueId },
    Mean { a: ValueId },
    /// v_i = clamp(x_i, lo_i, hi_i) - x_i.
    IntervalViolation { a: ValueId, lo: Vec<f64>, hi: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Param(_) => "param",
            Op::Constant => "constant",
            Op::Linear { .. } => "linear",
            Op::MatVec { .. } => "matvec",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Scale { .. } => "scale",
            Op::Dot { .. } => "dot",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Tanh { .. } => "tanh",
            Op::Softmax { .. } => "softmax",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::LogCosh { .. } => "log_cosh",
            Op::Square { .. } => "square",
            Op::Mean { .. } => "mean",
            Op::IntervalViolation { .. } => "interval_violation",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Records one forward pass against a fixed parameter list.
pub struct Tape<'p> {
    params: &'p [&'p Tensor],
    nodes: Vec<Node>,
    poisoned: Option<String>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [&'p Tensor]) -> Tape<'p> {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
            poisoned: None,
        }
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        let node = &self.nodes[id.0];
        match node.op {
            Op::Param(i) => self.params[i],
            _ => &node.value,
        }
    }

    pub fn poisoned(&self) -> Option<&str> {
        self.poisoned.as_deref()
    }

    fn needs_grad(&self, id: ValueId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> ValueId {
        if self.poisoned.is_none() && !value.is_finite() {
            self.poisoned = Some(op.name().to_string());
        }
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        ValueId(self.nodes.len() - 1)
    }

    /// Leaf referencing `params[index]`; gradients accumulate to it.
    pub fn param(&mut self, index: usize) -> ValueId {
        assert!(index < self.params.len(), "param index out of range");
        self.push(Op::Param(index), Tensor::zeros(&[0]), true)
    }

    /// Leaf holding fixed data; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> ValueId {
        self.push(Op::Constant, value, false)
    }

    /// y = W^T x for W of shape (in, out) and x of shape (in,).
    pub fn linear(&mut self, w: ValueId, x: ValueId) -> ValueId {
        let wt = self.value(w);
        let xt = self.value(x);
        assert_eq!(wt.shape.len(), 2, "linear weight must be rank 2");
        let (rows, cols) = (wt.shape[0], wt.shape[1]);
        assert_eq!(xt.len(), rows, "linear input length mismatch");
        let mut out = vec![0.0; cols];
        for i in 0..rows {
            let xi = xt.data[i];
            if xi != 0.0 {
                let row = &wt.data[i * cols..(i + 1) * cols];
                for (o, w_io) in row.iter().enumerate() {
                    out[o] += w_io * xi;
                }
            }
        }
        let needs = self.needs_grad(w) || self.needs_grad(x);
        self.push(Op::Linear { w, x }, Tensor::vector(out), needs)
    }

    /// y = M x for M of shape (rows, cols) and x of shape (cols,).
    pub fn matvec(&mut self, m: ValueId, x: ValueId) -> ValueId {
        let mt = self.value(m);
        let xt = self.value(x);
        assert_eq!(mt.shape.len(), 2, "matvec matrix must be rank 2");
        let (rows, cols) = (mt.shape[0], mt.shape[1]);
        assert_eq!(xt.len(), cols, "matvec input length mismatch");
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            let row = &mt.data[r * cols..(r + 1) * cols];
            out[r] = row.iter().zip(&xt.data).map(|(a, b)| a * b).sum();
        }
        let needs = self.needs_grad(m) || self.needs_grad(x);
        self.push(Op::MatVec { m, x }, Tensor::vector(out), needs)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (at, bt) = (self.value(a), self.value(b));
        assert_eq!(at.shape, bt.shape, "add shape mismatch");
        let data = at.data.iter().zip(&bt.data).map(|(x, y)| x + y).collect();
        let shape = at.shape.clone();
        let needs = self.needs_grad(a) || self.needs_grad(b);
        self.push(Op::Add { a, b }, Tensor::from_vec(&shape, data), needs)
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (at, bt) = (self.value(a), self.value(b));
        assert_eq!(at.shape, bt.shape, "sub shape mismatch");
        let data = at.data.iter().zip(&bt.data).map(|(x, y)| x - y).collect();
        let shape = at.shape.clone();
        let needs = self.needs_grad(a) || self.needs_grad(b);
        self.push(Op::Sub { a, b }, Tensor::from_vec(&shape, data), needs)
    }

    pub fn scale(&mut self, a: ValueId, factor: f64) -> ValueId {
        let at = self.value(a);
        let data = at.data.iter().map(|x| x * factor).collect();
        let shape = at.shape.clone();
        let needs = self.needs_grad(a);
        self.push(Op::Scale { a, factor }, Tensor::from_vec(&shape, data), needs)
    }

    pub fn dot(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (at, bt) = (self.value(a), self.value(b));
        assert_eq!(at.len(), bt.len(), "dot length mismatch");
        let v = at.data.iter().zip(&bt.data).map(|(x, y)| x * y).sum();
        let needs = self.needs_grad(a) || self.needs_grad(b);
        self.push(Op::Dot { a, b }, Tensor::scalar(v), needs)
    }

    pub fn slice(&mut self, a: ValueId, start: usize, len: usize) -> ValueId {
        let at = self.value(a);
        assert!(start + len <= at.len(), "slice out of range");
        let data = at.data[start..start + len].to_vec();
        let needs = self.needs_grad(a);
        self.push(Op::Slice { a, start }, Tensor::vector(data), needs)
    }

    /// Concatenates 1-D values (scalars included) into one vector.
    pub fn concat(&mut self, parts: &[ValueId]) -> ValueId {
        let mut data = Vec::new();
        let mut needs = false;
        for &p in parts {
            data.extend_from_slice(&self.value(p).data);
            needs |= self.needs_grad(p);
        }
        self.push(
            Op::Concat { parts: parts.to_vec() },
            Tensor::vector(data),
            needs,
        )
    }

    pub fn leaky_relu(&mut self, a: ValueId, slope: f64) -> ValueId {
        let at = self.value(a);
        let data = at
            .data
            .iter()
            .map(|&x| if x >= 0.0 { x } else { slope * x })
            .collect();
        let shape = at.shape.clone();
        let needs = self.needs_grad(a);
        self.push(Op::LeakyRelu { a, slope }, Tensor::from_vec(&shape, data), needs)
    }

    /// Saturated values are nudged to the largest float strictly inside
    /// (-1, 1) so downstream range guarantees hold exactly.
    pub fn tanh(&mut self, a: ValueId) -> ValueId {
        const OPEN_BOUND: f64 = 1.0 - f64::EPSILON;
        let at = self.value(a);
        let data = at
            .data
            .iter()
            .map(|x| x.tanh().clamp(-OPEN_BOUND, OPEN_BOUND))
            .collect();
        let shape = at.shape.clone();
        let needs = self.needs_grad(a);
        self.push(Op::Tanh { a }, Tensor::from_vec(&shape, data), needs)
    }

    pub fn softmax(&mut self, a: ValueId) -> ValueId {
        let at = self.value(a);
        let max = at.data.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let exps: Vec<f64> = at.data.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let data = exps.iter().map(|e| e / sum).collect();
        let needs = self.needs_grad(a);
        self.push(Op::Softmax { a }, Tensor::vector(data), needs)
    }

    pub fn weighted_sum(&mut self, coeffs: ValueId, vectors: &[ValueId]) -> ValueId {
        let ct = self.value(coeffs);
        assert_eq!(ct.len(), vectors.len(), "one coefficient per vector");
        assert!(!vectors.is_empty(), "weighted_sum needs vectors");
        let dim = self.value(vectors[0]).len();
        let mut out = vec![0.0; dim];
        let mut needs = self.needs_grad(coeffs);
        for (m, &v) in vectors.iter().enumerate() {
            let c = self.value(coeffs).data[m];
            let vt = self.value(v);
            assert_eq!(vt.len(), dim, "weighted_sum vector length mismatch");
            for (o, x) in vt.data.iter().enumerate() {
                out[o] += c * x;
            }
            needs |= self.needs_grad(v);
        }
        self.push(
            Op::WeightedSum { coeffs, vectors: vectors.to_vec() },
            Tensor::vector(out),
            needs,
        )
    }

    pub fn log_cosh(&mut self, a: ValueId) -> ValueId {
        let at = self.value(a);
        let data = at
            .data
            .iter()
            .map(|&x| {
                let ax = x.abs();
                ax + (-2.0 * ax).exp().ln_1p() - std::f64::consts::LN_2
            })
            .collect();
        let shape = at.shape.clone();
        let needs = self.needs_grad(a);
        self.push(Op::LogCosh { a }, Tensor::from_vec(&shape, data), needs)
    }

    pub fn square(&mut self, a: ValueId) -> ValueId {
        let at = self.value(a);
        let data = at.data.iter().map(|x| x * x).collect();
        let shape = at.shape.clone();
        let needs = self.needs_grad(a);
        self.push(Op::Square { a }, Tensor::from_vec(&shape, data), needs)
    }

    pub fn mean(&mut self, a: ValueId) -> ValueId {
        let at = self.value(a);
        assert!(!at.is_empty(), "mean of empty tensor");
        let v = at.data.iter().sum::<f64>() / at.len() as f64;
        let needs = self.needs_grad(a);
        self.push(Op::Mean { a }, Tensor::scalar(v), needs)
    }

    /// v_i = clamp(x_i, lo_i, hi_i) - x_i: zero inside the interval, the
    /// signed distance back to it outside.
    pub fn interval_violation(&mut self, a: ValueId, lo: Vec<f64>, hi: Vec<f64>) -> ValueId {
        let at = self.value(a);
        assert_eq!(at.len(), lo.len(), "interval bounds length mismatch");
        assert_eq!(at.len(), hi.len(), "interval bounds length mismatch");
        let data = at
            .data
            .iter()
            .zip(lo.iter().zip(&hi))
            .map(|(&x, (&l, &h))| x.clamp(l, h) - x)
            .collect();
        let shape = at.shape.clone();
        let needs = self.needs_grad(a);
        self.push(Op::IntervalViolation { a, lo, hi }, Tensor::from_vec(&shape, data), needs)
    }

    /// Reverse pass from a scalar loss. Returns gradients aligned with the
    /// parameter list the tape was created with.
    pub fn backward(&self, loss: ValueId) -> Result<Vec<Tensor>, NnError> {
        if let Some(op) = &self.poisoned {
            return Err(NnError::NonFinite { op: op.clone() });
        }
        assert_eq!(self.value(loss).len(), 1, "loss must be scalar");

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..self.nodes.len()).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if !gy.is_finite() {
                return Err(NnError::NonFiniteGradient {
                    op: node.op.name().to_string(),
                });
            }
            match &node.op {
                Op::Param(_) | Op::Constant => {
                    grads[idx] = Some(gy); // keep for collection below
                    continue;
                }
                Op::Linear { w, x } => {
                    let (w, x) = (*w, *x);
                    let cols = self.value(w).shape[1];
                    let rows = self.value(w).shape[0];
                    if self.needs_grad(w) {
                        let xt = self.value(x).data.clone();
                        let gw = self.grad_slot(&mut grads, w);
                        for i in 0..rows {
                            let xi = xt[i];
                            if xi != 0.0 {
                                for o in 0..cols {
                                    gw.data[i * cols + o] += xi * gy.data[o];
                                }
                            }
                        }
                    }
                    if self.needs_grad(x) {
                        let wt = self.value(w);
                        let mut gx_add = vec![0.0; rows];
                        for i in 0..rows {
                            let row = &wt.data[i * cols..(i + 1) * cols];
                            gx_add[i] = row.iter().zip(&gy.data).map(|(a, b)| a * b).sum();
                        }
                        let gx = self.grad_slot(&mut grads, x);
                        for (g, d) in gx.data.iter_mut().zip(&gx_add) {
                            *g += d;
                        }
                    }
                }
                Op::MatVec { m, x } => {
                    let (m, x) = (*m, *x);
                    let rows = self.value(m).shape[0];
                    let cols = self.value(m).shape[1];
                    if self.needs_grad(m) {
                        let xt = self.value(x).data.clone();
                        let gm = self.grad_slot(&mut grads, m);
                        for r in 0..rows {
                            for c in 0..cols {
                                gm.data[r * cols + c] += gy.data[r] * xt[c];
                            }
                        }
                    }
                    if self.needs_grad(x) {
                        let mt = self.value(m);
                        let mut gx_add = vec![0.0; cols];
                        for r in 0..rows {
                            let row = &mt.data[r * cols..(r + 1) * cols];
                            for c in 0..cols {
                                gx_add[c] += row[c] * gy.data[r];
                            }
                        }
                        let gx = self.grad_slot(&mut grads, x);
                        for (g, d) in gx.data.iter_mut().zip(&gx_add) {
                            *g += d;
                        }
                    }
                }
                Op::Add { a, b } => {
                    for &t in [a, b].iter() {
                        if self.needs_grad(*t) {
                            let gt = self.grad_slot(&mut grads, *t);
                            for (g, d) in gt.data.iter_mut().zip(&gy.data) {
                                *g += d;
                            }
                        }
                    }
                }
                Op::Sub { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.needs_grad(a) {
                        let ga = self.grad_slot(&mut grads, a);
                        for (g, d) in ga.data.iter_mut().zip(&gy.data) {
                            *g += d;
                        }
                    }
                    if self.needs_grad(b) {
                        let gb = self.grad_slot(&mut grads, b);
                        for (g, d) in gb.data.iter_mut().zip(&gy.data) {
                            *g -= d;
                        }
                    }
                }
                Op::Scale { a, factor } => {
                    let (a, factor) = (*a, *factor);
                    if self.needs_grad(a) {
                        let ga = self.grad_slot(&mut grads, a);
                        for (g, d) in ga.data.iter_mut().zip(&gy.data) {
                            *g += factor * d;
                        }
                    }
                }
                Op::Dot { a, b } => {
                    let (a, b) = (*a, *b);
                    let g = gy.data[0];
                    if self.needs_grad(a) {
                        let bt = self.value(b).data.clone();
                        let ga = self.grad_slot(&mut grads, a);
                        for (ga_i, b_i) in ga.data.iter_mut().zip(&bt) {
                            *ga_i += g * b_i;
                        }
                    }
                    if self.needs_grad(b) {
                        let at = self.value(a).data.clone();
                        let gb = self.grad_slot(&mut grads, b);
                        for (gb_i, a_i) in gb.data.iter_mut().zip(&at) {
                            *gb_i += g * a_i;
                        }
                    }
                }
                Op::Slice { a, start } => {
                    let (a, start) = (*a, *start);
                    if self.needs_grad(a) {
                        let ga = self.grad_slot(&mut grads, a);
                        for (k, d) in gy.data.iter().enumerate() {
                            ga.data[start + k] += d;
                        }
                    }
                }
                Op::Concat { parts } => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let len = self.value(p).len();
                        if self.needs_grad(p) {
                            let gp = self.grad_slot(&mut grads, p);
                            for k in 0..len {
                                gp.data[k] += gy.data[offset + k];
                            }
                        }
                        offset += len;
                    }
                }
                Op::LeakyRelu { a, slope } => {
                    let (a, slope) = (*a, *slope);
                    if self.needs_grad(a) {
                        let xt = self.value(a).data.clone();
                        let ga = self.grad_slot(&mut grads, a);
                        for ((g, d), x) in ga.data.iter_mut().zip(&gy.data).zip(&xt) {
                            *g += d * if *x >= 0.0 { 1.0 } else { slope };
                        }
                    }
                }
                Op::Tanh { a } => {
                    let a = *a;
                    if self.needs_grad(a) {
                        let yt = node.value.data.clone();
                        let ga = self.grad_slot(&mut grads, a);
                        for ((g, d), y) in ga.data.iter_mut().zip(&gy.data).zip(&yt) {
                            *g += d * (1.0 - y * y);
                        }
                    }
                }
                Op::Softmax { a } => {
                    let a = *a;
                    if self.needs_grad(a) {
                        let yt = node.value.data.clone();
                        let inner: f64 = gy.data.iter().zip(&yt).map(|(g, y)| g * y).sum();
                        let ga = self.grad_slot(&mut grads, a);
                        for ((g, d), y) in ga.data.iter_mut().zip(&gy.data).zip(&yt) {
                            *g += y * (d - inner);
                        }
                    }
                }
                Op::WeightedSum { coeffs, vectors } => {
                    let coeffs = *coeffs;
                    let vectors = vectors.clone();
                    if self.needs_grad(coeffs) {
                        let mut gc_add = vec![0.0; vectors.len()];
                        for (m, &v) in vectors.iter().enumerate() {
                            gc_add[m] = self
                                .value(v)
                                .data
                                .iter()
                                .zip(&gy.data)
                                .map(|(x, g)| x * g)
                                .sum();
                        }
                        let gc = self.grad_slot(&mut grads, coeffs);
                        for (g, d) in gc.data.iter_mut().zip(&gc_add) {
                            *g += d;
                        }
                    }
                    let ct = self.value(coeffs).data.clone();
                    for (m, &v) in vectors.iter().enumerate() {
                        if self.needs_grad(v) {
                            let gv = self.grad_slot(&mut grads, v);
                            for (g, d) in gv.data.iter_mut().zip(&gy.data) {
                                *g += ct[m] * d;
                            }
                        }
                    }
                }
                Op::LogCosh { a } => {
                    let a = *a;
                    if self.needs_grad(a) {
                        let xt = self.value(a).data.clone();
                        let ga = self.grad_slot(&mut grads, a);
                        for ((g, d), x) in ga.data.iter_mut().zip(&gy.data).zip(&xt) {
                            *g += d * x.tanh();
                        }
                    }
                }
                Op::Square { a } => {
                    let a = *a;
                    if self.needs_grad(a) {
                        let xt = self.value(a).data.clone();
                        let ga = self.grad_slot(&mut grads, a);
                        for ((g, d), x) in ga.data.iter_mut().zip(&gy.data).zip(&xt) {
                            *g += d * 2.0 * x;
                        }
                    }
                }
                Op::Mean { a } => {
                    let a = *a;
                    if self.needs_grad(a) {
                        let len = self.value(a).len() as f64;
                        let d = gy.data[0] / len;
                        let ga = self.grad_slot(&mut grads, a);
                        for g in ga.data.iter_mut() {
                            *g += d;
                        }
                    }
                }
                Op::IntervalViolation { a, lo, hi } => {
                    let a = *a;
                    let (lo, hi) = (lo.clone(), hi.clone());
                    if self.needs_grad(a) {
                        let xt = self.value(a).data.clone();
                        let ga = self.grad_slot(&mut grads, a);
                        for (k, (g, d)) in ga.data.iter_mut().zip(&gy.data).enumerate() {
                            if xt[k] < lo[k] || xt[k] > hi[k] {
                                *g -= d;
                            }
                        }
                    }
                }
            }
        }

        // Collect parameter gradients in parameter order.
        let mut out: Vec<Tensor> = self
            .params
            .iter()
            .map(|p| Tensor::zeros(&p.shape))
            .collect();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(p) = node.op {
                if let Some(g) = &grads[idx] {
                    if !g.is_finite() {
                        return Err(NnError::NonFiniteGradient {
                            op: "param".to_string(),
                        });
                    }
                    for (acc, v) in out[p].data.iter_mut().zip(&g.data) {
                        *acc += v;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Gradient accumulator for a node, allocated on first touch.
    #[allow(clippy::mut_from_ref)]
    fn grad_slot<'g>(&self, grads: &'g mut [Option<Tensor>], id: ValueId) -> &'g mut Tensor {
        if grads[id.0].is_none() {
            let shape = self.value(id).shape.clone();
            grads[id.0] = Some(Tensor::zeros(&shape));
        }
        grads[id.0].as_mut().unwrap()
    }
}
