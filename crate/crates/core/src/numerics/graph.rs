//! Tape-based reverse-mode automatic differentiation.
//!
//! Every op appends a node holding its forward value. `backward` walks the
//! tape in reverse from a scalar node and accumulates adjoints for every node
//! that (transitively) depends on a leaf marked as requiring gradients.

use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, ConvDims};
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

const LN2: f64 = std::f64::consts::LN_2;

/// Handle to a node of a specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Sum(usize),
    MatMul(usize, usize),
    AddRowBias(usize, usize),
    Relu(usize),
    Conv2d {
        x: usize,
        w: usize,
        b: usize,
        dims: ConvDims,
    },
    MaxPool2 {
        x: usize,
        argmax: Vec<usize>,
    },
    Reshape(usize),
    /// Mean softmax cross-entropy in bits; caches the softmax probabilities.
    SoftmaxXentBits {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    /// Mean sigmoid binary cross-entropy in bits; caches the sigmoid outputs.
    SigmoidBceBits {
        logits: usize,
        targets: Vec<f64>,
        probs: Vec<f64>,
    },
    /// Sum over rows of `x[row, index[row]]`.
    GatherSum {
        x: usize,
        index: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded forward computation.
#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for a leaf (or the output node); all-zero when the output
    /// does not depend on it. Interior adjoints are released during the sweep.
    pub fn get(&self, var: Var) -> Result<Tensor> {
        if var.graph != self.graph || var.index >= self.grads.len() {
            return Err(Error::State("variable does not belong to this gradient set".into()));
        }
        Ok(match &self.grads[var.index] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.index]),
        })
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var { graph: self.id, index: self.nodes.len() - 1 }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::State("variable was not recorded on this graph".into()));
        }
        Ok(v.index)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    fn ng(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(self.val(self.idx(v)?))
    }

    fn same_shape(&self, a: usize, b: usize, what: &str) -> Result<()> {
        if self.val(a).shape() != self.val(b).shape() {
            return Err(Error::Shape(format!("{what}: {:?} vs {:?}", self.val(a).shape(), self.val(b).shape())));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        self.same_shape(a, b, "add")?;
        let mut v = self.val(a).clone();
        v.add_assign(self.val(b));
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        self.same_shape(a, b, "sub")?;
        let data = self.val(a).data().iter().zip(self.val(b).data()).map(|(x, y)| x - y).collect();
        let v = Tensor::new(self.val(a).shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        self.same_shape(a, b, "mul")?;
        let data = self.val(a).data().iter().zip(self.val(b).data()).map(|(x, y)| x * y).collect();
        let v = Tensor::new(self.val(a).shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(v, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let a = self.idx(a)?;
        let mut v = self.val(a).clone();
        v.scale(factor);
        let ng = self.ng(a);
        Ok(self.push(v, Op::Scale(a, factor), ng))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let a = self.idx(a)?;
        let s = self.val(a).data().iter().sum();
        let ng = self.ng(a);
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul: {sa:?} x {sb:?}")));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.val(a).data(), self.val(b).data(), n, k, m);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(vec![n, m], data)?, Op::MatMul(a, b), ng))
    }

    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (x, bias) = (self.idx(x)?, self.idx(bias)?);
        let (sx, sb) = (self.val(x).shape(), self.val(bias).shape());
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(Error::Shape(format!("bias: {sx:?} + {sb:?}")));
        }
        let mut v = self.val(x).clone();
        kernels::add_row_bias(v.data_mut(), self.val(bias).data());
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(v, Op::AddRowBias(x, bias), ng))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let x = self.idx(x)?;
        let mut v = self.val(x).clone();
        kernels::relu_inplace(v.data_mut());
        let ng = self.ng(x);
        Ok(self.push(v, Op::Relu(x), ng))
    }

    /// Valid stride-1 convolution of NHWC `x` with `[k, k, cin, cout]` weights.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (x, w, b) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let (sx, sw, sb) = (self.val(x).shape(), self.val(w).shape(), self.val(b).shape());
        if sx.len() != 4 || sw.len() != 4 || sw[0] != sw[1] || sx[3] != sw[2] || sb != [sw[3]] {
            return Err(Error::Shape(format!("conv2d: input {sx:?}, weight {sw:?}, bias {sb:?}")));
        }
        if sx[1] < sw[0] || sx[2] < sw[0] {
            return Err(Error::Shape(format!("conv2d: kernel {} larger than input {sx:?}", sw[0])));
        }
        let dims = ConvDims {
            batch: sx[0],
            height: sx[1],
            width: sx[2],
            in_channels: sx[3],
            out_channels: sw[3],
            kernel: sw[0],
        };
        let data = kernels::conv2d_forward(self.val(x).data(), self.val(w).data(), self.val(b).data(), dims);
        let shape = vec![dims.batch, dims.out_height(), dims.out_width(), dims.out_channels];
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Conv2d { x, w, b, dims }, ng))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let x = self.idx(x)?;
        let s = self.val(x).shape().to_vec();
        if s.len() != 4 || s[1] < 2 || s[2] < 2 {
            return Err(Error::Shape(format!("maxpool2: input {s:?}")));
        }
        let (data, argmax) = kernels::maxpool2_forward(self.val(x).data(), s[0], s[1], s[2], s[3]);
        let ng = self.ng(x);
        let v = Tensor::new(vec![s[0], s[1] / 2, s[2] / 2, s[3]], data)?;
        Ok(self.push(v, Op::MaxPool2 { x, argmax }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let x = self.idx(x)?;
        let v = self.val(x).clone().reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(v, Op::Reshape(x), ng))
    }

    /// Mean over the batch of `-log2 softmax(logits)[label]`.
    pub fn softmax_xent_bits(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let l = self.idx(logits)?;
        let s = self.val(l).shape();
        if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
            return Err(Error::Shape(format!("cross-entropy: logits {s:?} with {} labels", labels.len())));
        }
        let (n, k) = (s[0], s[1]);
        if let Some(bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Domain(format!("label {bad} outside [0, {k})")));
        }
        let logp = kernels::log_softmax_rows(self.val(l).data(), k);
        let loss = -labels.iter().enumerate().map(|(i, &y)| logp[i * k + y]).sum::<f64>() / (n as f64 * LN2);
        let probs = logp.iter().map(|v| v.exp()).collect();
        let ng = self.ng(l);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxXentBits { logits: l, labels: labels.to_vec(), probs }, ng))
    }

    /// Mean binary cross-entropy in bits of `sigmoid(logits[:, 0])` against
    /// targets in `[0, 1]`.
    pub fn sigmoid_bce_bits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let l = self.idx(logits)?;
        let s = self.val(l).shape();
        if s.len() != 2 || s[1] != 1 || s[0] != targets.len() || s[0] == 0 {
            return Err(Error::Shape(format!("binary cross-entropy: logits {s:?} with {} targets", targets.len())));
        }
        if let Some(bad) = targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::Domain(format!("target {bad} outside [0, 1]")));
        }
        let z = self.val(l).data();
        let n = z.len() as f64;
        // -[t ln s(z) + (1-t) ln(1-s(z))] = softplus(z) - t z
        let loss = z.iter().zip(targets).map(|(&z, &t)| kernels::softplus(z) - t * z).sum::<f64>() / (n * LN2);
        let probs = z.iter().map(|&z| kernels::sigmoid(z)).collect();
        let ng = self.ng(l);
        Ok(self.push(Tensor::scalar(loss), Op::SigmoidBceBits { logits: l, targets: targets.to_vec(), probs }, ng))
    }

    pub fn gather_sum(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let xi = self.idx(x)?;
        let s = self.val(xi).shape();
        if s.len() != 2 || s[0] != index.len() {
            return Err(Error::Shape(format!("gather: {s:?} with {} indices", index.len())));
        }
        let m = s[1];
        if let Some(bad) = index.iter().find(|&&c| c >= m) {
            return Err(Error::Domain(format!("column {bad} outside [0, {m})")));
        }
        let total = index.iter().enumerate().map(|(r, &c)| self.val(xi).data()[r * m + c]).sum();
        let ng = self.ng(xi);
        Ok(self.push(Tensor::scalar(total), Op::GatherSum { x: xi, index: index.to_vec() }, ng))
    }

    /// Reverse sweep from the scalar node `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.idx(output)?;
        if self.val(out).len() != 1 {
            return Err(Error::State(format!("backward needs a scalar output, got shape {:?}", self.val(out).shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out] = Some(Tensor::full(self.val(out).shape(), 1.0));

        for i in (0..=out).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            if matches!(self.nodes[i].op, Op::Leaf) || i == out {
                grads[i] = Some(g);
            }
        }

        Ok(Gradients { graph: self.id, grads, shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect() })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: usize, data: Vec<f64>) -> Result<()> {
        if !self.ng(target) {
            return Ok(());
        }
        let t = Tensor::new(self.val(target).shape().to_vec(), data)?;
        match &mut grads[target] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd.to_vec())?;
                self.accumulate(grads, *b, gd.to_vec())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gd.to_vec())?;
                self.accumulate(grads, *b, gd.iter().map(|v| -v).collect())?;
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.val(*a).data(), self.val(*b).data());
                self.accumulate(grads, *a, gd.iter().zip(vb).map(|(g, y)| g * y).collect())?;
                self.accumulate(grads, *b, gd.iter().zip(va).map(|(g, x)| g * x).collect())?;
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, gd.iter().map(|v| v * f).collect())?,
            Op::Sum(a) => {
                let n = self.val(*a).len();
                self.accumulate(grads, *a, vec![gd[0]; n])?;
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.val(*a).shape(), self.val(*b).shape());
                let (n, k, m) = (sa[0], sa[1], sb[1]);
                let (dx, dw) = kernels::matmul_backward(
                    self.val(*a).data(),
                    self.val(*b).data(),
                    gd,
                    n,
                    k,
                    m,
                    self.ng(*a),
                    self.ng(*b),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, *a, dx)?;
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *b, dw)?;
                }
            }
            Op::AddRowBias(x, b) => {
                self.accumulate(grads, *x, gd.to_vec())?;
                let m = self.val(*b).len();
                let mut db = vec![0.0; m];
                for row in gd.chunks_exact(m) {
                    for (acc, v) in db.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                self.accumulate(grads, *b, db)?;
            }
            Op::Relu(x) => {
                let out = self.val(i).data();
                self.accumulate(grads, *x, gd.iter().zip(out).map(|(g, o)| if *o > 0.0 { *g } else { 0.0 }).collect())?;
            }
            Op::Conv2d { x, w, b, dims } => {
                let (dx, dw, db) =
                    kernels::conv2d_backward(self.val(*x).data(), self.val(*w).data(), gd, *dims, self.ng(*x));
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx)?;
                }
                self.accumulate(grads, *w, dw)?;
                self.accumulate(grads, *b, db)?;
            }
            Op::MaxPool2 { x, argmax } => {
                let dx = kernels::maxpool2_backward(gd, argmax, self.val(*x).len());
                self.accumulate(grads, *x, dx)?;
            }
            Op::Reshape(x) => self.accumulate(grads, *x, gd.to_vec())?,
            Op::SoftmaxXentBits { logits, labels, probs } => {
                let k = self.val(*logits).shape()[1];
                let scale = gd[0] / (labels.len() as f64 * LN2);
                let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &y) in labels.iter().enumerate() {
                    d[r * k + y] -= scale;
                }
                self.accumulate(grads, *logits, d)?;
            }
            Op::SigmoidBceBits { logits, targets, probs } => {
                let scale = gd[0] / (targets.len() as f64 * LN2);
                let d = probs.iter().zip(targets).map(|(p, t)| (p - t) * scale).collect();
                self.accumulate(grads, *logits, d)?;
            }
            Op::GatherSum { x, index } => {
                let m = self.val(*x).shape()[1];
                let mut d = vec![0.0; self.val(*x).len()];
                for (r, &c) in index.iter().enumerate() {
                    d[r * m + c] = gd[0];
                }
                self.accumulate(grads, *x, d)?;
            }
        }
        Ok(())
    }
}
