//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node holding its output tensor
//! plus whatever the backward pass needs. [`Graph::backward`] walks the tape
//! in reverse, accumulating gradients additively so a tensor used several
//! times (shared weights, residual inputs) collects contributions from every
//! use. Nodes that no trainable leaf feeds are skipped entirely.

use super::kernels::{self, BnCtx, Conv2dGeom, CosCtx, Pad2d};
use super::{Mode, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Handle to a node in one specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Value(usize);

enum Op<T> {
    Leaf,
    Conv2d {
        x: Value,
        w: Value,
        b: Value,
        geom: Conv2dGeom,
        /// im2col patches saved by the forward pass (empty when no gradient
        /// is needed); backward consumes them instead of rebuilding.
        cols: Vec<T>,
    },
    Linear {
        x: Value,
        w: Value,
        b: Value,
    },
    LeakyRelu {
        x: Value,
        slope: T,
    },
    BatchNorm {
        x: Value,
        gamma: Value,
        beta: Value,
        ctx: BnCtx<T>,
    },
    Dropout {
        x: Value,
        mask: Vec<T>,
    },
    MaxPool1d {
        x: Value,
        argmax: Vec<usize>,
    },
    Pad2d {
        x: Value,
        pad: Pad2d,
    },
    Reshape {
        x: Value,
    },
    Add {
        a: Value,
        b: Value,
    },
    /// y = mul·x + add elementwise with constant coefficients. A zero `mul`
    /// produces the constant directly and backward skips the input, so a
    /// zero-weighted loss term contributes exactly nothing to values or
    /// gradients.
    Affine {
        x: Value,
        mul: T,
    },
    MeanAll {
        x: Value,
    },
    Mse {
        a: Value,
        b: Value,
    },
    CosineSim {
        a: Value,
        b: Value,
        eps: f64,
        ctx: CosCtx,
    },
    WeightedCrossEntropy {
        logits: Value,
        targets: Vec<usize>,
        weights: Vec<T>,
        probs: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded computation: build forward with the methods below, then call
/// [`Graph::backward`] once on a scalar result.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Grads<T> {
    by_node: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient for a node, if any path from the loss reached it. Leaves
    /// nothing touched hold `None`, which callers treat as an exact zero.
    pub fn get(&self, v: Value) -> Option<&Tensor<T>> {
        self.by_node[v.0].as_ref()
    }

    pub fn take(&mut self, v: Value) -> Option<Tensor<T>> {
        self.by_node[v.0].take()
    }
}

/// Running batch-norm statistics, owned outside the graph (they are state,
/// not differentiated parameters). Train-mode forward updates them in place.
pub struct BatchStats<'a, T> {
    pub mean: &'a mut Tensor<T>,
    pub var: &'a mut Tensor<T>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        kernels::tune_allocator();
        Graph {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Value {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Value(self.nodes.len() - 1)
    }

    fn needs(&self, v: Value) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Tensor produced by a node.
    pub fn value(&self, v: Value) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Move a leaf's tensor out of the graph (used to hand parameters back
    /// after a step). The node keeps an empty placeholder.
    pub fn take_leaf(&mut self, v: Value) -> Tensor<T> {
        debug_assert!(matches!(self.nodes[v.0].op, Op::Leaf));
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(vec![0]))
    }

    /// Register an input tensor; `trainable` marks it as a gradient target.
    pub fn leaf(&mut self, t: Tensor<T>, trainable: bool) -> Value {
        self.push(t, Op::Leaf, trainable)
    }

    pub fn conv2d(
        &mut self,
        x: Value,
        w: Value,
        b: Value,
        stride: (usize, usize),
        dilation: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Value> {
        let geom = Conv2dGeom::resolve(
            self.value(x).shape(),
            self.value(w).shape(),
            stride,
            dilation,
            padding,
        )?;
        let (out, cols) = kernels::conv2d_forward(self.value(x), self.value(w), self.value(b), &geom)?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        let cols = if needs { cols } else { Vec::new() };
        Ok(self.push(out, Op::Conv2d { x, w, b, geom, cols }, needs))
    }

    /// 1D convolution expressed as a height-1 2D convolution.
    pub fn conv1d(
        &mut self,
        x: Value,
        w: Value,
        b: Value,
        stride: usize,
        dilation: usize,
        padding: usize,
    ) -> Result<Value> {
        let [batch, ch, t] = *self.value(x).shape() else {
            return Err(Error::Shape(format!(
                "conv1d input must be [batch, ch, T], got {:?}",
                self.value(x).shape()
            )));
        };
        let [oc, ic, k] = *self.value(w).shape() else {
            return Err(Error::Shape(format!(
                "conv1d weight must be [out_ch, in_ch, k], got {:?}",
                self.value(w).shape()
            )));
        };
        let x4 = self.reshape(x, vec![batch, ch, 1, t])?;
        let w4 = self.reshape(w, vec![oc, ic, 1, k])?;
        let y = self.conv2d(x4, w4, b, (1, stride), (1, dilation), (0, padding))?;
        let [b_, oc_, _, t_out] = *self.value(y).shape() else {
            unreachable!("conv2d output is rank 4");
        };
        self.reshape(y, vec![b_, oc_, t_out])
    }

    pub fn linear(&mut self, x: Value, w: Value, b: Value) -> Result<Value> {
        let out = kernels::linear_forward(self.value(x), self.value(w), self.value(b))?;
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(out, Op::Linear { x, w, b }, needs))
    }

    pub fn leaky_relu(&mut self, x: Value, slope: f64) -> Value {
        let s = T::from_f64(slope);
        let out = kernels::leaky_relu_forward(self.value(x), s);
        let needs = self.needs(x);
        self.push(out, Op::LeakyRelu { x, slope: s }, needs)
    }

    /// Batch norm over [batch, ch, T]. Train mode normalizes by batch
    /// statistics and updates `stats` in place; eval mode reads `stats`.
    pub fn batchnorm1d(
        &mut self,
        x: Value,
        gamma: Value,
        beta: Value,
        stats: BatchStats<'_, T>,
        momentum: f64,
        eps: f64,
        mode: Mode,
    ) -> Result<Value> {
        let (out, ctx) = kernels::batchnorm1d_forward(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            stats.mean,
            stats.var,
            momentum,
            eps,
            mode == Mode::Train,
        )?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(out, Op::BatchNorm { x, gamma, beta, ctx }, needs))
    }

    /// Inverted dropout. Eval mode and p = 0 are free: the input value is
    /// returned unchanged and no randomness is consumed.
    pub fn dropout(&mut self, x: Value, p: f64, mode: Mode, rng: &mut StreamRng) -> Result<Value> {
        if mode == Mode::Eval || p == 0.0 {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!(
                    "dropout probability must be in [0,1), got {p}"
                )));
            }
            return Ok(x);
        }
        let (out, mask) = kernels::dropout_forward(self.value(x), p, rng)?;
        let needs = self.needs(x);
        Ok(self.push(out, Op::Dropout { x, mask }, needs))
    }

    pub fn maxpool1d(&mut self, x: Value, k: usize, stride: usize) -> Result<Value> {
        let (out, argmax) = kernels::maxpool1d_forward(self.value(x), k, stride)?;
        let needs = self.needs(x);
        Ok(self.push(out, Op::MaxPool1d { x, argmax }, needs))
    }

    /// Zero-pad the last two axes of [batch, ch, H, W]:
    /// `pad = [before_h, after_h, before_w, after_w]`.
    pub fn pad2d(&mut self, x: Value, pad: Pad2d) -> Result<Value> {
        let out = kernels::pad2d_forward(self.value(x), pad)?;
        let needs = self.needs(x);
        Ok(self.push(out, Op::Pad2d { x, pad }, needs))
    }

    pub fn reshape(&mut self, x: Value, shape: Vec<usize>) -> Result<Value> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.value(x).shape(),
                shape
            )));
        }
        let out = Tensor::new(shape, self.value(x).data().to_vec())?;
        let needs = self.needs(x);
        Ok(self.push(out, Op::Reshape { x }, needs))
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "add operands must share a shape: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add { a, b }, needs))
    }

    /// Elementwise y = mul·x + add with constants. `mul = 0` yields the
    /// constant tensor exactly and detaches the input from the backward pass.
    pub fn affine(&mut self, x: Value, mul: f64, add: f64) -> Value {
        let (m, a) = (T::from_f64(mul), T::from_f64(add));
        let out = if mul == 0.0 {
            Tensor::full(self.value(x).shape().to_vec(), a)
        } else {
            self.value(x).map(|v| m * v + a)
        };
        let needs = mul != 0.0 && self.needs(x);
        self.push(out, Op::Affine { x, mul: m }, needs)
    }

    pub fn mean_all(&mut self, x: Value) -> Value {
        let out = Tensor::scalar(kernels::mean_all_forward(self.value(x)));
        let needs = self.needs(x);
        self.push(out, Op::MeanAll { x }, needs)
    }

    pub fn mse(&mut self, a: Value, b: Value) -> Result<Value> {
        let out = kernels::mse_forward(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(out), Op::Mse { a, b }, needs))
    }

    /// Per-row cosine similarity of [batch, f] operands → [batch].
    pub fn cosine_sim(&mut self, a: Value, b: Value, eps: f64) -> Result<Value> {
        let (out, ctx) = kernels::cosine_forward(self.value(a), self.value(b), eps)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::CosineSim { a, b, eps, ctx }, needs))
    }

    pub fn weighted_cross_entropy(
        &mut self,
        logits: Value,
        targets: &[usize],
        class_weights: &[T],
    ) -> Result<Value> {
        let (loss, probs) = kernels::wce_forward(self.value(logits), targets, class_weights)?;
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::WeightedCrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: class_weights.to_vec(),
                probs,
            },
            needs,
        ))
    }

    fn accumulate(grads: &mut [Option<Tensor<T>>], v: Value, g: Tensor<T>) {
        match &mut grads[v.0] {
            Some(existing) => {
                for (dst, src) in existing.data_mut().iter_mut().zip(g.data()) {
                    *dst += *src;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse pass from a scalar loss. Populates a gradient for every node
    /// on a path from a trainable leaf to the loss; each graph supports
    /// exactly one backward call.
    pub fn backward(&mut self, loss: Value) -> Result<Grads<T>> {
        if self.consumed {
            return Err(Error::Graph(
                "backward was already called on this graph".into(),
            ));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Graph(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(
            self.value(loss).shape().to_vec(),
            vec![T::one()],
        )?);
        for i in (0..=loss.0).rev() {
            if grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let d_out = grads[i].take().expect("checked above");
            match &self.nodes[i].op {
                Op::Leaf => {
                    grads[i] = Some(d_out); // keep for the caller
                }
                Op::Conv2d { x, w, b, geom, .. } => {
                    let (x, w, b, geom) = (*x, *w, *b, *geom);
                    let cols = match &mut self.nodes[i].op {
                        Op::Conv2d { cols, .. } => std::mem::take(cols),
                        _ => unreachable!("matched Conv2d above"),
                    };
                    let g = kernels::conv2d_backward(
                        self.value(x),
                        self.value(w),
                        &d_out,
                        &geom,
                        &cols,
                        self.needs(x),
                    );
                    if let Some(dx) = g.d_x {
                        Self::accumulate(&mut grads, x, dx);
                    }
                    if self.needs(w) {
                        Self::accumulate(&mut grads, w, g.d_w);
                    }
                    if self.needs(b) {
                        Self::accumulate(&mut grads, b, g.d_b);
                    }
                }
                Op::Linear { x, w, b } => {
                    let (x, w, b) = (*x, *w, *b);
                    let g = kernels::linear_backward(self.value(x), self.value(w), &d_out, self.needs(x));
                    if let Some(dx) = g.d_x {
                        Self::accumulate(&mut grads, x, dx);
                    }
                    if self.needs(w) {
                        Self::accumulate(&mut grads, w, g.d_w);
                    }
                    if self.needs(b) {
                        Self::accumulate(&mut grads, b, g.d_b);
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let (x, slope) = (*x, *slope);
                    let dx = kernels::leaky_relu_backward(self.value(x), slope, &d_out);
                    Self::accumulate(&mut grads, x, dx);
                }
                Op::BatchNorm { x, gamma, beta, ctx } => {
                    let (x, gamma, beta) = (*x, *gamma, *beta);
                    let g = kernels::batchnorm1d_backward(self.value(x), self.value(gamma), ctx, &d_out);
                    if self.needs(x) {
                        Self::accumulate(&mut grads, x, g.d_x);
                    }
                    if self.needs(gamma) {
                        Self::accumulate(&mut grads, gamma, g.d_gamma);
                    }
                    if self.needs(beta) {
                        Self::accumulate(&mut grads, beta, g.d_beta);
                    }
                }
                Op::Dropout { x, mask } => {
                    let x = *x;
                    let data: Vec<T> = d_out.data().iter().zip(mask).map(|(&d, &m)| d * m).collect();
                    let dx = Tensor::new(self.value(x).shape().to_vec(), data)?;
                    Self::accumulate(&mut grads, x, dx);
                }
                Op::MaxPool1d { x, argmax } => {
                    let x = *x;
                    let dx = kernels::maxpool1d_backward(self.value(x).shape(), argmax, &d_out);
                    Self::accumulate(&mut grads, x, dx);
                }
                Op::Pad2d { x, pad } => {
                    let (x, pad) = (*x, *pad);
                    let dx = kernels::pad2d_backward(self.value(x).shape(), pad, &d_out);
                    Self::accumulate(&mut grads, x, dx);
                }
                Op::Reshape { x } => {
                    let x = *x;
                    let dx = Tensor::new(self.value(x).shape().to_vec(), d_out.into_data())?;
                    Self::accumulate(&mut grads, x, dx);
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        Self::accumulate(&mut grads, a, d_out.clone());
                    }
                    if self.needs(b) {
                        Self::accumulate(&mut grads, b, d_out);
                    }
                }
                Op::Affine { x, mul } => {
                    // mul = 0 never reaches here: the node is created with
                    // needs_grad = false, detaching the input exactly.
                    let (x, mul) = (*x, *mul);
                    let dx = d_out.map(|d| mul * d);
                    Self::accumulate(&mut grads, x, dx);
                }
                Op::MeanAll { x } => {
                    let x = *x;
                    let n = self.value(x).numel();
                    let d = d_out.item()? * T::from_f64(1.0 / n as f64);
                    let dx = Tensor::full(self.value(x).shape().to_vec(), d);
                    Self::accumulate(&mut grads, x, dx);
                }
                Op::Mse { a, b } => {
                    let (a, b) = (*a, *b);
                    let (da, db) = kernels::mse_backward(self.value(a), self.value(b), d_out.item()?);
                    if self.needs(a) {
                        Self::accumulate(&mut grads, a, da);
                    }
                    if self.needs(b) {
                        Self::accumulate(&mut grads, b, db);
                    }
                }
                Op::CosineSim { a, b, eps, ctx } => {
                    let (a, b, eps) = (*a, *b, *eps);
                    let (da, db) = kernels::cosine_backward(self.value(a), self.value(b), eps, ctx, &d_out);
                    if self.needs(a) {
                        Self::accumulate(&mut grads, a, da);
                    }
                    if self.needs(b) {
                        Self::accumulate(&mut grads, b, db);
                    }
                }
                Op::WeightedCrossEntropy {
                    logits,
                    targets,
                    weights,
                    probs,
                } => {
                    let logits = *logits;
                    let dl = kernels::wce_backward(probs, targets, weights, d_out.item()?);
                    Self::accumulate(&mut grads, logits, dl);
                }
            }
        }
        // Drop intermediate gradients, keeping only leaves.
        for (i, slot) in grads.iter_mut().enumerate() {
            if !matches!(self.nodes[i].op, Op::Leaf) {
                *slot = None;
            }
        }
        Ok(Grads { by_node: grads })
    }
}
