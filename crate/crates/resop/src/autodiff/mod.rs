//! Minimal reverse-mode differentiation over an explicit tape.
//!
//! The primitive set is exactly what the operator networks need: elementwise
//! arithmetic, per-point channel mixing, 3x3 spatial convolution, truncated-mode
//! spectral convolution, activations, and scalar reductions. Every adjoint is
//! exact and covered by finite-difference checks.
//!
//! Shape promotion is explicit; the only broadcast is scalar-times-tensor
//! (`scale`). Field-valued tensors use `[channels, height, width]`.

mod check;
mod spectral;

pub use check::gradient_check;

use num_complex::Complex64;
use std::sync::Arc;

/// A dense 64-bit tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "tensor shape {shape:?} does not match {} values",
            values.len()
        );
        Self {
            shape,
            values,
            requires_grad: false,
        }
    }

    /// A trainable tensor (gradient is accumulated during backprop).
    pub fn param(shape: Vec<usize>, values: Vec<f64>) -> Self {
        let mut t = Self::new(shape, values);
        t.requires_grad = true;
        t
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self::new(shape, vec![0.0; len])
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(vec![1], vec![value])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Value {
    Owned(Tensor),
    Shared(Arc<Tensor>),
}

impl Value {
    fn tensor(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Shared(t) => t,
        }
    }
}

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Gelu(NodeId),
    Relu(NodeId),
    MeanReduce(NodeId),
    L2Norm(NodeId),
    ChannelLinear {
        x: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Conv3x3 {
        x: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    SpectralConv {
        x: NodeId,
        w_pos: NodeId,
        w_neg: NodeId,
        modes_h: usize,
        modes_w: usize,
        /// Block-bin values of the input spectra, cached for the adjoint.
        input_block: Vec<Complex64>,
    },
}

struct Node {
    op: Op,
    value: Value,
    needs_grad: bool,
}

/// Records primitive applications in topological order and replays them in
/// reverse for gradients. One tape per optimization step; tapes are
/// single-threaded, distinct tapes may run concurrently.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn values(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value.tensor().values
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].value.tensor().shape
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value: Value::Owned(value),
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Registers an owned leaf; gradient tracking follows `t.requires_grad`.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        let needs = t.requires_grad;
        self.push(Op::Leaf, t, needs)
    }

    /// Registers a shared leaf without copying its storage.
    pub fn leaf(&mut self, t: Arc<Tensor>) -> NodeId {
        let needs = t.requires_grad;
        self.nodes.push(Node {
            op: Op::Leaf,
            value: Value::Shared(t),
            needs_grad: needs,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn binary_elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> NodeId {
        let (ta, tb) = (self.nodes[a.0].value.tensor(), self.nodes[b.0].value.tensor());
        assert_eq!(ta.shape, tb.shape, "elementwise shape mismatch");
        let values = ta
            .values
            .iter()
            .zip(tb.values.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(ta.shape.clone(), values);
        let needs = self.needs(a) || self.needs(b);
        self.push(op, out, needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_elementwise(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_elementwise(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_elementwise(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let ta = self.nodes[a.0].value.tensor();
        let out = Tensor::new(
            ta.shape.clone(),
            ta.values.iter().map(|&x| x * factor).collect(),
        );
        let needs = self.needs(a);
        self.push(Op::Scale(a, factor), out, needs)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let ta = self.nodes[a.0].value.tensor();
        let out = Tensor::new(ta.shape.clone(), ta.values.iter().map(|&x| gelu(x)).collect());
        let needs = self.needs(a);
        self.push(Op::Gelu(a), out, needs)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let ta = self.nodes[a.0].value.tensor();
        let out = Tensor::new(
            ta.shape.clone(),
            ta.values.iter().map(|&x| x.max(0.0)).collect(),
        );
        let needs = self.needs(a);
        self.push(Op::Relu(a), out, needs)
    }

    /// Mean over all elements, yielding a `[1]` scalar.
    pub fn mean_reduce(&mut self, a: NodeId) -> NodeId {
        let ta = self.nodes[a.0].value.tensor();
        let mean = ta.values.iter().sum::<f64>() / ta.len() as f64;
        let needs = self.needs(a);
        self.push(Op::MeanReduce(a), Tensor::scalar(mean), needs)
    }

    /// Euclidean norm over all elements, yielding a `[1]` scalar.
    pub fn l2_norm(&mut self, a: NodeId) -> NodeId {
        let ta = self.nodes[a.0].value.tensor();
        let norm = ta.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let needs = self.needs(a);
        self.push(Op::L2Norm(a), Tensor::scalar(norm), needs)
    }

    /// Per-point channel mixing: `x [ci,h,w]`, `weight [co,ci]`, `bias [co]`
    /// giving `[co,h,w]`.
    pub fn channel_linear(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> NodeId {
        let (tx, tw, tb) = (
            self.nodes[x.0].value.tensor(),
            self.nodes[weight.0].value.tensor(),
            self.nodes[bias.0].value.tensor(),
        );
        assert_eq!(tx.shape.len(), 3, "channel_linear input must be [c,h,w]");
        let (ci, h, w) = (tx.shape[0], tx.shape[1], tx.shape[2]);
        assert_eq!(tw.shape.len(), 2, "channel_linear weight must be [co,ci]");
        let co = tw.shape[0];
        assert_eq!(tw.shape[1], ci, "weight input-channel mismatch");
        assert_eq!(tb.shape, vec![co], "bias shape mismatch");
        let n = h * w;
        let mut out = vec![0.0; co * n];
        for o in 0..co {
            let dst = &mut out[o * n..(o + 1) * n];
            dst.fill(tb.values[o]);
            for i in 0..ci {
                let coeff = tw.values[o * ci + i];
                if coeff == 0.0 {
                    continue;
                }
                let src = &tx.values[i * n..(i + 1) * n];
                for (d, s) in dst.iter_mut().zip(src.iter()) {
                    *d += coeff * s;
                }
            }
        }
        let needs = self.needs(x) || self.needs(weight) || self.needs(bias);
        self.push(
            Op::ChannelLinear { x, weight, bias },
            Tensor::new(vec![co, h, w], out),
            needs,
        )
    }

    /// Zero-padded 3x3 spatial convolution: `x [ci,h,w]`, `weight [co,ci,3,3]`,
    /// `bias [co]` giving `[co,h,w]`.
    pub fn conv3x3(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> NodeId {
        let (tx, tw, tb) = (
            self.nodes[x.0].value.tensor(),
            self.nodes[weight.0].value.tensor(),
            self.nodes[bias.0].value.tensor(),
        );
        assert_eq!(tx.shape.len(), 3, "conv3x3 input must be [c,h,w]");
        let (ci, h, w) = (tx.shape[0], tx.shape[1], tx.shape[2]);
        assert_eq!(tw.shape.len(), 4, "conv3x3 weight must be [co,ci,3,3]");
        let co = tw.shape[0];
        assert_eq!(tw.shape[1], ci, "weight input-channel mismatch");
        assert_eq!((tw.shape[2], tw.shape[3]), (3, 3), "kernel must be 3x3");
        assert_eq!(tb.shape, vec![co], "bias shape mismatch");
        let n = h * w;
        let mut out = vec![0.0; co * n];
        for o in 0..co {
            let dst = &mut out[o * n..(o + 1) * n];
            dst.fill(tb.values[o]);
            for i in 0..ci {
                let src = &tx.values[i * n..(i + 1) * n];
                let kernel = &tw.values[(o * ci + i) * 9..(o * ci + i) * 9 + 9];
                for (ky, kernel_row) in kernel.chunks_exact(3).enumerate() {
                    let dy = ky as isize - 1;
                    for (kx, &kv) in kernel_row.iter().enumerate() {
                        if kv == 0.0 {
                            continue;
                        }
                        let dx = kx as isize - 1;
                        accumulate_shifted(dst, src, h, w, dy, dx, kv);
                    }
                }
            }
        }
        let needs = self.needs(x) || self.needs(weight) || self.needs(bias);
        self.push(
            Op::Conv3x3 { x, weight, bias },
            Tensor::new(vec![co, h, w], out),
            needs,
        )
    }

    /// Truncated-mode spectral convolution. Weight blocks `w_pos`/`w_neg` have
    /// shape `[co,ci,modes_h,modes_w,2]` (interleaved re/im) and act on the
    /// non-negative / negative row-frequency corners of the half spectrum;
    /// Hermitian symmetry is completed at application time so real inputs give
    /// real outputs.
    pub fn spectral_conv(
        &mut self,
        x: NodeId,
        w_pos: NodeId,
        w_neg: NodeId,
        modes_h: usize,
        modes_w: usize,
    ) -> NodeId {
        let (tx, tp, tn) = (
            self.nodes[x.0].value.tensor(),
            self.nodes[w_pos.0].value.tensor(),
            self.nodes[w_neg.0].value.tensor(),
        );
        let (out, input_block) = spectral::forward(tx, tp, tn, modes_h, modes_w);
        let needs = self.needs(x) || self.needs(w_pos) || self.needs(w_neg);
        self.push(
            Op::SpectralConv {
                x,
                w_pos,
                w_neg,
                modes_h,
                modes_w,
                input_block,
            },
            out,
            needs,
        )
    }

    /// Reverse pass from a scalar loss node. Returns one gradient buffer per
    /// node that required it; leaves created from `requires_grad` tensors are
    /// the usual extraction points.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        assert_eq!(
            self.values(loss).len(),
            1,
            "backward requires a scalar loss node"
        );
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { by_node: grads }
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        if !node.needs_grad {
            return;
        }
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |dst| axpy(dst, g, 1.0));
                self.accumulate(grads, *b, |dst| axpy(dst, g, 1.0));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |dst| axpy(dst, g, 1.0));
                self.accumulate(grads, *b, |dst| axpy(dst, g, -1.0));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.values(*a), self.values(*b));
                self.accumulate(grads, *a, |dst| {
                    for ((d, &gi), &bi) in dst.iter_mut().zip(g).zip(vb) {
                        *d += gi * bi;
                    }
                });
                self.accumulate(grads, *b, |dst| {
                    for ((d, &gi), &ai) in dst.iter_mut().zip(g).zip(va) {
                        *d += gi * ai;
                    }
                });
            }
            Op::Scale(a, factor) => {
                let factor = *factor;
                self.accumulate(grads, *a, |dst| axpy(dst, g, factor));
            }
            Op::Gelu(a) => {
                let va = self.values(*a);
                self.accumulate(grads, *a, |dst| {
                    for ((d, &gi), &xi) in dst.iter_mut().zip(g).zip(va) {
                        *d += gi * gelu_derivative(xi);
                    }
                });
            }
            Op::Relu(a) => {
                let va = self.values(*a);
                self.accumulate(grads, *a, |dst| {
                    for ((d, &gi), &xi) in dst.iter_mut().zip(g).zip(va) {
                        if xi > 0.0 {
                            *d += gi;
                        }
                    }
                });
            }
            Op::MeanReduce(a) => {
                let n = self.values(*a).len() as f64;
                let gi = g[0] / n;
                self.accumulate(grads, *a, |dst| {
                    for d in dst.iter_mut() {
                        *d += gi;
                    }
                });
            }
            Op::L2Norm(a) => {
                // Subgradient 0 at the origin.
                let out = self.nodes[id].value.tensor().values[0];
                let va = self.values(*a);
                if out > 0.0 {
                    let gi = g[0] / out;
                    self.accumulate(grads, *a, |dst| {
                        for (d, &xi) in dst.iter_mut().zip(va) {
                            *d += gi * xi;
                        }
                    });
                }
            }
            Op::ChannelLinear { x, weight, bias } => {
                let tx = self.nodes[x.0].value.tensor();
                let tw = self.nodes[weight.0].value.tensor();
                let (ci, h, w) = (tx.shape[0], tx.shape[1], tx.shape[2]);
                let co = tw.shape[0];
                let n = h * w;
                if self.needs(*x) {
                    self.accumulate(grads, *x, |dst| {
                        for i in 0..ci {
                            let d = &mut dst[i * n..(i + 1) * n];
                            for o in 0..co {
                                let coeff = tw.values[o * ci + i];
                                if coeff == 0.0 {
                                    continue;
                                }
                                axpy(d, &g[o * n..(o + 1) * n], coeff);
                            }
                        }
                    });
                }
                if self.needs(*weight) {
                    self.accumulate(grads, *weight, |dst| {
                        for o in 0..co {
                            let go = &g[o * n..(o + 1) * n];
                            for i in 0..ci {
                                let xi = &tx.values[i * n..(i + 1) * n];
                                dst[o * ci + i] += dot(go, xi);
                            }
                        }
                    });
                }
                if self.needs(*bias) {
                    self.accumulate(grads, *bias, |dst| {
                        for o in 0..co {
                            dst[o] += g[o * n..(o + 1) * n].iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::Conv3x3 { x, weight, bias } => {
                let tx = self.nodes[x.0].value.tensor();
                let tw = self.nodes[weight.0].value.tensor();
                let (ci, h, w) = (tx.shape[0], tx.shape[1], tx.shape[2]);
                let co = tw.shape[0];
                let n = h * w;
                if self.needs(*x) {
                    self.accumulate(grads, *x, |dst| {
                        for o in 0..co {
                            let go = &g[o * n..(o + 1) * n];
                            for i in 0..ci {
                                let d = &mut dst[i * n..(i + 1) * n];
                                let kernel = &tw.values[(o * ci + i) * 9..(o * ci + i) * 9 + 9];
                                for (ky, kernel_row) in kernel.chunks_exact(3).enumerate() {
                                    let dy = ky as isize - 1;
                                    for (kx, &kv) in kernel_row.iter().enumerate() {
                                        if kv == 0.0 {
                                            continue;
                                        }
                                        // Transpose of the forward gather is a
                                        // scatter with the opposite shift.
                                        accumulate_shifted(d, go, h, w, -dy, -(kx as isize - 1), kv);
                                    }
                                }
                            }
                        }
                    });
                }
                if self.needs(*weight) {
                    self.accumulate(grads, *weight, |dst| {
                        for o in 0..co {
                            let go = &g[o * n..(o + 1) * n];
                            for i in 0..ci {
                                let xi = &tx.values[i * n..(i + 1) * n];
                                let base = (o * ci + i) * 9;
                                for ky in 0..3usize {
                                    for kx in 0..3usize {
                                        dst[base + ky * 3 + kx] += shifted_dot(
                                            go,
                                            xi,
                                            h,
                                            w,
                                            ky as isize - 1,
                                            kx as isize - 1,
                                        );
                                    }
                                }
                            }
                        }
                    });
                }
                if self.needs(*bias) {
                    self.accumulate(grads, *bias, |dst| {
                        for o in 0..co {
                            dst[o] += g[o * n..(o + 1) * n].iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::SpectralConv {
                x,
                w_pos,
                w_neg,
                modes_h,
                modes_w,
                input_block,
            } => {
                let tx = self.nodes[x.0].value.tensor();
                let tp = self.nodes[w_pos.0].value.tensor();
                let tn = self.nodes[w_neg.0].value.tensor();
                let adj = spectral::backward(
                    g,
                    tx,
                    tp,
                    tn,
                    *modes_h,
                    *modes_w,
                    input_block,
                    self.needs(*x),
                    self.needs(*w_pos) || self.needs(*w_neg),
                );
                if let Some(gx) = adj.x {
                    self.accumulate(grads, *x, |dst| axpy(dst, &gx, 1.0));
                }
                if let Some(gp) = adj.w_pos {
                    self.accumulate(grads, *w_pos, |dst| axpy(dst, &gp, 1.0));
                }
                if let Some(gn) = adj.w_neg {
                    self.accumulate(grads, *w_neg, |dst| axpy(dst, &gn, 1.0));
                }
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], id: NodeId, f: impl FnOnce(&mut [f64])) {
        if !self.needs(id) {
            return;
        }
        let slot = &mut grads[id.0];
        let buf = slot.get_or_insert_with(|| vec![0.0; self.nodes[id.0].value.tensor().len()]);
        f(buf);
    }
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    by_node: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.by_node[id.0].as_deref()
    }

    /// Gradient for `id`, or zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, id: NodeId, len: usize) -> Vec<f64> {
        match &self.by_node[id.0] {
            Some(g) => g.clone(),
            None => vec![0.0; len],
        }
    }

    pub fn take(&mut self, id: NodeId) -> Option<Vec<f64>> {
        self.by_node[id.0].take()
    }
}

fn axpy(dst: &mut [f64], src: &[f64], coeff: f64) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d += coeff * s;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// `dst[y][x] += coeff * src[y+dy][x+dx]` with zero padding outside the grid.
fn accumulate_shifted(
    dst: &mut [f64],
    src: &[f64],
    h: usize,
    w: usize,
    dy: isize,
    dx: isize,
    coeff: f64,
) {
    for y in 0..h as isize {
        let sy = y + dy;
        if sy < 0 || sy >= h as isize {
            continue;
        }
        let x_lo = (-dx).max(0);
        let x_hi = (w as isize - dx).min(w as isize);
        if x_lo >= x_hi {
            continue;
        }
        let drow = y as usize * w;
        let srow = sy as usize * w;
        for x in x_lo..x_hi {
            dst[drow + x as usize] += coeff * src[srow + (x + dx) as usize];
        }
    }
}

/// `Σ_yx a[y][x] * b[y+dy][x+dx]` with zero padding.
fn shifted_dot(a: &[f64], b: &[f64], h: usize, w: usize, dy: isize, dx: isize) -> f64 {
    let mut acc = 0.0;
    for y in 0..h as isize {
        let sy = y + dy;
        if sy < 0 || sy >= h as isize {
            continue;
        }
        let x_lo = (-dx).max(0);
        let x_hi = (w as isize - dx).min(w as isize);
        let arow = y as usize * w;
        let brow = sy as usize * w;
        for x in x_lo..x_hi {
            acc += a[arow + x as usize] * b[brow + (x + dx) as usize];
        }
    }
    acc
}

/// tanh-form GELU.
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[cfg(test)]
mod tests;
