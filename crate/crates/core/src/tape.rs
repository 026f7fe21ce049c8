//! Reverse-mode differentiation over a linear tape.
//!
//! Every forward operation appends one node holding its output value and the
//! information its backward rule needs. Nodes only reference earlier nodes, so
//! the tape is always in topological order and [`Tape::backward`] is a single
//! reverse sweep.
//!
//! Gradients are accumulated into each node that requires them; calling
//! `backward` twice without [`Tape::zero_grads`] sums both passes.

use crate::error::{Error, Result};
use crate::tensor::{split_axis, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            // relu'(0) is taken as 0 in backward.
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }
}

/// Logistic function, evaluated without overflow for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Unary(Var, Activation),
    Softmax {
        x: Var,
        axis: usize,
    },
    Conv2d {
        input: Var,
        kernels: Var,
        bias: Var,
        stride: [usize; 2],
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    Reduce {
        x: Var,
        op: Reduction,
        axis: usize,
    },
    Reshape(Var),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
    },
    SumAll(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

#[derive(Debug, Default)]
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

    /// Drops every node recorded after the first `len`. Vars pointing past
    /// the new end become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    /// Records a differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of `v`; `None` when `v` does not require one.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let shape = node.value.shape().to_vec();
        let data = node.grad.clone().unwrap_or_else(|| vec![0.0; node.value.len()]);
        Some(Tensor::from_parts(shape, data))
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match self.shape(v) {
            &[r, c] => Ok((r, c)),
            s => Err(Error::Contract(format!("{op}: expected a matrix, got {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape(a), self.shape(b)));
        }
        let data = zip_with(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Add(a, b), &[a, b]))
    }

    /// `a [m×n] + row` where `row` holds `n` elements, broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims2("add_row", a)?;
        if self.value(row).len() != n {
            return Err(Error::shape("add_row", self.shape(a), self.shape(row)));
        }
        let r = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            for (x, &b) in data[i * n..(i + 1) * n].iter_mut().zip(r) {
                *x += b;
            }
        }
        Ok(self.push(Tensor::from_parts(vec![m, n], data), Op::AddRow(a, row), &[a, row]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mul", self.shape(a), self.shape(b)));
        }
        let data = zip_with(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2("transpose", a)?;
        let src = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        Ok(self.push(Tensor::from_parts(vec![n, m], data), Op::Transpose(a), &[a]))
    }

    pub fn activation(&mut self, a: Var, f: Activation) -> Var {
        let value = self.value(a).map(|x| f.apply(x));
        self.push(value, Op::Unary(a, f), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.masked_softmax(x, axis, None)
    }

    /// Softmax along `axis`, max-stabilized. Positions where `mask` is false
    /// are treated as −∞ logits and come out exactly zero; at least one
    /// position must stay unmasked.
    pub fn masked_softmax(&mut self, x: Var, axis: usize, mask: Option<&[bool]>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Contract(format!(
                "softmax axis {axis} out of range for {shape:?}"
            )));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        if let Some(m) = mask {
            if m.len() != n {
                return Err(Error::shape("softmax mask", &shape, &[m.len()]));
            }
            if !m.iter().any(|&b| b) {
                return Err(Error::Contract("softmax mask hides every position".into()));
            }
        }
        let keep = |k: usize| mask.is_none_or(|m| m[k]);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * n * inner + k * inner + i;
                let max = (0..n)
                    .filter(|&k| keep(k))
                    .map(|k| src[at(k)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in (0..n).filter(|&k| keep(k)) {
                    let e = (src[at(k)] - max).exp();
                    out[at(k)] = e;
                    total += e;
                }
                for k in (0..n).filter(|&k| keep(k)) {
                    out[at(k)] /= total;
                }
            }
        }
        Ok(self.push(Tensor::from_parts(shape, out), Op::Softmax { x, axis }, &[x]))
    }

    /// Valid (unpadded) cross-correlation.
    ///
    /// `input` is `[in, H, W]`, `kernels` is `[out, in, kh, kw]`, `bias` holds
    /// `out` elements. Output is `[out, (H-kh)/sh + 1, (W-kw)/sw + 1]`.
    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var, stride: [usize; 2]) -> Result<Var> {
        let (c_in, h, w) = match *self.shape(input) {
            [c, h, w] => (c, h, w),
            ref s => return Err(Error::Contract(format!("conv2d input must be [C,H,W], got {s:?}"))),
        };
        let (c_out, k_in, kh, kw) = match *self.shape(kernels) {
            [o, i, a, b] => (o, i, a, b),
            ref s => {
                return Err(Error::Contract(format!(
                    "conv2d kernels must be [out,in,kh,kw], got {s:?}"
                )))
            }
        };
        if k_in != c_in {
            return Err(Error::shape("conv2d", self.shape(input), self.shape(kernels)));
        }
        if self.value(bias).len() != c_out {
            return Err(Error::shape("conv2d bias", self.shape(kernels), self.shape(bias)));
        }
        if stride[0] == 0 || stride[1] == 0 {
            return Err(Error::Contract("conv2d stride must be positive".into()));
        }
        if kh > h || kw > w {
            return Err(Error::WindowTooLarge {
                op: "conv2d",
                window: vec![kh, kw],
                input: vec![h, w],
            });
        }
        let (oh, ow) = ((h - kh) / stride[0] + 1, (w - kw) / stride[1] + 1);
        let x = self.value(input).data();
        let k = self.value(kernels).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; c_out * oh * ow];
        for o in 0..c_out {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b[o];
                    for c in 0..c_in {
                        for a in 0..kh {
                            let xrow = c * h * w + (i * stride[0] + a) * w + j * stride[1];
                            let krow = ((o * c_in + c) * kh + a) * kw;
                            for bb in 0..kw {
                                acc += k[krow + bb] * x[xrow + bb];
                            }
                        }
                    }
                    out[(o * oh + i) * ow + j] = acc;
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![c_out, oh, ow], out),
            Op::Conv2d {
                input,
                kernels,
                bias,
                stride,
            },
            &[input, kernels, bias],
        ))
    }

    /// Per-window maximum over `[C, H, W]`. Trailing partial windows are
    /// dropped; ties resolve to the first position in row-major order.
    pub fn maxpool2d(&mut self, input: Var, window: [usize; 2], stride: [usize; 2]) -> Result<Var> {
        let (c, h, w) = match *self.shape(input) {
            [c, h, w] => (c, h, w),
            ref s => return Err(Error::Contract(format!("maxpool2d input must be [C,H,W], got {s:?}"))),
        };
        if window[0] == 0 || window[1] == 0 || stride[0] == 0 || stride[1] == 0 {
            return Err(Error::Contract("maxpool2d window and stride must be positive".into()));
        }
        if window[0] > h || window[1] > w {
            return Err(Error::WindowTooLarge {
                op: "maxpool2d",
                window: window.to_vec(),
                input: vec![h, w],
            });
        }
        let (oh, ow) = ((h - window[0]) / stride[0] + 1, (w - window[1]) / stride[1] + 1);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = usize::MAX;
                    for a in 0..window[0] {
                        for b in 0..window[1] {
                            let idx = ch * h * w + (i * stride[0] + a) * w + j * stride[1] + b;
                            if best == usize::MAX || x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![c, oh, ow], out),
            Op::MaxPool2d { input, argmax },
            &[input],
        ))
    }

    /// Reduces `axis` away. Reducing a rank-1 tensor yields shape `[1]`.
    pub fn reduce(&mut self, x: Var, op: Reduction, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Contract(format!(
                "reduce axis {axis} out of range for {shape:?}"
            )));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let base = (o * n + k) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        if op == Reduction::Mean {
            let s = 1.0 / n as f64;
            out.iter_mut().for_each(|v| *v *= s);
        }
        let mut out_shape: Vec<usize> = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        Ok(self.push(Tensor::from_parts(out_shape, out), Op::Reduce { x, op, axis }, &[x]))
    }

    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(x, Reduction::Mean, axis)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let total = self.value(x).sum();
        self.push(Tensor::scalar(total), Op::SumAll(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Slice `len` entries of `axis` starting at `start`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::Contract(format!(
                "narrow axis {axis} [{start}, {}) out of range for {shape:?}",
                start + len
            )));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * n + start) * inner;
            out.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.push(Tensor::from_parts(out_shape, out), Op::Narrow { x, axis, start }, &[x]))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Contract(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let n = self.shape(v)[axis];
                let src = self.value(v).data();
                out.extend_from_slice(&src[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// Row lookup: `table [V×d]`, output `[ids.len()×d]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims2("gather_rows", table)?;
        if ids.is_empty() {
            return Err(Error::Contract("gather_rows with no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Vocab { id: bad, size: v });
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), d], out),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Layer normalization over the last axis of a matrix.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.dims2("layer_norm", x)?;
        if self.value(gamma).len() != n || self.value(beta).len() != n {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut normalized = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + eps).sqrt();
            inv_std[i] = r;
            for j in 0..n {
                let xh = (row[j] - mu) * r;
                normalized[i * n + j] = xh;
                out[i * n + j] = xh * g[j] + b[j];
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// Summed binary cross-entropy on logits, in the overflow-free form
    /// `max(z,0) − z·y + ln(1 + e^{−|z|})`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        if self.value(logits).len() != targets.len() {
            return Err(Error::shape("bce_with_logits", self.shape(logits), &[targets.len()]));
        }
        let loss = self
            .value(logits)
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &y)| stable_bce(z, y))
            .sum();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        ))
    }

    /// Back-propagates from the scalar `loss`, accumulating into every node
    /// that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let end = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; end];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..end).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads);
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn backward_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims(self.shape(*a));
                let n = self.shape(*b)[1];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.requires_grad(*a) {
                    // dA = G·Bᵀ
                    let da = slot(grads, *a, m * k);
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * bv[p * n + j];
                            }
                            da[i * k + p] += s;
                        }
                    }
                }
                if self.requires_grad(*b) {
                    // dB = Aᵀ·G
                    let db = slot(grads, *b, k * n);
                    for i in 0..m {
                        for p in 0..k {
                            let a_ip = av[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += a_ip * g[i * n + j];
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.requires_grad(*v) {
                        add_into(slot(grads, *v, g.len()), g);
                    }
                }
            }
            Op::AddRow(a, row) => {
                if self.requires_grad(*a) {
                    add_into(slot(grads, *a, g.len()), g);
                }
                if self.requires_grad(*row) {
                    let n = self.value(*row).len();
                    let dr = slot(grads, *row, n);
                    for chunk in g.chunks(n) {
                        add_into(dr, chunk);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    let da = slot(grads, *a, g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] * bv[i];
                    }
                }
                if self.requires_grad(*b) {
                    let db = slot(grads, *b, g.len());
                    for i in 0..g.len() {
                        db[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(a, s) => {
                if self.requires_grad(*a) {
                    let da = slot(grads, *a, g.len());
                    for i in 0..g.len() {
                        da[i] += s * g[i];
                    }
                }
            }
            Op::Transpose(a) => {
                if self.requires_grad(*a) {
                    let (m, n) = dims(self.shape(*a));
                    let da = slot(grads, *a, m * n);
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::Unary(a, f) => {
                if self.requires_grad(*a) {
                    let x = self.value(*a).data();
                    let da = slot(grads, *a, g.len());
                    for i in 0..g.len() {
                        let d = match f {
                            Activation::Tanh => 1.0 - out[i] * out[i],
                            Activation::Relu => {
                                if x[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Activation::Sigmoid => out[i] * (1.0 - out[i]),
                        };
                        da[i] += g[i] * d;
                    }
                }
            }
            Op::Softmax { x, axis } => {
                if self.requires_grad(*x) {
                    let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                    let dx = slot(grads, *x, g.len());
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| o * n * inner + k * inner + i;
                            let dot: f64 = (0..n).map(|k| g[at(k)] * out[at(k)]).sum();
                            for k in 0..n {
                                dx[at(k)] += out[at(k)] * (g[at(k)] - dot);
                            }
                        }
                    }
                }
            }
            Op::Conv2d {
                input,
                kernels,
                bias,
                stride,
            } => {
                let (c_in, h, w) = dims3(self.shape(*input));
                let ks = self.shape(*kernels);
                let (c_out, kh, kw) = (ks[0], ks[2], ks[3]);
                let (_, oh, ow) = dims3(node.value.shape());
                let x = self.value(*input).data();
                let k = self.value(*kernels).data();
                if self.requires_grad(*bias) {
                    let db = slot(grads, *bias, c_out);
                    for o in 0..c_out {
                        db[o] += g[o * oh * ow..(o + 1) * oh * ow].iter().sum::<f64>();
                    }
                }
                if self.requires_grad(*kernels) {
                    let dk = slot(grads, *kernels, k.len());
                    for o in 0..c_out {
                        for i in 0..oh {
                            for j in 0..ow {
                                let go = g[(o * oh + i) * ow + j];
                                for c in 0..c_in {
                                    for a in 0..kh {
                                        let xrow = c * h * w + (i * stride[0] + a) * w + j * stride[1];
                                        let krow = ((o * c_in + c) * kh + a) * kw;
                                        for bb in 0..kw {
                                            dk[krow + bb] += go * x[xrow + bb];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if self.requires_grad(*input) {
                    let dx = slot(grads, *input, x.len());
                    for o in 0..c_out {
                        for i in 0..oh {
                            for j in 0..ow {
                                let go = g[(o * oh + i) * ow + j];
                                for c in 0..c_in {
                                    for a in 0..kh {
                                        let xrow = c * h * w + (i * stride[0] + a) * w + j * stride[1];
                                        let krow = ((o * c_in + c) * kh + a) * kw;
                                        for bb in 0..kw {
                                            dx[xrow + bb] += go * k[krow + bb];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::MaxPool2d { input, argmax } => {
                if self.requires_grad(*input) {
                    let dx = slot(grads, *input, self.value(*input).len());
                    for (o, &src) in argmax.iter().enumerate() {
                        dx[src] += g[o];
                    }
                }
            }
            Op::Reduce { x, op, axis } => {
                if self.requires_grad(*x) {
                    let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                    let s = match op {
                        Reduction::Mean => 1.0 / n as f64,
                        Reduction::Sum => 1.0,
                    };
                    let dx = slot(grads, *x, outer * n * inner);
                    for o in 0..outer {
                        for k in 0..n {
                            let base = (o * n + k) * inner;
                            for i in 0..inner {
                                dx[base + i] += s * g[o * inner + i];
                            }
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if self.requires_grad(*x) {
                    add_into(slot(grads, *x, g.len()), g);
                }
            }
            Op::Narrow { x, axis, start } => {
                if self.requires_grad(*x) {
                    let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                    let len = node.value.shape()[*axis];
                    let dx = slot(grads, *x, outer * n * inner);
                    for o in 0..outer {
                        let to = (o * n + start) * inner;
                        let from = o * len * inner;
                        add_into(&mut dx[to..to + len * inner], &g[from..from + len * inner]);
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let n = self.shape(v)[*axis];
                    if self.requires_grad(v) {
                        let dv = slot(grads, v, outer * n * inner);
                        for o in 0..outer {
                            let from = (o * total + offset) * inner;
                            add_into(&mut dv[o * n * inner..(o + 1) * n * inner], &g[from..from + n * inner]);
                        }
                    }
                    offset += n;
                }
            }
            Op::Gather { table, ids } => {
                if self.requires_grad(*table) {
                    let (_, d) = dims(self.shape(*table));
                    let dt = slot(grads, *table, self.value(*table).len());
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut dt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let (m, n) = dims(node.value.shape());
                let gv = self.value(*gamma).data();
                if self.requires_grad(*gamma) {
                    let dg = slot(grads, *gamma, n);
                    for i in 0..m {
                        for j in 0..n {
                            dg[j] += g[i * n + j] * normalized[i * n + j];
                        }
                    }
                }
                if self.requires_grad(*beta) {
                    let db = slot(grads, *beta, n);
                    for chunk in g.chunks(n) {
                        add_into(db, chunk);
                    }
                }
                if self.requires_grad(*x) {
                    let dx = slot(grads, *x, m * n);
                    for i in 0..m {
                        let row = i * n..(i + 1) * n;
                        let dxh: Vec<f64> = g[row.clone()].iter().zip(gv).map(|(a, b)| a * b).collect();
                        let xh = &normalized[row];
                        let mean_dxh = dxh.iter().sum::<f64>() / n as f64;
                        let mean_dxh_xh = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            dx[i * n + j] += inv_std[i] * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
                        }
                    }
                }
            }
            Op::BceWithLogits { logits, targets } => {
                if self.requires_grad(*logits) {
                    let z = self.value(*logits).data();
                    let dz = slot(grads, *logits, z.len());
                    for i in 0..z.len() {
                        dz[i] += g[0] * (sigmoid(z[i]) - targets[i]);
                    }
                }
            }
            Op::SumAll(x) => {
                if self.requires_grad(*x) {
                    let dx = slot(grads, *x, self.value(*x).len());
                    dx.iter_mut().for_each(|v| *v += g[0]);
                }
            }
        }
    }
}

/// Per-label loss `−[y ln σ(z) + (1−y) ln(1−σ(z))]` in overflow-free form.
pub fn stable_bce(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += a_ip * bv;
            }
        }
    }
    out
}

fn zip_with(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn dims(shape: &[usize]) -> (usize, usize) {
    (shape[0], shape[1])
}

fn dims3(shape: &[usize]) -> (usize, usize, usize) {
    (shape[0], shape[1], shape[2])
}
