use std::collections::BTreeMap;

use super::kernels::{self, ConvGeom, NormCache};
use super::Tensor;
use crate::error::{Error, Result};

/// Additive bias placed on masked softmax columns.
pub const MASK_BIAS: f64 = -1e30;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Upsample2x(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Square(Var),
    Pow(Var, f64),
    InstanceNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        cache: NormCache,
    },
    MatMul(Var, Var),
    Transpose(Var),
    SoftmaxRows(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    Reshape(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        input: Var,
        axis: usize,
        start: usize,
    },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of executed operations; the backward pass replays it in
/// reverse. A tape is single-threaded; build one per forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    leaves: BTreeMap<Var, Tensor>,
}

impl Gradients {
    /// Gradient of a grad-enabled leaf; `None` for constants and interior nodes.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.leaves.get(&var)
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis + 1..].iter().product(),
    )
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(x).map(f);
        let rg = self.requires_grad(x);
        self.push(value, rg, op)
    }

    /// Records a leaf. Grad-enabled leaves receive gradients on backward.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copies a value into a fresh constant leaf, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4("conv2d")?;
        let (k, wc, kh, kw) = self.value(weight).dims4("conv2d")?;
        if wc != c {
            return Err(Error::shape(
                "conv2d",
                format!("weight expects {wc} input channels, input has {c}"),
            ));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be at least 1"));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {h}x{w} (pad {pad})"),
            ));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [k] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias shape {:?}, expected [{k}]", self.value(b).shape()),
                ));
            }
        }
        let geom = ConvGeom {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        };
        let mut out = vec![0.0; n * k * geom.ho * geom.wo];
        kernels::conv2d_forward(
            self.value(input).data(),
            n,
            &geom,
            self.value(weight).data(),
            k,
            bias.map(|b| self.value(b).data()),
            &mut out,
        );
        let rg = self.requires_grad(input)
            || self.requires_grad(weight)
            || bias.is_some_and(|b| self.requires_grad(b));
        let value = Tensor::new(vec![n, k, geom.ho, geom.wo], out)?;
        Ok(self.push(
            value,
            rg,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    /// Nearest-neighbour 2× spatial upsampling.
    pub fn upsample2x(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4("upsample2x")?;
        let out = kernels::upsample2x_forward(self.value(input).data(), n * c, h, w);
        let value = Tensor::new(vec![n, c, 2 * h, 2 * w], out)?;
        let rg = self.requires_grad(input);
        Ok(self.push(value, rg, Op::Upsample2x(input)))
    }

    /// Nearest 2× upsampling followed by a stride-1 convolution padded by
    /// `(k - 1) / 2`, which preserves the doubled size for odd kernels.
    pub fn upsample_conv(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let up = self.upsample2x(input)?;
        let (_, _, kh, _) = self.value(weight).dims4("upsample_conv")?;
        self.conv2d(up, weight, bias, 1, (kh - 1) / 2)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(
            x,
            |v| if v >= 0.0 { v } else { slope * v },
            Op::LeakyRelu(x, slope),
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn powf(&mut self, x: Var, exponent: f64) -> Var {
        self.unary(x, |v| v.powf(exponent), Op::Pow(x, exponent))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, |v| k * v, Op::Scale(x, k))
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, |v| v + k, Op::AddScalar(x))
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Var {
        let neg = self.scale(x, -1.0);
        self.add_scalar(neg, 1.0)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        same_shape(name, self.value(a), self.value(b))?;
        let ta = self.value(a);
        let tb = self.value(b);
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, rg, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(s), rg, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let m = self.value(x).mean();
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(m), rg, Op::Mean(x))
    }

    /// Row means of a `[r, c]` matrix, giving `[r]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let [_, c] = t.shape()[..] else {
            return Err(Error::shape(
                "mean_rows",
                format!("expected 2-d, got {:?}", t.shape()),
            ));
        };
        let data: Vec<f64> = t
            .data()
            .chunks(c)
            .map(|r| r.iter().sum::<f64>() / c as f64)
            .collect();
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::from_vec(data), rg, Op::MeanRows(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, rg, Op::Reshape(x)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (&[m, k], &[k2, n]) = (ta.shape(), tb.shape()) else {
            return Err(Error::shape(
                "matmul",
                format!(
                    "expected matrices, got {:?} and {:?}",
                    ta.shape(),
                    tb.shape()
                ),
            ));
        };
        if k != k2 {
            return Err(Error::shape("matmul", format!("inner dims {k} vs {k2}")));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, false);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, rg, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let [r, c] = t.shape()[..] else {
            return Err(Error::shape(
                "transpose",
                format!("expected 2-d, got {:?}", t.shape()),
            ));
        };
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = t.data()[i * c + j];
            }
        }
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::new(vec![c, r], out)?, rg, Op::Transpose(x)))
    }

    /// Row-wise softmax of `input + mask_bias`, stabilized by row-max
    /// subtraction. Masked columns carry [`MASK_BIAS`] and come out exactly 0.
    pub fn softmax_rows(&mut self, input: Var, mask_bias: Option<&Tensor>) -> Result<Var> {
        let t = self.value(input);
        let [r, c] = t.shape()[..] else {
            return Err(Error::shape(
                "softmax_rows",
                format!("expected 2-d, got {:?}", t.shape()),
            ));
        };
        if let Some(b) = mask_bias {
            same_shape("softmax_rows", t, b)?;
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &t.data()[i * c..(i + 1) * c];
            let biased: Vec<f64> = match mask_bias {
                Some(b) => row
                    .iter()
                    .zip(&b.data()[i * c..(i + 1) * c])
                    .map(|(x, y)| x + y)
                    .collect(),
                None => row.to_vec(),
            };
            let max = biased.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max <= MASK_BIAS / 10.0 {
                return Err(Error::FullyMasked);
            }
            let o = &mut out[i * c..(i + 1) * c];
            let mut z = 0.0;
            for (dst, v) in o.iter_mut().zip(&biased) {
                *dst = (v - max).exp();
                z += *dst;
            }
            o.iter_mut().for_each(|v| *v /= z);
        }
        let rg = self.requires_grad(input);
        Ok(self.push(Tensor::new(vec![r, c], out)?, rg, Op::SoftmaxRows(input)))
    }

    pub fn instance_norm(&mut self, input: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4("instance_norm")?;
        if h * w < 2 {
            return Err(Error::DegeneratePlane(h * w));
        }
        for p in [gamma, beta] {
            if self.value(p).shape() != [c] {
                return Err(Error::shape(
                    "instance_norm",
                    format!("affine shape {:?}, expected [{c}]", self.value(p).shape()),
                ));
            }
        }
        let (out, cache) = kernels::instance_norm_forward(
            self.value(input).data(),
            n,
            c,
            h * w,
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let rg = self.requires_grad(input) || self.requires_grad(gamma) || self.requires_grad(beta);
        let value = Tensor::new(vec![n, c, h, w], out)?;
        Ok(self.push(
            value,
            rg,
            Op::InstanceNorm {
                input,
                gamma,
                beta,
                cache,
            },
        ))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::shape(
                "concat",
                format!("axis {axis} out of range for {base:?}"),
            ));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.value(v).shape();
            if s.len() != base.len()
                || s.iter()
                    .enumerate()
                    .any(|(i, &d)| i != axis && d != base[i])
            {
                return Err(Error::shape(
                    "concat",
                    format!("{s:?} vs {base:?} on axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let (outer, inner) = outer_inner(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = inputs.iter().any(|&v| self.requires_grad(v));
        Ok(self.push(
            Tensor::new(shape, data)?,
            rg,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(input);
        let shape = t.shape().to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape(
                "narrow",
                format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, inner) = outer_inner(&shape, axis);
        let src_chunk = shape[axis] * inner;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let off = o * src_chunk + start * inner;
            data.extend_from_slice(&t.data()[off..off + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.requires_grad(input);
        Ok(self.push(
            Tensor::new(out_shape, data)?,
            rg,
            Op::Narrow { input, axis, start },
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        if self.requires_grad(loss) {
            grads[loss.0] = Some(vec![1.0]);
        }
        let mut out = Gradients::default();
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let g = grads[id]
                    .take()
                    .unwrap_or_else(|| vec![0.0; node.value.numel()]);
                out.leaves
                    .insert(Var(id), Tensor::new(node.value.shape().to_vec(), g)?);
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
        }
        // Leaves recorded after the loss cannot influence it.
        for (id, node) in self.nodes.iter().enumerate().skip(loss.0 + 1) {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                out.leaves
                    .insert(Var(id), Tensor::zeros(node.value.shape()));
            }
        }
        Ok(out)
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut [f64]> {
        if !self.requires_grad(v) {
            return None;
        }
        let n = self.value(v).numel();
        Some(
            grads[v.0]
                .get_or_insert_with(|| vec![0.0; n])
                .as_mut_slice(),
        )
    }

    fn elementwise(
        &self,
        grads: &mut [Option<Vec<f64>>],
        x: Var,
        g: &[f64],
        d: impl Fn(f64, f64) -> f64,
    ) {
        let xv = self.value(x).data();
        if let Some(dx) = self.acc(grads, x) {
            for ((dst, &gi), &xi) in dx.iter_mut().zip(g).zip(xv) {
                *dst += gi * d(xi, 0.0);
            }
        }
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let n = self.value(*input).shape()[0];
                let k = self.value(*weight).shape()[0];
                let x = self.value(*input).data();
                let w = self.value(*weight).data();
                let mut dx = self.requires_grad(*input).then(|| vec![0.0; x.len()]);
                let mut dw = self.requires_grad(*weight).then(|| vec![0.0; w.len()]);
                let mut db = bias
                    .filter(|b| self.requires_grad(*b))
                    .map(|_| vec![0.0; k]);
                kernels::conv2d_backward(
                    x,
                    n,
                    geom,
                    w,
                    k,
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                for (v, d) in [(Some(*input), dx), (Some(*weight), dw), (*bias, db)] {
                    if let (Some(v), Some(d)) = (v, d) {
                        if let Some(dst) = self.acc(grads, v) {
                            dst.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
                        }
                    }
                }
            }
            Op::Upsample2x(x) => {
                let (n, c, h, w) = self.value(*x).dims4("upsample2x").expect("recorded 4-d");
                if let Some(dx) = self.acc(grads, *x) {
                    kernels::upsample2x_backward(g, n * c, h, w, dx);
                }
            }
            Op::LeakyRelu(x, slope) => {
                let s = *slope;
                self.elementwise(grads, *x, g, |v, _| if v >= 0.0 { 1.0 } else { s });
            }
            Op::Tanh(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    for i in 0..dx.len() {
                        dx[i] += g[i] * (1.0 - out[i] * out[i]);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    for i in 0..dx.len() {
                        dx[i] += g[i] * out[i] * (1.0 - out[i]);
                    }
                }
            }
            Op::Exp(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    for i in 0..dx.len() {
                        dx[i] += g[i] * out[i];
                    }
                }
            }
            Op::Log(x) => self.elementwise(grads, *x, g, |v, _| 1.0 / v),
            Op::Abs(x) => self.elementwise(grads, *x, g, |v, _| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
            Op::Square(x) => self.elementwise(grads, *x, g, |v, _| 2.0 * v),
            Op::Pow(x, p) => {
                let p = *p;
                self.elementwise(grads, *x, g, |v, _| {
                    if p == 0.0 {
                        0.0
                    } else if v == 0.0 {
                        if p == 1.0 {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        p * v.powf(p - 1.0)
                    }
                })
            }
            Op::InstanceNorm {
                input,
                gamma,
                beta,
                cache,
            } => {
                let (n, c, h, w) = self
                    .value(*input)
                    .dims4("instance_norm")
                    .expect("recorded 4-d");
                let gv = self.value(*gamma).data();
                let mut dx = self.requires_grad(*input).then(|| vec![0.0; n * c * h * w]);
                let mut dg = self.requires_grad(*gamma).then(|| vec![0.0; c]);
                let mut dbt = self.requires_grad(*beta).then(|| vec![0.0; c]);
                kernels::instance_norm_backward(
                    g,
                    cache,
                    n,
                    c,
                    h * w,
                    gv,
                    dx.as_deref_mut(),
                    dg.as_deref_mut(),
                    dbt.as_deref_mut(),
                );
                for (v, d) in [(*input, dx), (*gamma, dg), (*beta, dbt)] {
                    if let Some(d) = d {
                        if let Some(dst) = self.acc(grads, v) {
                            dst.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let (ad, bd) = (ta.data(), tb.data());
                if let Some(da) = self.acc(grads, *a) {
                    // dA = G · Bᵀ
                    kernels::gemm(m, n, k, g, false, bd, true, da, true);
                }
                if let Some(db) = self.acc(grads, *b) {
                    // dB = Aᵀ · G
                    kernels::gemm(k, m, n, ad, true, g, false, db, true);
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                if let Some(dx) = self.acc(grads, *x) {
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                let c = node.value.shape()[1];
                if let Some(dx) = self.acc(grads, *x) {
                    for (row, (s, gr)) in out.chunks(c).zip(g.chunks(c)).enumerate() {
                        let dot: f64 = s.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            dx[row * c + j] += s[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.acc(grads, v) {
                        d.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(d) = self.acc(grads, *b) {
                    d.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = self.acc(grads, *a) {
                    for i in 0..d.len() {
                        d[i] += g[i] * bv[i];
                    }
                }
                if let Some(d) = self.acc(grads, *b) {
                    for i in 0..d.len() {
                        d[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(x, k) => {
                let k = *k;
                if let Some(d) = self.acc(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(a, b)| *a += k * b);
                }
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                if let Some(d) = self.acc(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::Sum(x) => {
                if let Some(d) = self.acc(grads, *x) {
                    d.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(d) = self.acc(grads, *x) {
                    let s = g[0] / d.len() as f64;
                    d.iter_mut().for_each(|a| *a += s);
                }
            }
            Op::MeanRows(x) => {
                let c = self.value(*x).shape()[1];
                if let Some(d) = self.acc(grads, *x) {
                    for (row, gr) in g.iter().enumerate() {
                        let s = gr / c as f64;
                        d[row * c..(row + 1) * c].iter_mut().for_each(|a| *a += s);
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, inner) = outer_inner(node.value.shape(), *axis);
                let total = node.value.shape()[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let chunk = self.value(v).shape()[*axis] * inner;
                    if let Some(d) = self.acc(grads, v) {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + chunk];
                            d[o * chunk..(o + 1) * chunk]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, b)| *a += b);
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Narrow { input, axis, start } => {
                let src_shape = self.value(*input).shape().to_vec();
                let (outer, inner) = outer_inner(&src_shape, *axis);
                let src_chunk = src_shape[*axis] * inner;
                let len = node.value.shape()[*axis] * inner;
                if let Some(d) = self.acc(grads, *input) {
                    for o in 0..outer {
                        let off = o * src_chunk + start * inner;
                        d[off..off + len]
                            .iter_mut()
                            .zip(&g[o * len..(o + 1) * len])
                            .for_each(|(a, b)| *a += b);
                    }
                }
            }
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
