//! Define-by-run reverse-mode differentiation.
//!
//! Every operation appends a node holding its value to a [`Graph`]. Calling
//! [`Graph::backward`] walks the nodes in reverse creation order, which is a
//! valid reverse topological order because inputs always precede outputs.

use crate::kernels::{self, ConvDims, ConvGeom};
use crate::tensor::{broadcast_to, numel, sum_to_shape, zip_broadcast};
use crate::{Error, Result, Scalar, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, T),
    Abs(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    SumAll(Var),
    SumTo(Var),
    BroadcastTo(Var),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Narrow(Var, usize, usize),
    Softmax(Var, usize),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Upsample(Var, usize),
    Linear { x: Var, w: Var, b: Option<Var> },
    BceLogits(Var, Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

/// A tape of tensor operations.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Split of a shape around `axis`: (product before, extent, product after).
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        let op = if tracked { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn scalar(&mut self, v: T) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(a).map(f);
        let tracked = self.tracked(a);
        self.push(value, op, tracked)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        let value = zip_broadcast(self.value(a), self.value(b), f)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, op, tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn mul_scalar(&mut self, a: Var, s: T) -> Var {
        self.unary(a, Op::MulScalar(a, s), |x| x * s)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.mul_scalar(a, -T::one())
    }

    /// `s - a`.
    pub fn rsub_scalar(&mut self, s: T, a: Var) -> Var {
        let n = self.neg(a);
        self.add_scalar(n, s)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), |x| x.abs())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > T::zero() { x } else { x * slope })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| x.exp())
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), |x| x.ln())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let tracked = self.tracked(a);
        self.push(value, Op::SumAll(a), tracked)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.mul_scalar(s, T::one() / T::lit(n as f64))
    }

    /// Sums broadcast axes away so the result has `shape`.
    pub fn sum_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = sum_to_shape(self.value(a), shape)?;
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::SumTo(a), tracked))
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = broadcast_to(self.value(a), shape)?;
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::BroadcastTo(a), tracked))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::Reshape(a), tracked))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let same_rank = s.len() == base.len();
            if !same_rank || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(Error::Shape(format!("concat: {s:?} incompatible with {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&base, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        let value = Tensor::from_vec(&shape, data)?;
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis), tracked))
    }

    /// Slice `[start, start + len)` of `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::Shape(format!("narrow {start}+{len} on axis {axis} of {shape:?}")));
        }
        let (outer, extent, inner) = axis_split(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::from_vec(&out_shape, data)?;
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::Narrow(a, axis, start), tracked))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!("softmax axis {axis} of {shape:?}")));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let data = kernels::softmax_forward(self.value(a).data(), outer, len, inner);
        let tracked = self.tracked(a);
        Ok(self.push(Tensor::from_vec(&shape, data)?, Op::Softmax(a, axis), tracked))
    }

    fn conv_dims(&self, x: Var, w: Var, geom: &ConvGeom) -> Result<ConvDims> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(Error::Shape(format!("conv2d: input {xs:?} with weight {ws:?}")));
        }
        let ho = geom.out_len(xs[2], ws[2]);
        let wo = geom.out_len(xs[3], ws[3]);
        match (ho, wo) {
            (Some(ho), Some(wo)) if ho > 0 && wo > 0 => Ok(ConvDims {
                n: xs[0],
                c: xs[1],
                h: xs[2],
                w: xs[3],
                o: ws[0],
                kh: ws[2],
                kw: ws[3],
                ho,
                wo,
            }),
            _ => Err(Error::Shape(format!("conv2d: kernel {ws:?} does not fit input {xs:?}"))),
        }
    }

    /// 2-d cross-correlation of `x: [N, C, H, W]` with `w: [O, C, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let d = self.conv_dims(x, w, &geom)?;
        if let Some(b) = b {
            if self.shape(b) != [d.o] {
                return Err(Error::Shape(format!("conv2d bias {:?} for {} outputs", self.shape(b), d.o)));
            }
        }
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &d,
            &geom,
        );
        let tracked = self.tracked(x) || self.tracked(w) || b.is_some_and(|b| self.tracked(b));
        let value = Tensor::from_vec(&[d.n, d.o, d.ho, d.wo], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, tracked))
    }

    /// Nearest-neighbour upsampling of the two trailing axes.
    pub fn upsample(&mut self, a: Var, factor: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() < 2 || factor == 0 {
            return Err(Error::Shape(format!("upsample {shape:?} by {factor}")));
        }
        let r = shape.len();
        let (h, w) = (shape[r - 2], shape[r - 1]);
        let planes = numel(&shape[..r - 2]);
        let data = kernels::upsample_forward(self.value(a).data(), planes, h, w, factor);
        let mut out = shape;
        out[r - 2] *= factor;
        out[r - 1] *= factor;
        let tracked = self.tracked(a);
        Ok(self.push(Tensor::from_vec(&out, data)?, Op::Upsample(a, factor), tracked))
    }

    /// `x: [N, in]`, `w: [out, in]` → `x wᵀ + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::Shape(format!("linear: input {xs:?} with weight {ws:?}")));
        }
        let (n, fin, fout) = (xs[0], xs[1], ws[0]);
        let mut out = vec![T::zero(); n * fout];
        let mut beta = T::zero();
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != [fout] {
                return Err(Error::Shape(format!("linear bias {:?} for {fout} outputs", bv.shape())));
            }
            for row in out.chunks_mut(fout) {
                row.copy_from_slice(bv.data());
            }
            beta = T::one();
        }
        T::gemm(n, fin, fout, T::one(), self.value(x).data(), fin, 1, self.value(w).data(), 1, fin, beta, &mut out, fout, 1);
        let tracked = self.tracked(x) || self.tracked(w) || b.is_some_and(|b| self.tracked(b));
        Ok(self.push(Tensor::from_vec(&[n, fout], out)?, Op::Linear { x, w, b }, tracked))
    }

    /// Elementwise binary cross-entropy between `sigmoid(logits)` and `target`.
    pub fn bce_with_logits(&mut self, logits: Var, target: Var) -> Result<Var> {
        if self.shape(logits) != self.shape(target) {
            return Err(Error::Shape(format!(
                "bce: logits {:?} vs target {:?}",
                self.shape(logits),
                self.shape(target)
            )));
        }
        self.binary(logits, target, Op::BceLogits(logits, target), |l, t| {
            l.max(T::zero()) - l * t + (T::one() + (-l.abs()).exp()).ln()
        })
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Shape(format!("backward needs a scalar, got {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(Grads { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.tracked(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e += *x;
                }
            }
            slot => *slot = Some(g),
        }
    }

    /// Accumulates `g` (shaped like the op output) into a possibly broadcast input.
    fn acc_reduced(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        if !self.tracked(v) {
            return Ok(());
        }
        let g = sum_to_shape(&g, self.shape(v))?;
        self.acc(grads, v, g);
        Ok(())
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc_reduced(grads, *a, g.clone())?;
                self.acc_reduced(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.acc_reduced(grads, *a, g.clone())?;
                self.acc_reduced(grads, *b, g.map(|v| -v))?;
            }
            Op::Mul(a, b) => {
                if self.tracked(*a) {
                    let ga = zip_broadcast(g, self.value(*b), |x, y| x * y)?;
                    self.acc_reduced(grads, *a, ga)?;
                }
                if self.tracked(*b) {
                    let gb = zip_broadcast(g, self.value(*a), |x, y| x * y)?;
                    self.acc_reduced(grads, *b, gb)?;
                }
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                if self.tracked(*a) {
                    let ga = zip_broadcast(g, bv, |x, y| x / y)?;
                    self.acc_reduced(grads, *a, ga)?;
                }
                if self.tracked(*b) {
                    // d(a/b)/db = -y / b
                    let gy = zip_broadcast(g, y, |x, q| x * q)?;
                    let gb = zip_broadcast(&gy, bv, |x, d| -x / d)?;
                    self.acc_reduced(grads, *b, gb)?;
                }
            }
            Op::AddScalar(a) => self.acc(grads, *a, g.clone()),
            Op::MulScalar(a, s) => {
                let s = *s;
                self.acc(grads, *a, g.map(|v| v * s));
            }
            Op::Abs(a) => {
                let x = self.value(*a);
                let d = zip_broadcast(g, x, |gv, xv| {
                    if xv > T::zero() {
                        gv
                    } else if xv < T::zero() {
                        -gv
                    } else {
                        T::zero()
                    }
                })?;
                self.acc(grads, *a, d);
            }
            Op::Relu(a) => {
                let d = zip_broadcast(g, self.value(*a), |gv, xv| if xv > T::zero() { gv } else { T::zero() })?;
                self.acc(grads, *a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                let d = zip_broadcast(g, self.value(*a), |gv, xv| if xv > T::zero() { gv } else { gv * s })?;
                self.acc(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = zip_broadcast(g, y, |gv, yv| gv * yv * (T::one() - yv))?;
                self.acc(grads, *a, d);
            }
            Op::Exp(a) => {
                let d = zip_broadcast(g, y, |gv, yv| gv * yv)?;
                self.acc(grads, *a, d);
            }
            Op::Log(a) => {
                let d = zip_broadcast(g, self.value(*a), |gv, xv| gv / xv)?;
                self.acc(grads, *a, d);
            }
            Op::Square(a) => {
                let two = T::lit(2.0);
                let d = zip_broadcast(g, self.value(*a), |gv, xv| two * gv * xv)?;
                self.acc(grads, *a, d);
            }
            Op::SumAll(a) => {
                let gv = g.item();
                self.acc(grads, *a, Tensor::full(self.shape(*a), gv));
            }
            Op::SumTo(a) => {
                let d = broadcast_to(g, self.shape(*a))?;
                self.acc(grads, *a, d);
            }
            Op::BroadcastTo(a) => self.acc_reduced(grads, *a, g.clone())?,
            Op::Reshape(a) => {
                let d = g.clone().reshape(self.shape(*a))?;
                self.acc(grads, *a, d);
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = axis_split(y.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    if self.tracked(p) {
                        let mut data = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            data.extend_from_slice(&g.data()[base..base + len * inner]);
                        }
                        self.acc(grads, p, Tensor::from_vec(self.shape(p), data)?);
                    }
                    offset += len;
                }
            }
            Op::Narrow(a, axis, start) => {
                let (outer, extent, inner) = axis_split(self.shape(*a), *axis);
                let len = y.shape()[*axis];
                let mut d = Tensor::zeros(self.shape(*a));
                for o in 0..outer {
                    let dst = (o * extent + start) * inner;
                    let src = o * len * inner;
                    d.data_mut()[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                self.acc(grads, *a, d);
            }
            Op::Softmax(a, axis) => {
                let (outer, len, inner) = axis_split(y.shape(), *axis);
                let d = kernels::softmax_backward(y.data(), g.data(), outer, len, inner);
                self.acc(grads, *a, Tensor::from_vec(y.shape(), d)?);
            }
            Op::Conv2d { x, w, b, geom } => {
                let d = self.conv_dims(*x, *w, geom)?;
                let (gx, gw, gb) = kernels::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g.data(),
                    &d,
                    geom,
                    self.tracked(*x),
                    self.tracked(*w),
                );
                if let Some(gx) = gx {
                    self.acc(grads, *x, Tensor::from_vec(self.shape(*x), gx)?);
                }
                if self.tracked(*w) {
                    self.acc(grads, *w, Tensor::from_vec(self.shape(*w), gw)?);
                }
                if let Some(b) = b {
                    self.acc(grads, *b, Tensor::from_vec(&[d.o], gb)?);
                }
            }
            Op::Upsample(a, f) => {
                let s = self.shape(*a);
                let r = s.len();
                let planes = numel(&s[..r - 2]);
                let d = kernels::upsample_backward(g.data(), planes, s[r - 2], s[r - 1], *f);
                self.acc(grads, *a, Tensor::from_vec(s, d)?);
            }
            Op::Linear { x, w, b } => {
                let (n, fin) = (self.shape(*x)[0], self.shape(*x)[1]);
                let fout = self.shape(*w)[0];
                if self.tracked(*x) {
                    let mut gx = vec![T::zero(); n * fin];
                    T::gemm(n, fout, fin, T::one(), g.data(), fout, 1, self.value(*w).data(), fin, 1, T::zero(), &mut gx, fin, 1);
                    self.acc(grads, *x, Tensor::from_vec(&[n, fin], gx)?);
                }
                if self.tracked(*w) {
                    let mut gw = vec![T::zero(); fout * fin];
                    T::gemm(fout, n, fin, T::one(), g.data(), 1, fout, self.value(*x).data(), fin, 1, T::zero(), &mut gw, fin, 1);
                    self.acc(grads, *w, Tensor::from_vec(&[fout, fin], gw)?);
                }
                if let Some(b) = b {
                    let gb = sum_to_shape(g, &[1, fout])?.reshape(&[fout])?;
                    self.acc(grads, *b, gb);
                }
            }
            Op::BceLogits(l, t) => {
                let lv = self.value(*l);
                let tv = self.value(*t);
                if self.tracked(*l) {
                    let s = lv.map(sigmoid);
                    let ds = zip_broadcast(&s, tv, |sv, tv| sv - tv)?;
                    self.acc(grads, *l, zip_broadcast(g, &ds, |a, b| a * b)?);
                }
                if self.tracked(*t) {
                    self.acc(grads, *t, zip_broadcast(g, lv, |a, b| -a * b)?);
                }
            }
        }
        Ok(())
    }
}

/// Gradients produced by one backward sweep.
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient of a leaf created with [`Graph::param`], `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Like [`Grads::get`] but materializes zeros of `shape` when absent.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}
