//! Computation record and reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value, so nodes are in
//! topological order by construction and backward is one reverse sweep.

use crate::conv::ConvGeometry;
use crate::element::Element;
use crate::error::{contract, Result, TensorError};
use crate::gemm::{gemm, MatRef};
use crate::tensor::Tensor;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    AddChannelBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Reshape(Var),
    Transpose(Var),
    NarrowCols { x: Var, start: usize },
    Sum(Var),
    SumAxis { x: Var, axis: usize },
    LogSumExpAxis { x: Var, axis: usize },
    LogSoftmax(Var),
    BceWithLogits { logits: Var, targets: Var },
    GaussianPairwise { z: Var, mean: Var, logvar: Var },
    Conv2d { x: Var, w: Var, geom: ConvGeometry },
    ConvTranspose2d { x: Var, w: Var, geom: ConvGeometry },
}

impl<T> Op<T> {
    fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::AddChannelBias(..) => "add_channel_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Reshape(..) => "reshape",
            Op::Transpose(..) => "transpose",
            Op::NarrowCols { .. } => "narrow_cols",
            Op::Sum(..) => "sum",
            Op::SumAxis { .. } => "sum_axis",
            Op::LogSumExpAxis { .. } => "logsumexp_axis",
            Op::LogSoftmax(..) => "log_softmax",
            Op::BceWithLogits { .. } => "bce_with_logits",
            Op::GaussianPairwise { .. } => "gaussian_pairwise",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::AddBias(a, b)
            | Op::AddChannelBias(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::Reshape(a)
            | Op::Transpose(a)
            | Op::Sum(a)
            | Op::LogSoftmax(a) => vec![a],
            Op::NarrowCols { x, .. } | Op::SumAxis { x, .. } | Op::LogSumExpAxis { x, .. } => vec![x],
            Op::BceWithLogits { logits, targets } => vec![logits, targets],
            Op::GaussianPairwise { z, mean, logvar } => vec![z, mean, logvar],
            Op::Conv2d { x, w, .. } | Op::ConvTranspose2d { x, w, .. } => vec![x, w],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// One entry of the computation record: operation tag, inputs, output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub tag: &'static str,
    pub inputs: Vec<Var>,
    pub output: Var,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients<T = f32> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads[var.0].as_deref()
    }

    /// Gradient as a tensor; zeros when `var` is unreachable from the loss.
    pub fn tensor(&self, var: Var) -> Tensor<T> {
        let shape = self.shapes[var.0].clone();
        match &self.grads[var.0] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(shape),
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor<T> {
        let shape = self.shapes[var.0].clone();
        match self.grads[var.0].take() {
            Some(g) => Tensor::from_parts(shape, g),
            None => Tensor::zeros(shape),
        }
    }
}

/// A single-threaded computation record.
pub struct Graph<T = f32> {
    nodes: Vec<Node<T>>,
}

impl<T> Default for Graph<T> {
    fn default() -> Self {
        Self { nodes: Vec::new() }
    }
}

fn finite<T: Element>(op: &'static str, data: &[T]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

fn same_shape<T: Element>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Splits a shape around `axis` into (outer, axis extent, inner).
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    /// An empty `f32` record; other precisions use `Graph::default()`.
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Element> Graph<T> {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn records(&self) -> Vec<Record> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| Record {
                tag: n.op.tag(),
                inputs: n.op.inputs(),
                output: Var(i),
            })
            .collect()
    }

    fn push(&mut self, op: &'static str, shape: Vec<usize>, data: Vec<T>, node_op: Op<T>) -> Result<Var> {
        finite(op, &data)?;
        let requires_grad = node_op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Tensor::from_parts(shape, data),
            op: node_op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        finite("leaf", value.data())?;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Differentiable leaf (a trainable parameter).
    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Non-differentiable leaf (data, noise, masks).
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    fn unary(&mut self, op: &'static str, x: Var, f: impl Fn(T) -> T, node_op: Op<T>) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        let shape = v.shape().to_vec();
        let data = v.data().iter().map(|&a| f(a)).collect();
        self.push(op, shape, data, node_op)
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, node_op: Op<T>) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        same_shape(op, va, vb)?;
        let shape = va.shape().to_vec();
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        self.push(op, shape, data, node_op)
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (n, k, m) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut out = vec![T::zero(); n * m];
        gemm(MatRef::new(va.data(), n, k), MatRef::new(vb.data(), k, m), &mut out, T::one(), T::zero());
        self.push("matmul", vec![n, m], out, Op::MatMul(a, b))
    }

    /// Adds a `[m]` bias to every row of `[n, m]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        if vx.rank() != 2 || vb.rank() != 1 || vx.shape()[1] != vb.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: vx.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let m = vb.numel();
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(m) {
            for (r, b) in row.iter_mut().zip(vb.data()) {
                *r += *b;
            }
        }
        let shape = vx.shape().to_vec();
        self.push("add_bias", shape, data, Op::AddBias(x, bias))
    }

    /// Adds a `[C]` bias to each channel of `[N, C, H, W]`.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        if vx.rank() != 4 || vb.rank() != 1 || vx.shape()[1] != vb.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "add_channel_bias",
                lhs: vx.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let plane = vx.shape()[2] * vx.shape()[3];
        let c = vb.numel();
        let mut data = vx.data().to_vec();
        for (i, chunk) in data.chunks_mut(plane).enumerate() {
            let b = vb.data()[i % c];
            for v in chunk {
                *v += b;
            }
        }
        let shape = vx.shape().to_vec();
        self.push("add_channel_bias", shape, data, Op::AddChannelBias(x, bias))
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

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        self.unary("scale", x, |a| a * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        self.unary("add_scalar", x, |a| a + c, Op::AddScalar(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, T::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary("log", x, T::ln, Op::Log(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |a| a.max(T::zero()), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var> {
        self.unary(
            "leaky_relu",
            x,
            |a| if a > T::zero() { a } else { slope * a },
            Op::LeakyRelu(x, slope),
        )
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.mul(x, x)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        if shape.iter().product::<usize>() != v.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: v.shape().to_vec(),
                rhs: shape,
            });
        }
        let data = v.data().to_vec();
        self.push("reshape", shape, data, Op::Reshape(x))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        if v.rank() != 2 {
            return Err(contract("transpose", format!("needs rank 2, got {:?}", v.shape())));
        }
        let (n, m) = (v.shape()[0], v.shape()[1]);
        let mut data = vec![T::zero(); n * m];
        for i in 0..n {
            for j in 0..m {
                data[j * n + i] = v.data()[i * m + j];
            }
        }
        self.push("transpose", vec![m, n], data, Op::Transpose(x))
    }

    /// Columns `start..start + len` of a `[n, m]` matrix.
    pub fn narrow_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        if v.rank() != 2 || start + len > v.shape()[1] {
            return Err(contract(
                "narrow_cols",
                format!("columns {start}..{} out of {:?}", start + len, v.shape()),
            ));
        }
        let (n, m) = (v.shape()[0], v.shape()[1]);
        let mut data = Vec::with_capacity(n * len);
        for i in 0..n {
            data.extend_from_slice(&v.data()[i * m + start..i * m + start + len]);
        }
        self.push("narrow_cols", vec![n, len], data, Op::NarrowCols { x, start })
    }

    /// Sum of all entries, accumulated in `f64`; returns a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.nodes[x.0].value.data().iter().map(|v| v.as_f64()).sum();
        self.push("sum", vec![], vec![T::lit(s)], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.nodes[x.0].value.numel().max(1);
        let s = self.sum(x)?;
        self.scale(s, T::lit(1.0 / n as f64))
    }

    /// Sums out `axis`, accumulating in `f64`.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        if axis >= v.rank() {
            return Err(contract("sum_axis", format!("axis {axis} of {:?}", v.shape())));
        }
        let (outer, len, inner) = axis_split(v.shape(), axis);
        let mut acc = vec![0f64; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                for i in 0..inner {
                    acc[o * inner + i] += v.data()[base + i].as_f64();
                }
            }
        }
        let mut shape = v.shape().to_vec();
        shape.remove(axis);
        let data = acc.into_iter().map(T::lit).collect();
        self.push("sum_axis", shape, data, Op::SumAxis { x, axis })
    }

    /// Numerically stable log-sum-exp over `axis`.
    pub fn logsumexp_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        if axis >= v.rank() || v.shape()[axis] == 0 {
            return Err(contract("logsumexp_axis", format!("axis {axis} of {:?}", v.shape())));
        }
        let (outer, len, inner) = axis_split(v.shape(), axis);
        let d = v.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| d[(o * len + a) * inner + i];
                let m = (0..len).map(at).fold(T::neg_infinity(), T::max);
                let s: f64 = (0..len).map(|a| (at(a) - m).as_f64().exp()).sum();
                out[o * inner + i] = m + T::lit(s.ln());
            }
        }
        let mut shape = v.shape().to_vec();
        shape.remove(axis);
        self.push("logsumexp_axis", shape, out, Op::LogSumExpAxis { x, axis })
    }

    /// Row-wise log-softmax of `[n, m]`.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        if v.rank() != 2 {
            return Err(contract("log_softmax", format!("needs rank 2, got {:?}", v.shape())));
        }
        let m = v.shape()[1];
        let mut data = v.data().to_vec();
        for row in data.chunks_mut(m) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let s: f64 = row.iter().map(|&a| (a - mx).as_f64().exp()).sum();
            let lse = mx + T::lit(s.ln());
            for r in row {
                *r -= lse;
            }
        }
        let shape = v.shape().to_vec();
        self.push("log_softmax", shape, data, Op::LogSoftmax(x))
    }

    /// Elementwise binary cross-entropy between `sigmoid(logits)` and targets
    /// in `[0, 1]`, computed stably. Targets receive no gradient.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Var) -> Result<Var> {
        self.binary(
            "bce_with_logits",
            logits,
            targets,
            |l, t| l.max(T::zero()) - l * t + (-l.abs()).exp().ln_1p(),
            Op::BceWithLogits { logits, targets },
        )
    }

    /// `out[i, j, d] = log N(z[i, d]; mean[j, d], exp(logvar[j, d]))` for
    /// `[B, D]` inputs, giving `[B, B, D]`.
    pub fn gaussian_pairwise(&mut self, z: Var, mean: Var, logvar: Var) -> Result<Var> {
        let (vz, vm, vl) = (
            &self.nodes[z.0].value,
            &self.nodes[mean.0].value,
            &self.nodes[logvar.0].value,
        );
        same_shape("gaussian_pairwise", vz, vm)?;
        same_shape("gaussian_pairwise", vm, vl)?;
        if vz.rank() != 2 {
            return Err(contract("gaussian_pairwise", format!("needs rank 2, got {:?}", vz.shape())));
        }
        let (b, d) = (vz.shape()[0], vz.shape()[1]);
        let mut out = vec![T::zero(); b * b * d];
        let half = T::lit(0.5);
        let ln2pi = T::lit(LN_2PI);
        for i in 0..b {
            for j in 0..b {
                for k in 0..d {
                    let diff = vz.data()[i * d + k] - vm.data()[j * d + k];
                    let lv = vl.data()[j * d + k];
                    out[(i * b + j) * d + k] = -half * (ln2pi + lv + diff * diff * (-lv).exp());
                }
            }
        }
        self.push(
            "gaussian_pairwise",
            vec![b, b, d],
            out,
            Op::GaussianPairwise { z, mean, logvar },
        )
    }

    fn conv_checks(&self, op: &'static str, x: Var, w: Var, geom: &ConvGeometry, transposed: bool) -> Result<usize> {
        let (vx, vw) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
        let expect_in = if transposed {
            [geom.map_channels, geom.map_hw.0, geom.map_hw.1]
        } else {
            [geom.image_channels, geom.image_hw.0, geom.image_hw.1]
        };
        if vx.rank() != 4 || vx.shape()[1..] != expect_in {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: vx.shape().to_vec(),
                rhs: expect_in.to_vec(),
            });
        }
        if vw.shape() != geom.weight_shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: vw.shape().to_vec(),
                rhs: geom.weight_shape().to_vec(),
            });
        }
        Ok(vx.shape()[0])
    }

    /// `[N, C, H, W]` images with `[O, C, kh, kw]` weights -> `[N, O, Ho, Wo]`.
    pub fn conv2d(&mut self, x: Var, w: Var, geom: ConvGeometry) -> Result<Var> {
        let batch = self.conv_checks("conv2d", x, w, &geom, false)?;
        let out = geom.conv(self.nodes[x.0].value.data(), self.nodes[w.0].value.data(), batch);
        self.push(
            "conv2d",
            vec![batch, geom.map_channels, geom.map_hw.0, geom.map_hw.1],
            out,
            Op::Conv2d { x, w, geom },
        )
    }

    /// Adjoint of [`conv2d`](Self::conv2d) with the same geometry and weights:
    /// `[N, O, Ho, Wo]` -> `[N, C, H, W]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, geom: ConvGeometry) -> Result<Var> {
        let batch = self.conv_checks("conv_transpose2d", x, w, &geom, true)?;
        let out = geom.conv_transpose(self.nodes[x.0].value.data(), self.nodes[w.0].value.data(), batch);
        self.push(
            "conv_transpose2d",
            vec![batch, geom.image_channels, geom.image_hw.0, geom.image_hw.1],
            out,
            Op::ConvTranspose2d { x, w, geom },
        )
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &gout, &mut grads);
            }
            grads[idx] = Some(gout);
        }
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> &'g mut [T] {
        let n = self.nodes[v.0].value.numel();
        grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl Fn(usize) -> T) {
        if !self.wants(v) {
            return;
        }
        for (i, g) in self.slot(grads, v).iter_mut().enumerate() {
            *g += f(i);
        }
    }

    fn propagate(&self, node: &Node<T>, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let y = node.value.data();
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (val(a), val(b));
                let (n, k, m) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                let go = MatRef::new(gout, n, m);
                if self.wants(a) {
                    let da = self.slot(grads, a);
                    gemm(go, MatRef::new(vb.data(), k, m).t(), da, T::one(), T::one());
                }
                if self.wants(b) {
                    let db = self.slot(grads, b);
                    gemm(MatRef::new(va.data(), n, k).t(), go, db, T::one(), T::one());
                }
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, x, |i| gout[i]);
                if self.wants(b) {
                    let m = val(b).numel();
                    let db = self.slot(grads, b);
                    for row in gout.chunks(m) {
                        for (d, g) in db.iter_mut().zip(row) {
                            *d += *g;
                        }
                    }
                }
            }
            Op::AddChannelBias(x, b) => {
                self.accumulate(grads, x, |i| gout[i]);
                if self.wants(b) {
                    let s = val(x).shape();
                    let plane = s[2] * s[3];
                    let c = s[1];
                    let db = self.slot(grads, b);
                    for (i, chunk) in gout.chunks(plane).enumerate() {
                        db[i % c] += T::lit(chunk.iter().map(|g| g.as_f64()).sum::<f64>());
                    }
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, a, |i| gout[i]);
                self.accumulate(grads, b, |i| gout[i]);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, |i| gout[i]);
                self.accumulate(grads, b, |i| -gout[i]);
            }
            Op::Mul(a, b) => {
                let (da, db) = (val(a).data(), val(b).data());
                self.accumulate(grads, a, |i| gout[i] * db[i]);
                self.accumulate(grads, b, |i| gout[i] * da[i]);
            }
            Op::Scale(x, c) => self.accumulate(grads, x, |i| gout[i] * c),
            Op::AddScalar(x) | Op::Reshape(x) => self.accumulate(grads, x, |i| gout[i]),
            Op::Exp(x) => self.accumulate(grads, x, |i| gout[i] * y[i]),
            Op::Log(x) => {
                let dx = val(x).data();
                self.accumulate(grads, x, |i| gout[i] / dx[i]);
            }
            Op::Sigmoid(x) => self.accumulate(grads, x, |i| gout[i] * y[i] * (T::one() - y[i])),
            Op::Relu(x) => {
                let dx = val(x).data();
                self.accumulate(grads, x, |i| if dx[i] > T::zero() { gout[i] } else { T::zero() });
            }
            Op::LeakyRelu(x, slope) => {
                let dx = val(x).data();
                self.accumulate(grads, x, |i| if dx[i] > T::zero() { gout[i] } else { slope * gout[i] });
            }
            Op::Transpose(x) => {
                let s = val(x).shape();
                let (n, m) = (s[0], s[1]);
                // out[j, i] = x[i, j]
                self.accumulate(grads, x, |idx| {
                    let (i, j) = (idx / m, idx % m);
                    gout[j * n + i]
                });
            }
            Op::NarrowCols { x, start } => {
                if self.wants(x) {
                    let m = val(x).shape()[1];
                    let len = node.value.shape()[1];
                    let dx = self.slot(grads, x);
                    for (r, row) in gout.chunks(len).enumerate() {
                        for (c, g) in row.iter().enumerate() {
                            dx[r * m + start + c] += *g;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                let g = gout[0];
                self.accumulate(grads, x, |_| g);
            }
            Op::SumAxis { x, axis } => {
                let (_, len, inner) = axis_split(val(x).shape(), axis);
                self.accumulate(grads, x, |idx| {
                    let o = idx / (len * inner);
                    let i = idx % inner;
                    gout[o * inner + i]
                });
            }
            Op::LogSumExpAxis { x, axis } => {
                let dx = val(x).data();
                let (_, len, inner) = axis_split(val(x).shape(), axis);
                self.accumulate(grads, x, |idx| {
                    let o = idx / (len * inner);
                    let i = idx % inner;
                    gout[o * inner + i] * (dx[idx] - y[o * inner + i]).exp()
                });
            }
            Op::LogSoftmax(x) => {
                if self.wants(x) {
                    let m = node.value.shape()[1];
                    let dx = self.slot(grads, x);
                    for ((drow, grow), yrow) in dx.chunks_mut(m).zip(gout.chunks(m)).zip(y.chunks(m)) {
                        let gsum: T = grow.iter().copied().sum();
                        for ((d, g), yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += *g - yv.exp() * gsum;
                        }
                    }
                }
            }
            Op::BceWithLogits { logits, targets } => {
                let (dl, dt) = (val(logits).data(), val(targets).data());
                self.accumulate(grads, logits, |i| gout[i] * (sigmoid(dl[i]) - dt[i]));
            }
            Op::GaussianPairwise { z, mean, logvar } => {
                let s = val(z).shape();
                let (b, d) = (s[0], s[1]);
                let (zd, md, ld) = (val(z).data(), val(mean).data(), val(logvar).data());
                let mut dz = vec![T::zero(); b * d];
                let mut dm = vec![T::zero(); b * d];
                let mut dl = vec![T::zero(); b * d];
                let half = T::lit(0.5);
                for i in 0..b {
                    for j in 0..b {
                        for k in 0..d {
                            let g = gout[(i * b + j) * d + k];
                            let diff = zd[i * d + k] - md[j * d + k];
                            let inv = (-ld[j * d + k]).exp();
                            dz[i * d + k] -= g * diff * inv;
                            dm[j * d + k] += g * diff * inv;
                            dl[j * d + k] -= half * g * (T::one() - diff * diff * inv);
                        }
                    }
                }
                self.accumulate(grads, z, |i| dz[i]);
                self.accumulate(grads, mean, |i| dm[i]);
                self.accumulate(grads, logvar, |i| dl[i]);
            }
            Op::Conv2d { x, w, geom } => {
                let batch = val(x).shape()[0];
                let (xd, wd) = (val(x).data(), val(w).data());
                let mut dx = self.wants(x).then(|| vec![T::zero(); xd.len()]);
                let mut dw = self.wants(w).then(|| vec![T::zero(); wd.len()]);
                geom.conv_backward(xd, wd, gout, batch, dx.as_deref_mut(), dw.as_deref_mut());
                if let Some(dx) = dx {
                    self.accumulate(grads, x, |i| dx[i]);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, w, |i| dw[i]);
                }
            }
            Op::ConvTranspose2d { x, w, geom } => {
                let batch = val(x).shape()[0];
                let (xd, wd) = (val(x).data(), val(w).data());
                let mut dx = self.wants(x).then(|| vec![T::zero(); xd.len()]);
                let mut dw = self.wants(w).then(|| vec![T::zero(); wd.len()]);
                geom.conv_transpose_backward(xd, wd, gout, batch, dx.as_deref_mut(), dw.as_deref_mut());
                if let Some(dx) = dx {
                    self.accumulate(grads, x, |i| dx[i]);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, w, |i| dw[i]);
                }
            }
        }
    }
}
