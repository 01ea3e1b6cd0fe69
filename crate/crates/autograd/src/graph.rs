use crate::conv;
use crate::error::TensorError;
use crate::tensor::{broadcast_shapes, checked_numel, for_each_bcast2, Tensor};

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    PowScalar(Var, f64),
    Matmul(Var, Var),
    Transpose(Var),
    Conv2d {
        x: Var,
        k: Var,
        stride: usize,
        pad: usize,
    },
    StridedSample {
        x: Var,
        off_h: isize,
        off_w: isize,
        stride: usize,
    },
    Relu(Var),
    Exp(Var),
    Log(Var),
    ClampMin(Var, f64),
    SoftmaxLast(Var),
    L2NormalizeLast(Var),
    /// log sum over the last axis of mask * exp(x); masked-out rows yield 0.
    LogSumExpMaskedLast(Var, Tensor),
    SumAll(Var),
    MeanAll(Var),
    SumAxis(Var, usize),
    Concat(Vec<Var>, usize),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
        len: usize,
    },
    Reshape(Var),
    BroadcastTo(Var),
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Tape of recorded operations. Nodes are appended in topological order; the
/// backward pass walks the tape once in reverse, so every node is visited
/// exactly once. `backward` may run at most once per graph.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that participates in differentiation.
    pub fn var(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated into `v` by `backward`, if any.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape(), g.clone()).expect("grad shape"))
    }

    pub fn grad_slice(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        op_name: &'static str,
        value: Tensor,
        requires_grad: bool,
        op: Op,
    ) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        Ok(self.push(value, requires_grad, op))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ── elementwise binaries (trailing-dim broadcasting) ────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let out_shape = broadcast_shapes(name, av.shape(), bv.shape())?;
        let mut out = vec![0.0; out_shape.iter().product()];
        {
            let (ad, bd) = (av.data(), bv.data());
            for_each_bcast2(&out_shape, av.shape(), bv.shape(), |o, ai, bi| {
                out[o] = f(ad[ai], bd[bi]);
            });
        }
        let rg = self.any_grad(&[a, b]);
        self.push_checked(name, Tensor::new(&out_shape, out)?, rg, op)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var, TensorError> {
        let value = self.map_values(a, |x| x + s);
        let rg = self.nodes[a.0].requires_grad;
        self.push_checked("add_scalar", value, rg, Op::AddScalar(a))
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Result<Var, TensorError> {
        let value = self.map_values(a, |x| x * s);
        let rg = self.nodes[a.0].requires_grad;
        self.push_checked("mul_scalar", value, rg, Op::MulScalar(a, s))
    }

    /// Elementwise `x^p` for a fixed exponent; inputs are assumed non-negative
    /// when `p` is non-integral.
    pub fn pow_scalar(&mut self, a: Var, p: f64) -> Result<Var, TensorError> {
        let value = self.map_values(a, |x| x.powf(p));
        let rg = self.nodes[a.0].requires_grad;
        self.push_checked("pow_scalar", value, rg, Op::PowScalar(a, p))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.map_values(a, |x| if x > 0.0 { x } else { 0.0 });
        let rg = self.nodes[a.0].requires_grad;
        self.push_checked("relu", value, rg, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.map_values(a, f64::exp);
        let rg = self.nodes[a.0].requires_grad;
        self.push_checked("exp", value, rg, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        let av = &self.nodes[a.0].value;
        if let Some((i, &v)) = av.data().iter().enumerate().find(|(_, v)| **v <= 0.0) {
            return Err(TensorError::NonPositiveLog { index: i, value: v });
        }
        let value = self.map_values(a, f64::ln);
        let rg = self.nodes[a.0].requires_grad;
        self.push_checked("log", value, rg, Op::Log(a))
    }

    /// Elementwise `max(x, floor)`. Gradient passes through where `x >= floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var, TensorError> {
        let value = self.map_values(a, |x| if x < floor { floor } else { x });
        let rg = self.nodes[a.0].requires_grad;
        self.push_checked("clamp_min", value, rg, Op::ClampMin(a, floor))
    }

    fn map_values(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let av = &self.nodes[a.0].value;
        Tensor::new(av.shape(), av.data().iter().map(|&x| f(x)).collect()).expect("same shape")
    }

    // ── linear algebra ───────────────────────────────────────────────────

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let out = matmul_kernel(av.data(), bv.data(), m, k, n);
        let rg = self.any_grad(&[a, b]);
        self.push_checked("matmul", Tensor::new(&[m, n], out)?, rg, Op::Matmul(a, b))
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let av = &self.nodes[a.0].value;
        if av.shape().len() != 2 {
            return Err(TensorError::InvalidShape {
                op: "transpose",
                shape: av.shape().to_vec(),
                detail: "expected rank 2".into(),
            });
        }
        let (m, n) = (av.shape()[0], av.shape()[1]);
        let out = transpose_kernel(av.data(), m, n);
        let rg = self.nodes[a.0].requires_grad;
        self.push_checked("transpose", Tensor::new(&[n, m], out)?, rg, Op::Transpose(a))
    }

    /// NHWC convolution: `x [n,h,w,ci]` with `k [kh,kw,ci,co]`, zero padding.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var, TensorError> {
        let (xv, kv) = (&self.nodes[x.0].value, &self.nodes[k.0].value);
        let (xs, ks) = (xv.shape(), kv.shape());
        if xs.len() != 4 || ks.len() != 4 || xs[3] != ks[2] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: xs.to_vec(),
                rhs: ks.to_vec(),
            });
        }
        if stride == 0 || xs[1] + 2 * pad < ks[0] || xs[2] + 2 * pad < ks[1] {
            return Err(TensorError::InvalidShape {
                op: "conv2d",
                shape: xs.to_vec(),
                detail: format!("kernel {ks:?} with stride {stride} pad {pad} does not fit"),
            });
        }
        let (out, os) = conv::conv2d_forward(
            xv.data(),
            [xs[0], xs[1], xs[2], xs[3]],
            kv.data(),
            [ks[0], ks[1], ks[2], ks[3]],
            stride,
            pad,
        );
        let rg = self.any_grad(&[x, k]);
        self.push_checked(
            "conv2d",
            Tensor::new(&os, out)?,
            rg,
            Op::Conv2d { x, k, stride, pad },
        )
    }

    /// Spatial subsampling `out[b,r,c,ch] = x[b, r*stride+off_h, c*stride+off_w, ch]`
    /// with zero fill outside bounds. Output spatial dims are given explicitly.
    pub fn strided_sample(
        &mut self,
        x: Var,
        off_h: isize,
        off_w: isize,
        stride: usize,
        oh: usize,
        ow: usize,
    ) -> Result<Var, TensorError> {
        let xv = &self.nodes[x.0].value;
        let xs = xv.shape();
        if xs.len() != 4 || stride == 0 || oh == 0 || ow == 0 {
            return Err(TensorError::InvalidShape {
                op: "strided_sample",
                shape: xs.to_vec(),
                detail: "expected rank 4 input and non-zero stride/dims".into(),
            });
        }
        let out = conv::strided_sample_forward(
            xv.data(),
            [xs[0], xs[1], xs[2], xs[3]],
            off_h,
            off_w,
            stride,
            oh,
            ow,
        );
        let shape = [xs[0], oh, ow, xs[3]];
        let rg = self.nodes[x.0].requires_grad;
        self.push_checked(
            "strided_sample",
            Tensor::new(&shape, out)?,
            rg,
            Op::StridedSample {
                x,
                off_h,
                off_w,
                stride,
            },
        )
    }

    // ── normalizations over the last axis ────────────────────────────────

    /// Numerically stable softmax over the last axis (max subtraction).
    pub fn softmax_last(&mut self, a: Var) -> Result<Var, TensorError> {
        let av = &self.nodes[a.0].value;
        let cols = *av.shape().last().expect("non-empty shape");
        let mut out = av.data().to_vec();
        for row in out.chunks_mut(cols) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let value = Tensor::new(av.shape(), out)?;
        let rg = self.nodes[a.0].requires_grad;
        self.push_checked("softmax", value, rg, Op::SoftmaxLast(a))
    }

    /// Rows scaled to unit L2 norm over the last axis.
    pub fn l2_normalize_last(&mut self, a: Var) -> Result<Var, TensorError> {
        let av = &self.nodes[a.0].value;
        let cols = *av.shape().last().expect("non-empty shape");
        let mut out = av.data().to_vec();
        for (r, row) in out.chunks_mut(cols).enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(TensorError::ZeroNorm { row: r });
            }
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        let value = Tensor::new(av.shape(), out)?;
        let rg = self.nodes[a.0].requires_grad;
        self.push_checked("l2_normalize", value, rg, Op::L2NormalizeLast(a))
    }

    /// `out[r] = log(sum_k mask[r,k] * exp(x[r,k]))` over the last axis, with
    /// max subtraction over the masked entries. Rows whose mask is entirely
    /// zero produce 0 and receive no gradient.
    pub fn logsumexp_masked_last(&mut self, a: Var, mask: &Tensor) -> Result<Var, TensorError> {
        let av = &self.nodes[a.0].value;
        if mask.shape() != av.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "logsumexp_masked",
                lhs: av.shape().to_vec(),
                rhs: mask.shape().to_vec(),
            });
        }
        let cols = *av.shape().last().expect("non-empty shape");
        let rows = av.numel() / cols;
        let mut out = vec![0.0; rows];
        for (r, out_v) in out.iter_mut().enumerate() {
            let x = &av.data()[r * cols..(r + 1) * cols];
            let m = &mask.data()[r * cols..(r + 1) * cols];
            let mut hi = f64::NEG_INFINITY;
            for (xi, mi) in x.iter().zip(m) {
                if *mi != 0.0 && *xi > hi {
                    hi = *xi;
                }
            }
            if hi == f64::NEG_INFINITY {
                continue; // empty mask row stays 0
            }
            let s: f64 = x
                .iter()
                .zip(m)
                .filter(|(_, mi)| **mi != 0.0)
                .map(|(xi, _)| (xi - hi).exp())
                .sum();
            *out_v = hi + s.ln();
        }
        let out_shape: Vec<usize> = av.shape()[..av.shape().len() - 1].to_vec();
        let out_shape = if out_shape.is_empty() {
            vec![1]
        } else {
            out_shape
        };
        let rg = self.nodes[a.0].requires_grad;
        self.push_checked(
            "logsumexp_masked",
            Tensor::new(&out_shape, out)?,
            rg,
            Op::LogSumExpMaskedLast(a, mask.clone()),
        )
    }

    // ── reductions and shape ops ─────────────────────────────────────────

    pub fn sum_all(&mut self, a: Var) -> Result<Var, TensorError> {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        let rg = self.nodes[a.0].requires_grad;
        self.push_checked("sum", Tensor::scalar(s), rg, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var, TensorError> {
        let v = &self.nodes[a.0].value;
        let s: f64 = v.data().iter().sum::<f64>() / v.numel() as f64;
        let rg = self.nodes[a.0].requires_grad;
        self.push_checked("mean", Tensor::scalar(s), rg, Op::MeanAll(a))
    }

    /// Sum over one axis, removing it. Summing the only axis yields `[1]`.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let av = &self.nodes[a.0].value;
        let shape = av.shape();
        if axis >= shape.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "sum_axis",
                axis,
                rank: shape.len(),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let mid = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        let data = av.data();
        for o in 0..outer {
            for m in 0..mid {
                let base = (o * mid + m) * inner;
                let obase = o * inner;
                for i in 0..inner {
                    out[obase + i] += data[base + i];
                }
            }
        }
        let mut out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|(d, _)| *d != axis)
            .map(|(_, &s)| s)
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let rg = self.nodes[a.0].requires_grad;
        self.push_checked(
            "sum_axis",
            Tensor::new(&out_shape, out)?,
            rg,
            Op::SumAxis(a, axis),
        )
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptyConcat);
        }
        let first = self.nodes[parts[0].0].value.shape().to_vec();
        if axis >= first.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "concat",
                axis,
                rank: first.len(),
            });
        }
        let mut axis_total = 0usize;
        for p in parts {
            let s = self.nodes[p.0].value.shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = vec![0.0; out_shape.iter().product()];
        let row = axis_total * inner;
        let mut offset = 0usize;
        for p in parts {
            let v = &self.nodes[p.0].value;
            let mid = v.shape()[axis];
            let chunk = mid * inner;
            for o in 0..outer {
                let src = &v.data()[o * chunk..(o + 1) * chunk];
                out[o * row + offset..o * row + offset + chunk].copy_from_slice(src);
            }
            offset += chunk;
        }
        let rg = self.any_grad(parts);
        self.push_checked(
            "concat",
            Tensor::new(&out_shape, out)?,
            rg,
            Op::Concat(parts.to_vec(), axis),
        )
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let xv = &self.nodes[x.0].value;
        let shape = xv.shape();
        if axis >= shape.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "slice",
                axis,
                rank: shape.len(),
            });
        }
        if len == 0 || start + len > shape[axis] {
            return Err(TensorError::SliceOutOfRange {
                axis,
                start,
                len,
                dim: shape[axis],
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let mut out = vec![0.0; outer * len * inner];
        let src_row = shape[axis] * inner;
        for o in 0..outer {
            let src = &xv.data()[o * src_row + start * inner..o * src_row + (start + len) * inner];
            out[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
        }
        let rg = self.nodes[x.0].requires_grad;
        self.push_checked(
            "slice",
            Tensor::new(&out_shape, out)?,
            rg,
            Op::Slice {
                x,
                axis,
                start,
                len,
            },
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.nodes[x.0].value.reshaped(shape)?;
        let rg = self.nodes[x.0].requires_grad;
        self.push_checked("reshape", value, rg, Op::Reshape(x))
    }

    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        checked_numel("broadcast_to", shape)?;
        let xv = &self.nodes[x.0].value;
        let out_shape = broadcast_shapes("broadcast_to", xv.shape(), shape)?;
        if out_shape != shape {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast_to",
                lhs: xv.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let mut out = vec![0.0; out_shape.iter().product()];
        {
            let data = xv.data();
            for_each_bcast2(&out_shape, xv.shape(), xv.shape(), |o, ai, _| {
                out[o] = data[ai];
            });
        }
        let rg = self.nodes[x.0].requires_grad;
        self.push_checked(
            "broadcast_to",
            Tensor::new(&out_shape, out)?,
            rg,
            Op::BroadcastTo(x),
        )
    }

    // ── backward ─────────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Accumulates `d(loss)/d(leaf)` into
    /// every `requires_grad` node. May be called once per graph; a second
    /// call is an error.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.backward_done {
            return Err(TensorError::BackwardAlreadyRun);
        }
        self.backward_done = true;
        let ls = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::NotScalar { shape: ls });
        }
        for node in &mut self.nodes {
            if node.requires_grad {
                node.grad = Some(vec![0.0; node.value.numel()]);
            }
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(()); // loss independent of all leaves; grads stay zero
        }
        self.nodes[loss.0].grad.as_mut().expect("allocated")[0] = 1.0;
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let grad_out = std::mem::take(&mut self.nodes[i].grad).expect("allocated");
            let op = self.nodes[i].op.clone();
            self.propagate(i, &op, &grad_out);
            self.nodes[i].grad = Some(grad_out);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, contrib: &[f64]) {
        if let Some(g) = self.nodes[v.0].grad.as_mut() {
            debug_assert_eq!(g.len(), contrib.len());
            for (a, b) in g.iter_mut().zip(contrib) {
                *a += b;
            }
        }
    }

    fn propagate(&mut self, node: usize, op: &Op, g: &[f64]) {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let (ga, gb) = self.bcast_linear_grads(*a, *b, g, 1.0, 1.0);
                self.acc(*a, &ga);
                self.acc(*b, &gb);
            }
            Op::Sub(a, b) => {
                let (ga, gb) = self.bcast_linear_grads(*a, *b, g, 1.0, -1.0);
                self.acc(*a, &ga);
                self.acc(*b, &gb);
            }
            Op::Mul(a, b) => {
                let out_shape = self.nodes[node].value.shape().to_vec();
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let mut ga = vec![0.0; av.numel()];
                let mut gb = vec![0.0; bv.numel()];
                let (ad, bd) = (av.data(), bv.data());
                for_each_bcast2(&out_shape, av.shape(), bv.shape(), |o, ai, bi| {
                    ga[ai] += g[o] * bd[bi];
                    gb[bi] += g[o] * ad[ai];
                });
                self.acc(*a, &ga);
                self.acc(*b, &gb);
            }
            Op::AddScalar(a) => self.acc(*a, g),
            Op::MulScalar(a, s) => {
                let ga: Vec<f64> = g.iter().map(|v| v * s).collect();
                self.acc(*a, &ga);
            }
            Op::PowScalar(a, p) => {
                let x = self.nodes[a.0].value.data();
                let ga: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(gv, &xv)| {
                        if *p == 0.0 || (xv == 0.0 && *p < 1.0) {
                            0.0
                        } else {
                            gv * p * xv.powf(p - 1.0)
                        }
                    })
                    .collect();
                self.acc(*a, &ga);
            }
            Op::Matmul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                // ga = g . b^T ; gb = a^T . g
                let bt = transpose_kernel(bv.data(), k, n);
                let ga = matmul_kernel(g, &bt, m, n, k);
                let at = transpose_kernel(av.data(), m, k);
                let gb = matmul_kernel(&at, g, k, m, n);
                self.acc(*a, &ga);
                self.acc(*b, &gb);
            }
            Op::Transpose(a) => {
                let shape = self.nodes[node].value.shape();
                let (n, m) = (shape[0], shape[1]);
                let ga = transpose_kernel(g, n, m);
                self.acc(*a, &ga);
            }
            Op::Conv2d { x, k, stride, pad } => {
                let (xv, kv) = (&self.nodes[x.0].value, &self.nodes[k.0].value);
                let os = self.nodes[node].value.shape();
                let (gx, gk) = conv::conv2d_backward(
                    xv.data(),
                    shape4(xv.shape()),
                    kv.data(),
                    shape4(kv.shape()),
                    *stride,
                    *pad,
                    g,
                    shape4(os),
                );
                self.acc(*x, &gx);
                self.acc(*k, &gk);
            }
            Op::StridedSample {
                x,
                off_h,
                off_w,
                stride,
            } => {
                let xs = shape4(self.nodes[x.0].value.shape());
                let os = self.nodes[node].value.shape().to_vec();
                let gx =
                    conv::strided_sample_backward(xs, *off_h, *off_w, *stride, os[1], os[2], g);
                self.acc(*x, &gx);
            }
            Op::Relu(a) => {
                let x = self.nodes[a.0].value.data();
                let ga: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.acc(*a, &ga);
            }
            Op::Exp(a) => {
                let y = self.nodes[node].value.data();
                let ga: Vec<f64> = g.iter().zip(y).map(|(gv, yv)| gv * yv).collect();
                self.acc(*a, &ga);
            }
            Op::Log(a) => {
                let x = self.nodes[a.0].value.data();
                let ga: Vec<f64> = g.iter().zip(x).map(|(gv, xv)| gv / xv).collect();
                self.acc(*a, &ga);
            }
            Op::ClampMin(a, floor) => {
                let x = self.nodes[a.0].value.data();
                let ga: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(gv, &xv)| if xv >= *floor { *gv } else { 0.0 })
                    .collect();
                self.acc(*a, &ga);
            }
            Op::SoftmaxLast(a) => {
                let y = self.nodes[node].value.data();
                let cols = *self.nodes[node].value.shape().last().expect("shape");
                let mut ga = vec![0.0; y.len()];
                for r in 0..y.len() / cols {
                    let ys = &y[r * cols..(r + 1) * cols];
                    let gs = &g[r * cols..(r + 1) * cols];
                    let dot: f64 = ys.iter().zip(gs).map(|(yv, gv)| yv * gv).sum();
                    for c in 0..cols {
                        ga[r * cols + c] = ys[c] * (gs[c] - dot);
                    }
                }
                self.acc(*a, &ga);
            }
            Op::L2NormalizeLast(a) => {
                let x = self.nodes[a.0].value.data();
                let y = self.nodes[node].value.data();
                let cols = *self.nodes[node].value.shape().last().expect("shape");
                let mut ga = vec![0.0; x.len()];
                for r in 0..x.len() / cols {
                    let xs = &x[r * cols..(r + 1) * cols];
                    let ys = &y[r * cols..(r + 1) * cols];
                    let gs = &g[r * cols..(r + 1) * cols];
                    let norm = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dot: f64 = ys.iter().zip(gs).map(|(yv, gv)| yv * gv).sum();
                    for c in 0..cols {
                        ga[r * cols + c] = (gs[c] - ys[c] * dot) / norm;
                    }
                }
                self.acc(*a, &ga);
            }
            Op::LogSumExpMaskedLast(a, mask) => {
                let x = self.nodes[a.0].value.data();
                let out = self.nodes[node].value.data();
                let cols = *self.nodes[a.0].value.shape().last().expect("shape");
                let mut ga = vec![0.0; x.len()];
                for r in 0..x.len() / cols {
                    let ms = &mask.data()[r * cols..(r + 1) * cols];
                    if ms.iter().all(|m| *m == 0.0) {
                        continue;
                    }
                    for c in 0..cols {
                        if ms[c] != 0.0 {
                            ga[r * cols + c] = g[r] * (x[r * cols + c] - out[r]).exp();
                        }
                    }
                }
                self.acc(*a, &ga);
            }
            Op::SumAll(a) => {
                let ga = vec![g[0]; self.nodes[a.0].value.numel()];
                self.acc(*a, &ga);
            }
            Op::MeanAll(a) => {
                let n = self.nodes[a.0].value.numel();
                let ga = vec![g[0] / n as f64; n];
                self.acc(*a, &ga);
            }
            Op::SumAxis(a, axis) => {
                let shape = self.nodes[a.0].value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let mid = shape[*axis];
                let inner: usize = shape[*axis + 1..].iter().product();
                let mut ga = vec![0.0; outer * mid * inner];
                for o in 0..outer {
                    for m in 0..mid {
                        let base = (o * mid + m) * inner;
                        for i in 0..inner {
                            ga[base + i] = g[o * inner + i];
                        }
                    }
                }
                self.acc(*a, &ga);
            }
            Op::Concat(parts, axis) => {
                let out_shape = self.nodes[node].value.shape().to_vec();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let row = out_shape[*axis] * inner;
                let mut offset = 0usize;
                for p in parts.clone() {
                    let mid = self.nodes[p.0].value.shape()[*axis];
                    let chunk = mid * inner;
                    let mut gp = vec![0.0; outer * chunk];
                    for o in 0..outer {
                        gp[o * chunk..(o + 1) * chunk]
                            .copy_from_slice(&g[o * row + offset..o * row + offset + chunk]);
                    }
                    self.acc(p, &gp);
                    offset += chunk;
                }
            }
            Op::Slice {
                x,
                axis,
                start,
                len,
            } => {
                let shape = self.nodes[x.0].value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let src_row = shape[*axis] * inner;
                let mut gx = vec![0.0; self.nodes[x.0].value.numel()];
                for o in 0..outer {
                    gx[o * src_row + start * inner..o * src_row + (start + len) * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                self.acc(*x, &gx);
            }
            Op::Reshape(x) => self.acc(*x, g),
            Op::BroadcastTo(x) => {
                let out_shape = self.nodes[node].value.shape().to_vec();
                let xv = &self.nodes[x.0].value;
                let mut gx = vec![0.0; xv.numel()];
                for_each_bcast2(&out_shape, xv.shape(), xv.shape(), |o, ai, _| {
                    gx[ai] += g[o];
                });
                self.acc(*x, &gx);
            }
        }
    }

    /// Gradients of `ca*a + cb*b` style broadcast binaries: route `g` back to
    /// each input, reducing over broadcast dimensions.
    fn bcast_linear_grads(
        &self,
        a: Var,
        b: Var,
        g: &[f64],
        ca: f64,
        cb: f64,
    ) -> (Vec<f64>, Vec<f64>) {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let out_shape = broadcast_shapes("grad", av.shape(), bv.shape()).expect("checked forward");
        let mut ga = vec![0.0; av.numel()];
        let mut gb = vec![0.0; bv.numel()];
        for_each_bcast2(&out_shape, av.shape(), bv.shape(), |o, ai, bi| {
            ga[ai] += ca * g[o];
            gb[bi] += cb * g[o];
        });
        (ga, gb)
    }
}

fn shape4(s: &[usize]) -> [usize; 4] {
    [s[0], s[1], s[2], s[3]]
}

fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn transpose_kernel(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}
