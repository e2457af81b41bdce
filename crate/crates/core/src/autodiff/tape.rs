//! Define-by-run computation graph with reverse-mode gradients.
//!
//! A [`Tape`] is built fresh for every forward pass. Ops append nodes and
//! return [`Var`] handles; [`Tape::backward`] walks the nodes in reverse and
//! accumulates exact gradients for every node that depends on a parameter or
//! a leaf created with [`Tape::input`].

use super::conv::ConvGeometry;
use super::tensor::{dot, matmul_acc, matmul_at_acc, matmul_bt_acc};
use super::{ParamId, ParamStore, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRow(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    MaskedSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    LogSumExp(Var),
    Gather(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SelectRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    SumAll(Var),
    MeanAll(Var),
    SumRows(Var),
    Minimum(Var, Var),
    Reshape(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeometry,
        cols: Vec<f64>,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Mse(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Computation graph for one forward/backward pass.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Option<(ParamId, Var)>>,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn require_2d(op: &'static str, t: &Tensor) -> Result<(usize, usize), TensorError> {
    if t.shape().len() != 2 {
        return Err(TensorError::InvalidArgument(format!(
            "{op} expects a 2-D tensor, got shape {:?}",
            t.shape()
        )));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl Tape {
    /// Finite checks are on in debug builds.
    pub fn new() -> Self {
        Self::with_finite_checks(cfg!(debug_assertions))
    }

    pub fn with_finite_checks(check_finite: bool) -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            check_finite,
        }
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

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Result<Var, TensorError> {
        if self.check_finite && !value.is_finite() {
            return Err(TensorError::NonFiniteValue { op: op_name(&op) });
        }
        self.nodes.push(Node { value, op, tracked });
        Ok(Var(self.nodes.len() - 1))
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    /// Untracked constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Tracked leaf whose gradient can be read after [`Tape::backward`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Tracked leaf holding a copy of a stored parameter; repeated calls reuse it.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let slot = id.index();
        if slot >= self.params.len() {
            self.params.resize(slot + 1, None);
        }
        if let Some((_, v)) = self.params[slot] {
            return v;
        }
        let v = self.input(store.get(id).clone());
        self.params[slot] = Some((id, v));
        v
    }

    /// Parameter value as an untracked constant.
    pub fn frozen_param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.constant(store.get(id).clone())
    }

    /// Copy of `x` that blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.constant(value)
    }

    fn elementwise2(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let tracked = self.tracked(&[a, b]);
        self.push(value, op, tracked)
    }

    fn elementwise1(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| f(*x)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let tracked = self.tracked(&[a]);
        self.push(value, op, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise2(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise2(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise2(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.elementwise2(a, b, "minimum", f64::min, Op::Minimum(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        self.elementwise1(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        self.elementwise1(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.elementwise1(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        self.elementwise1(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.elementwise1(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        self.elementwise1(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        self.elementwise1(a, f64::ln, Op::Log(a))
    }

    /// `x[n×m] + b[1×m]`, broadcasting the row over `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        let (tx, tb) = (self.value(x), self.value(b));
        let (n, m) = require_2d("add_row", tx)?;
        if tb.shape() != [1, m] {
            return Err(mismatch("add_row", tx, tb));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(m) {
            for (o, bv) in row.iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        let value = Tensor::new(vec![n, m], data)?;
        let tracked = self.tracked(&[x, b]);
        self.push(value, Op::AddRow(x, b), tracked)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, k) = require_2d("matmul", ta)?;
        let (k2, m) = require_2d("matmul", tb)?;
        if k != k2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let mut out = vec![0.0; n * m];
        matmul_acc(ta.data(), tb.data(), &mut out, n, k, m);
        let value = Tensor::new(vec![n, m], out)?;
        let tracked = self.tracked(&[a, b]);
        self.push(value, Op::MatMul(a, b), tracked)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let (n, m) = require_2d("transpose", ta)?;
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = ta.data()[i * m + j];
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        let tracked = self.tracked(&[a]);
        self.push(value, Op::Transpose(a), tracked)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        let value = self.value(a).clone().reshaped(shape)?;
        let tracked = self.tracked(&[a]);
        self.push(value, Op::Reshape(a), tracked)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let (n, m) = require_2d("softmax", ta)?;
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(m) {
            softmax_in_place(row);
        }
        let value = Tensor::new(vec![n, m], out)?;
        let tracked = self.tracked(&[a]);
        self.push(value, Op::Softmax(a), tracked)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let (n, m) = require_2d("log_softmax", ta)?;
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(m) {
            let lse = logsumexp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let value = Tensor::new(vec![n, m], out)?;
        let tracked = self.tracked(&[a]);
        self.push(value, Op::LogSoftmax(a), tracked)
    }

    /// Row softmax over the columns where `valid` is true; other entries are exactly zero.
    pub fn masked_softmax(&mut self, a: Var, valid: &[bool]) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let (n, m) = require_2d("masked_softmax", ta)?;
        if valid.len() != m {
            return Err(TensorError::ShapeMismatch {
                op: "masked_softmax",
                left: ta.shape().to_vec(),
                right: vec![valid.len()],
            });
        }
        if !valid.iter().any(|&v| v) {
            return Err(TensorError::InvalidArgument(
                "masked_softmax: every column is masked".into(),
            ));
        }
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(m) {
            let max = row
                .iter()
                .zip(valid)
                .filter(|(_, &ok)| ok)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (v, &ok) in row.iter_mut().zip(valid) {
                *v = if ok { (*v - max).exp() } else { 0.0 };
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        let value = Tensor::new(vec![n, m], out)?;
        let tracked = self.tracked(&[a]);
        self.push(value, Op::MaskedSoftmax(a), tracked)
    }

    /// Row-wise layer normalisation with learned gain and bias (`1×m` each).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, TensorError> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let (n, m) = require_2d("layer_norm", tx)?;
        if tg.shape() != [1, m] || tb.shape() != [1, m] {
            return Err(mismatch("layer_norm", tx, tg));
        }
        let mut xhat = vec![0.0; n * m];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &tx.data()[i * m..(i + 1) * m];
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..m {
                let h = (row[j] - mean) * is;
                xhat[i * m + j] = h;
                out[i * m + j] = tg.data()[j] * h + tb.data()[j];
            }
        }
        let value = Tensor::new(vec![n, m], out)?;
        let tracked = self.tracked(&[x, gamma, beta]);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            tracked,
        )
    }

    /// Row-wise `log Σ exp`, shape `n×1`.
    pub fn logsumexp(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let (n, m) = require_2d("logsumexp", ta)?;
        let out = ta.data().chunks(m).map(logsumexp).collect();
        let value = Tensor::new(vec![n, 1], out)?;
        let tracked = self.tracked(&[a]);
        self.push(value, Op::LogSumExp(a), tracked)
    }

    /// Picks `x[i, idx[i]]` for every row, shape `n×1`.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let (n, m) = require_2d("gather", tx)?;
        if idx.len() != n || idx.iter().any(|&j| j >= m) {
            return Err(TensorError::InvalidArgument(format!(
                "gather: {} indices into a {n}×{m} tensor",
                idx.len()
            )));
        }
        let out = idx.iter().enumerate().map(|(i, &j)| tx.data()[i * m + j]).collect();
        let value = Tensor::new(vec![n, 1], out)?;
        let tracked = self.tracked(&[x]);
        self.push(value, Op::Gather(x, idx.to_vec()), tracked)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::InvalidArgument("concat_cols: no inputs".into()))?;
        let n = require_2d("concat_cols", self.value(*first))?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = require_2d("concat_cols", self.value(*p))?;
            if r != n {
                return Err(mismatch("concat_cols", self.value(*first), self.value(*p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*p).data()[i * w..(i + 1) * w]);
            }
        }
        let value = Tensor::new(vec![n, total], out)?;
        let tracked = self.tracked(parts);
        self.push(value, Op::ConcatCols(parts.to_vec()), tracked)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let (n, m) = require_2d("slice_cols", tx)?;
        if start + len > m {
            return Err(TensorError::InvalidArgument(format!(
                "slice_cols: {start}+{len} exceeds {m} columns"
            )));
        }
        let mut out = Vec::with_capacity(n * len);
        for i in 0..n {
            out.extend_from_slice(&tx.data()[i * m + start..i * m + start + len]);
        }
        let value = Tensor::new(vec![n, len], out)?;
        let tracked = self.tracked(&[x]);
        self.push(value, Op::SliceCols(x, start), tracked)
    }

    /// Rows `x[idx[0]], x[idx[1]], …`; indices may repeat.
    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let n = tx.rows();
        let m = tx.cols();
        if idx.iter().any(|&i| i >= n) {
            return Err(TensorError::InvalidArgument(format!(
                "select_rows: index out of range for {n} rows"
            )));
        }
        let mut out = Vec::with_capacity(idx.len() * m);
        for &i in idx {
            out.extend_from_slice(&tx.data()[i * m..(i + 1) * m]);
        }
        let value = Tensor::new(vec![idx.len(), m], out)?;
        let tracked = self.tracked(&[x]);
        self.push(value, Op::SelectRows(x, idx.to_vec()), tracked)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::InvalidArgument("concat_rows: no inputs".into()))?;
        let m = require_2d("concat_rows", self.value(*first))?.1;
        let mut out = Vec::new();
        let mut n = 0;
        for p in parts {
            let (r, c) = require_2d("concat_rows", self.value(*p))?;
            if c != m {
                return Err(mismatch("concat_rows", self.value(*first), self.value(*p)));
            }
            n += r;
            out.extend_from_slice(self.value(*p).data());
        }
        let value = Tensor::new(vec![n, m], out)?;
        let tracked = self.tracked(parts);
        self.push(value, Op::ConcatRows(parts.to_vec()), tracked)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.value(a).data().iter().sum();
        let tracked = self.tracked(&[a]);
        self.push(Tensor::scalar(s), Op::SumAll(a), tracked)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        if t.numel() == 0 {
            return Err(TensorError::InvalidArgument("mean of empty tensor".into()));
        }
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let tracked = self.tracked(&[a]);
        self.push(Tensor::scalar(s), Op::MeanAll(a), tracked)
    }

    /// Row sums, shape `n×1`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let (n, m) = require_2d("sum_rows", ta)?;
        let out = ta.data().chunks(m).map(|r| r.iter().sum()).collect();
        let value = Tensor::new(vec![n, 1], out)?;
        let tracked = self.tracked(&[a]);
        self.push(value, Op::SumRows(a), tracked)
    }

    /// Batched 2-D convolution: `x` is `N×C×H×W`, `w` is `O×C×k×k`, `b` is `1×O`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var, TensorError> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (xs, ws) = (tx.shape(), tw.shape());
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] {
            return Err(mismatch("conv2d", tx, tw));
        }
        let out_ch = ws[0];
        if tb.numel() != out_ch {
            return Err(mismatch("conv2d", tw, tb));
        }
        if stride == 0 || xs[2] + 2 * padding < ws[2] || xs[3] + 2 * padding < ws[2] {
            return Err(TensorError::InvalidArgument("conv2d: bad geometry".into()));
        }
        let geom = ConvGeometry {
            channels: xs[1],
            height: xs[2],
            width: xs[3],
            kernel: ws[2],
            stride,
            padding,
        };
        let batch = xs[0];
        let (pl, ol) = (geom.patch_len(), geom.out_len());
        let in_len = geom.channels * geom.height * geom.width;
        let mut cols = vec![0.0; batch * pl * ol];
        let mut out = vec![0.0; batch * out_ch * ol];
        for n in 0..batch {
            let col = &mut cols[n * pl * ol..(n + 1) * pl * ol];
            geom.im2col(&tx.data()[n * in_len..(n + 1) * in_len], col);
            let o = &mut out[n * out_ch * ol..(n + 1) * out_ch * ol];
            for (c, row) in o.chunks_mut(ol).enumerate() {
                row.fill(tb.data()[c]);
            }
            matmul_acc(tw.data(), col, o, out_ch, pl, ol);
        }
        let value = Tensor::new(vec![batch, out_ch, geom.out_height(), geom.out_width()], out)?;
        let tracked = self.tracked(&[x, w, b]);
        self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            },
            tracked,
        )
    }

    /// Max pooling over `k×k` windows of an `N×C×H×W` tensor, no padding.
    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let s = tx.shape();
        if s.len() != 4 || kernel == 0 || stride == 0 || s[2] < kernel || s[3] < kernel {
            return Err(TensorError::InvalidArgument(format!(
                "max_pool2d: bad geometry for shape {s:?}"
            )));
        }
        let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
        let oh = (h - kernel) / stride + 1;
        let ow = (w - kernel) / stride + 1;
        let mut out = Vec::with_capacity(nc * oh * ow);
        let mut argmax = Vec::with_capacity(nc * oh * ow);
        for plane in 0..nc {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (f64::NEG_INFINITY, 0);
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                            if tx.data()[idx] > best.0 {
                                best = (tx.data()[idx], idx);
                            }
                        }
                    }
                    out.push(best.0);
                    argmax.push(best.1);
                }
            }
        }
        let value = Tensor::new(vec![s[0], s[1], oh, ow], out)?;
        let tracked = self.tracked(&[x]);
        self.push(value, Op::MaxPool { x, argmax }, tracked)
    }

    /// Mean cross-entropy between row logits and integer targets, shape `1×1`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let tl = self.value(logits);
        let (n, m) = require_2d("cross_entropy", tl)?;
        if n == 0 || targets.len() != n || targets.iter().any(|&t| t >= m) {
            return Err(TensorError::InvalidArgument(format!(
                "cross_entropy: {} targets for {n}×{m} logits",
                targets.len()
            )));
        }
        let mut probs = tl.data().to_vec();
        let mut loss = 0.0;
        for (row, &t) in probs.chunks_mut(m).zip(targets) {
            let lse = logsumexp(row);
            loss += lse - row[t];
            softmax_in_place(row);
        }
        let value = Tensor::scalar(loss / n as f64);
        let tracked = self.tracked(&[logits]);
        self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            tracked,
        )
    }

    /// Mean squared difference, shape `1×1`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("mse", ta, tb));
        }
        if ta.numel() == 0 {
            return Err(TensorError::InvalidArgument("mse of empty tensors".into()));
        }
        let s: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y).powi(2)).sum();
        let value = Tensor::scalar(s / ta.numel() as f64);
        let tracked = self.tracked(&[a, b]);
        self.push(value, Op::Mse(a, b), tracked)
    }

    /// Reverse pass from a one-element output.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(TensorError::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].tracked {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.iter().flatten().copied().collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].tracked {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |s| axpy(s, g, 1.0));
                acc(*b, &mut |s| axpy(s, g, 1.0));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| axpy(s, g, 1.0));
                acc(*b, &mut |s| axpy(s, g, -1.0));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * vb[i];
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * va[i];
                    }
                });
            }
            Op::Minimum(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        if va[i] <= vb[i] {
                            s[i] += g[i];
                        }
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..s.len() {
                        if va[i] > vb[i] {
                            s[i] += g[i];
                        }
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |s| axpy(s, g, *c)),
            Op::AddScalar(a) | Op::Reshape(a) => acc(*a, &mut |s| axpy(s, g, 1.0)),
            Op::AddRow(x, b) => {
                acc(*x, &mut |s| axpy(s, g, 1.0));
                let m = self.nodes[b.0].value.numel();
                acc(*b, &mut |s| {
                    for row in g.chunks(m) {
                        axpy(s, row, 1.0);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                acc(*a, &mut |s| matmul_bt_acc(g, tb.data(), s, n, k, m));
                acc(*b, &mut |s| matmul_at_acc(ta.data(), g, s, n, k, m));
            }
            Op::Transpose(a) => {
                let (n, m) = (self.nodes[a.0].value.shape()[0], self.nodes[a.0].value.shape()[1]);
                acc(*a, &mut |s| {
                    for i in 0..n {
                        for j in 0..m {
                            s[i * m + j] += g[j * n + i];
                        }
                    }
                });
            }
            Op::Relu(a) => {
                let va = val(*a);
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        if va[i] > 0.0 {
                            s[i] += g[i];
                        }
                    }
                });
            }
            Op::Tanh(a) => acc(*a, &mut |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * (1.0 - y[i] * y[i]);
                }
            }),
            Op::Sigmoid(a) => acc(*a, &mut |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            }),
            Op::Exp(a) => acc(*a, &mut |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * y[i];
                }
            }),
            Op::Log(a) => {
                let va = val(*a);
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] / va[i];
                    }
                });
            }
            Op::Softmax(a) | Op::MaskedSoftmax(a) => {
                let m = node.value.cols();
                acc(*a, &mut |s| {
                    for ((srow, yrow), grow) in s.chunks_mut(m).zip(y.chunks(m)).zip(g.chunks(m)) {
                        let inner = dot(yrow, grow);
                        for j in 0..m {
                            srow[j] += yrow[j] * (grow[j] - inner);
                        }
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let m = node.value.cols();
                acc(*a, &mut |s| {
                    for ((srow, yrow), grow) in s.chunks_mut(m).zip(y.chunks(m)).zip(g.chunks(m)) {
                        let total: f64 = grow.iter().sum();
                        for j in 0..m {
                            srow[j] += grow[j] - yrow[j].exp() * total;
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let m = node.value.cols();
                let vg = val(*gamma);
                acc(*x, &mut |s| {
                    for (i, (srow, grow)) in s.chunks_mut(m).zip(g.chunks(m)).enumerate() {
                        let h = &xhat[i * m..(i + 1) * m];
                        let dh: Vec<f64> = grow.iter().zip(vg).map(|(a, b)| a * b).collect();
                        let mean_dh = dh.iter().sum::<f64>() / m as f64;
                        let mean_dh_h = dot(&dh, h) / m as f64;
                        for j in 0..m {
                            srow[j] += inv_std[i] * (dh[j] - mean_dh - h[j] * mean_dh_h);
                        }
                    }
                });
                acc(*gamma, &mut |s| {
                    for (grow, h) in g.chunks(m).zip(xhat.chunks(m)) {
                        for j in 0..m {
                            s[j] += grow[j] * h[j];
                        }
                    }
                });
                acc(*beta, &mut |s| {
                    for grow in g.chunks(m) {
                        axpy(s, grow, 1.0);
                    }
                });
            }
            Op::LogSumExp(a) => {
                let m = self.nodes[a.0].value.cols();
                let va = val(*a);
                acc(*a, &mut |s| {
                    for (i, (srow, xrow)) in s.chunks_mut(m).zip(va.chunks(m)).enumerate() {
                        for j in 0..m {
                            srow[j] += g[i] * (xrow[j] - y[i]).exp();
                        }
                    }
                });
            }
            Op::Gather(x, idx) => {
                let m = self.nodes[x.0].value.cols();
                acc(*x, &mut |s| {
                    for (i, &j) in idx.iter().enumerate() {
                        s[i * m + j] += g[i];
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.nodes[p.0].value.cols();
                    acc(*p, &mut |s| {
                        for (srow, grow) in s.chunks_mut(w).zip(g.chunks(total)) {
                            axpy(srow, &grow[offset..offset + w], 1.0);
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols(x, start) => {
                let m = self.nodes[x.0].value.cols();
                let w = node.value.cols();
                acc(*x, &mut |s| {
                    for (srow, grow) in s.chunks_mut(m).zip(g.chunks(w)) {
                        axpy(&mut srow[*start..start + w], grow, 1.0);
                    }
                });
            }
            Op::SelectRows(x, idx) => {
                let m = node.value.cols();
                acc(*x, &mut |s| {
                    for (r, &i) in idx.iter().enumerate() {
                        axpy(&mut s[i * m..(i + 1) * m], &g[r * m..(r + 1) * m], 1.0);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.numel();
                    acc(*p, &mut |s| axpy(s, &g[offset..offset + len], 1.0));
                    offset += len;
                }
            }
            Op::SumAll(a) => acc(*a, &mut |s| s.iter_mut().for_each(|v| *v += g[0])),
            Op::MeanAll(a) => {
                let n = self.nodes[a.0].value.numel() as f64;
                acc(*a, &mut |s| s.iter_mut().for_each(|v| *v += g[0] / n));
            }
            Op::SumRows(a) => {
                let m = self.nodes[a.0].value.cols();
                acc(*a, &mut |s| {
                    for (i, srow) in s.chunks_mut(m).enumerate() {
                        srow.iter_mut().for_each(|v| *v += g[i]);
                    }
                });
            }
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            } => {
                let batch = self.nodes[x.0].value.shape()[0];
                let out_ch = self.nodes[w.0].value.shape()[0];
                let (pl, ol) = (geom.patch_len(), geom.out_len());
                let in_len = geom.channels * geom.height * geom.width;
                let vw = val(*w);
                acc(*w, &mut |s| {
                    for n in 0..batch {
                        let gn = &g[n * out_ch * ol..(n + 1) * out_ch * ol];
                        matmul_bt_acc(gn, &cols[n * pl * ol..(n + 1) * pl * ol], s, out_ch, pl, ol);
                    }
                });
                acc(*b, &mut |s| {
                    for n in 0..batch {
                        let gn = &g[n * out_ch * ol..(n + 1) * out_ch * ol];
                        for (c, row) in gn.chunks(ol).enumerate() {
                            s[c] += row.iter().sum::<f64>();
                        }
                    }
                });
                acc(*x, &mut |s| {
                    let mut dcols = vec![0.0; pl * ol];
                    for n in 0..batch {
                        dcols.fill(0.0);
                        let gn = &g[n * out_ch * ol..(n + 1) * out_ch * ol];
                        matmul_at_acc(vw, gn, &mut dcols, out_ch, pl, ol);
                        geom.col2im_acc(&dcols, &mut s[n * in_len..(n + 1) * in_len]);
                    }
                });
            }
            Op::MaxPool { x, argmax } => acc(*x, &mut |s| {
                for (o, &src) in argmax.iter().enumerate() {
                    s[src] += g[o];
                }
            }),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let m = self.nodes[logits.0].value.cols();
                let n = targets.len() as f64;
                acc(*logits, &mut |s| {
                    for (i, (srow, prow)) in s.chunks_mut(m).zip(probs.chunks(m)).enumerate() {
                        for j in 0..m {
                            let onehot = if j == targets[i] { 1.0 } else { 0.0 };
                            srow[j] += g[0] * (prow[j] - onehot) / n;
                        }
                    }
                });
            }
            Op::Mse(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let n = va.len() as f64;
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[0] * 2.0 * (va[i] - vb[i]) / n;
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..s.len() {
                        s[i] -= g[0] * 2.0 * (va[i] - vb[i]) / n;
                    }
                });
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; `None` if `v` is untracked or unreachable.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for a parameter loaded onto the tape.
    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.get(*v))
    }

    /// Euclidean norm of the gradients for the listed parameters (missing = zero).
    pub fn norm_of(&self, ids: &[ParamId]) -> f64 {
        ids.iter()
            .filter_map(|id| self.param(*id))
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

fn axpy(dst: &mut [f64], src: &[f64], a: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn logsumexp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::AddScalar(..) => "add_scalar",
        Op::AddRow(..) => "add_row",
        Op::MatMul(..) => "matmul",
        Op::Transpose(..) => "transpose",
        Op::Relu(..) => "relu",
        Op::Tanh(..) => "tanh",
        Op::Sigmoid(..) => "sigmoid",
        Op::Exp(..) => "exp",
        Op::Log(..) => "log",
        Op::Softmax(..) => "softmax",
        Op::LogSoftmax(..) => "log_softmax",
        Op::MaskedSoftmax(..) => "masked_softmax",
        Op::LayerNorm { .. } => "layer_norm",
        Op::LogSumExp(..) => "logsumexp",
        Op::Gather(..) => "gather",
        Op::ConcatCols(..) => "concat_cols",
        Op::SliceCols(..) => "slice_cols",
        Op::SelectRows(..) => "select_rows",
        Op::ConcatRows(..) => "concat_rows",
        Op::SumAll(..) => "sum_all",
        Op::MeanAll(..) => "mean_all",
        Op::SumRows(..) => "sum_rows",
        Op::Minimum(..) => "minimum",
        Op::Reshape(..) => "reshape",
        Op::Conv2d { .. } => "conv2d",
        Op::MaxPool { .. } => "max_pool2d",
        Op::CrossEntropy { .. } => "cross_entropy",
        Op::Mse(..) => "mse",
    }
}
