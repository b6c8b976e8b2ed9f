//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation in evaluation order. Parameter leaves
//! borrow their tensors, so building a graph over a weight table does not
//! copy it. [`Graph::backward`] walks the tape once in reverse.

use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRowVec { x: Var, b: Var },
    AddChannelVec { x: Var, b: Var },
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, col: Vec<f64> },
    Upsample2x(Var),
    ConcatChannels(Var, Var),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    ChannelsToRows(Var),
    RowsToChannels(Var),
    Silu(Var),
    Relu(Var),
    Sigmoid(Var),
    GroupNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    SoftmaxRows(Var),
    Gather { table: Var, ids: Vec<usize> },
    MeanSquared { pred: Var, target: Tensor },
    MeanRows(Var),
    GlobalAvgPool(Var),
    L2NormalizeRows { x: Var, norms: Vec<f64> },
    CrossEntropyRows { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    Sum(Var),
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

fn dims2(t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(invalid!("expected a matrix, got shape {:?}", t.shape())),
    }
}

fn dims3(t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(invalid!("expected a [c,h,w] tensor, got shape {:?}", t.shape())),
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_owned(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(Cow::Owned(value), op, needs_grad)
    }

    /// Trainable leaf borrowing its tensor.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, true)
    }

    /// Non-trainable leaf borrowing its tensor.
    pub fn frozen(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    /// Owned leaf that receives a gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).lincomb(1.0, self.value(b), 1.0)?;
        Ok(self.push_owned(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).lincomb(1.0, self.value(b), -1.0)?;
        Ok(self.push_owned(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        x.expect_same_shape(y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::new(x.shape(), data)?;
        Ok(self.push_owned(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).scaled(k);
        self.push_owned(out, Op::Scale(a, k), &[a])
    }

    /// `x[n,m] + b[m]` broadcast over rows.
    pub fn add_row_vec(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, m) = dims2(self.value(x))?;
        if self.value(b).len() != m {
            return Err(invalid!("row bias has {} entries, expected {}", self.value(b).len(), m));
        }
        let mut out = self.value(x).clone();
        let bias = self.value(b).data();
        for row in out.data_mut().chunks_mut(m).take(n) {
            for (o, bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        Ok(self.push_owned(out, Op::AddRowVec { x, b }, &[x, b]))
    }

    /// `x[c,h,w] + b[c]` broadcast over spatial positions.
    pub fn add_channel_vec(&mut self, x: Var, b: Var) -> Result<Var> {
        let (c, h, w) = dims3(self.value(x))?;
        if self.value(b).len() != c {
            return Err(invalid!("channel bias has {} entries, expected {}", self.value(b).len(), c));
        }
        let mut out = self.value(x).clone();
        let bias = self.value(b).data();
        for (plane, bv) in out.data_mut().chunks_mut(h * w).zip(bias) {
            for o in plane {
                *o += bv;
            }
        }
        Ok(self.push_owned(out, Op::AddChannelVec { x, b }, &[x, b]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = dims2(self.value(a))?;
        let (k2, m) = dims2(self.value(b))?;
        if k != k2 {
            return Err(invalid!("matmul inner dims differ: {} vs {}", k, k2));
        }
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), n, k, m);
        let out = Tensor::new(&[n, m], data)?;
        Ok(self.push_owned(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a[n,k] @ b[m,k]^T`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = dims2(self.value(a))?;
        let (m, k2) = dims2(self.value(b))?;
        if k != k2 {
            return Err(invalid!("matmul_bt inner dims differ: {} vs {}", k, k2));
        }
        let data = kernels::matmul_bt(self.value(a).data(), self.value(b).data(), n, k, m);
        let out = Tensor::new(&[n, m], data)?;
        Ok(self.push_owned(out, Op::MatMulBt(a, b), &[a, b]))
    }

    /// `x[n,in] @ w[out,in]^T + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul_bt(x, w)?;
        match b {
            Some(b) => self.add_row_vec(y, b),
            None => Ok(y),
        }
    }

    /// Square-kernel convolution; the kernel size is read from `w`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (in_ch, height, width) = dims3(self.value(x))?;
        let (out_ch, wic, kernel, k2) = match *self.value(w).shape() {
            [a, b, c, d] => (a, b, c, d),
            _ => return Err(invalid!("conv weight must be rank 4, got {:?}", self.value(w).shape())),
        };
        if wic != in_ch || kernel != k2 {
            return Err(invalid!(
                "conv weight {:?} does not fit input {:?}",
                self.value(w).shape(),
                self.value(x).shape()
            ));
        }
        if let Some(b) = b {
            if self.value(b).len() != out_ch {
                return Err(invalid!("conv bias length {} != {}", self.value(b).len(), out_ch));
            }
        }
        if height + 2 * pad < kernel || width + 2 * pad < kernel || stride == 0 {
            return Err(invalid!("conv geometry does not fit a {}x{} input", height, width));
        }
        let geom = ConvGeom { in_ch, out_ch, height, width, kernel, stride, pad };
        let (data, col) = kernels::conv2d(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let out = Tensor::new(&[out_ch, geom.out_height(), geom.out_width()], data)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push_owned(out, Op::Conv { x, w, b, geom, col }, &inputs))
    }

    /// Nearest-neighbour 2x spatial upsampling.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = dims3(self.value(x))?;
        let src = self.value(x).data();
        let mut out = vec![0.0; c * 4 * h * w];
        for ch in 0..c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[(ch * 2 * h + y) * 2 * w + xx] = src[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        let out = Tensor::new(&[c, 2 * h, 2 * w], out)?;
        Ok(self.push_owned(out, Op::Upsample2x(x), &[x]))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, h, w) = dims3(self.value(a))?;
        let (cb, h2, w2) = dims3(self.value(b))?;
        if (h, w) != (h2, w2) {
            return Err(invalid!("cannot concat {:?} with {:?}", self.value(a).shape(), self.value(b).shape()));
        }
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let out = Tensor::new(&[ca + cb, h, w], data)?;
        Ok(self.push_owned(out, Op::ConcatChannels(a, b), &[a, b]))
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(invalid!("concat_rows needs at least one input"));
        };
        let (_, cols) = dims2(self.value(first))?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = dims2(self.value(p))?;
            if c != cols {
                return Err(invalid!("cannot stack a {}-column matrix under a {}-column one", c, cols));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(&[rows, cols], data)?;
        Ok(self.push_owned(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Same data under a new shape.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push_owned(out, Op::Reshape(x), &[x]))
    }

    /// `[c,h,w] -> [h*w, c]`.
    pub fn channels_to_rows(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = dims3(self.value(x))?;
        let out = Tensor::new(&[h * w, c], transpose(self.value(x).data(), c, h * w))?;
        Ok(self.push_owned(out, Op::ChannelsToRows(x), &[x]))
    }

    /// `[h*w, c] -> [c,h,w]`.
    pub fn rows_to_channels(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let (n, c) = dims2(self.value(x))?;
        if n != h * w {
            return Err(invalid!("{} rows cannot fill a {}x{} grid", n, h, w));
        }
        let out = Tensor::new(&[c, h, w], transpose(self.value(x).data(), n, c))?;
        Ok(self.push_owned(out, Op::RowsToChannels(x), &[x]))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::silu);
        self.push_owned(out, Op::Silu(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push_owned(out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::sigmoid);
        self.push_owned(out, Op::Sigmoid(x), &[x])
    }

    /// Group normalization over `[c,h,w]` with per-channel affine.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let (c, h, w) = dims3(self.value(x))?;
        if groups == 0 || c % groups != 0 {
            return Err(invalid!("{} channels do not split into {} groups", c, groups));
        }
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(invalid!("group norm affine must have {} entries", c));
        }
        let (xhat, rstd) = kernels::normalize_groups(self.value(x).data(), groups);
        let (gm, bt) = (self.value(gamma).data(), self.value(beta).data());
        let hw = h * w;
        let data = xhat.iter().enumerate().map(|(i, v)| v * gm[i / hw] + bt[i / hw]).collect();
        let out = Tensor::new(&[c, h, w], data)?;
        Ok(self.push_owned(out, Op::GroupNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta]))
    }

    /// Layer normalization over each row of `[n,d]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (n, d) = dims2(self.value(x))?;
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(invalid!("layer norm affine must have {} entries", d));
        }
        let (xhat, rstd) = kernels::normalize_groups(self.value(x).data(), n);
        let (gm, bt) = (self.value(gamma).data(), self.value(beta).data());
        let data = xhat.iter().enumerate().map(|(i, v)| v * gm[i % d] + bt[i % d]).collect();
        let out = Tensor::new(&[n, d], data)?;
        Ok(self.push_owned(out, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta]))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (_, m) = dims2(self.value(x))?;
        let mut out = self.value(x).clone();
        kernels::softmax_rows(out.data_mut(), m);
        Ok(self.push_owned(out, Op::SoftmaxRows(x), &[x]))
    }

    /// Row lookup into `table[v, d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = dims2(self.value(table))?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(invalid!("row {} out of range for a table of {} rows", bad, v));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let out = Tensor::new(&[ids.len(), d], data)?;
        Ok(self.push_owned(out, Op::Gather { table, ids: ids.to_vec() }, &[table]))
    }

    /// Mean squared error against a constant target; a `[1]` scalar.
    pub fn mean_squared(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        self.value(pred).expect_same_shape(target)?;
        let v = kernels::mean_squared(self.value(pred).data(), target.data());
        Ok(self.push_owned(Tensor::scalar(v), Op::MeanSquared { pred, target: target.clone() }, &[pred]))
    }

    /// `[n,m] -> [1,m]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (n, m) = dims2(self.value(x))?;
        let mut out = vec![0.0; m];
        for row in self.value(x).data().chunks(m) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        let out = Tensor::new(&[1, m], out)?;
        Ok(self.push_owned(out, Op::MeanRows(x), &[x]))
    }

    /// `[c,h,w] -> [1,c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = dims3(self.value(x))?;
        let data = self.value(x).data().chunks(h * w).map(|p| p.iter().sum::<f64>() / (h * w) as f64).collect();
        let out = Tensor::new(&[1, c], data)?;
        Ok(self.push_owned(out, Op::GlobalAvgPool(x), &[x]))
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (_, m) = dims2(self.value(x))?;
        let mut out = self.value(x).clone();
        let mut norms = Vec::new();
        for row in out.data_mut().chunks_mut(m) {
            let n = libm::sqrt(row.iter().map(|v| v * v).sum::<f64>() + 1e-12);
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        Ok(self.push_owned(out, Op::L2NormalizeRows { x, norms }, &[x]))
    }

    /// Mean softmax cross-entropy of each row against its target column.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, m) = dims2(self.value(logits))?;
        if targets.len() != n || targets.iter().any(|&t| t >= m) {
            return Err(invalid!("cross-entropy targets do not match a {}x{} logit matrix", n, m));
        }
        let mut probs = self.value(logits).data().to_vec();
        kernels::softmax_rows(&mut probs, m);
        let loss = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| -libm::log(probs[i * m + t].max(1e-300)))
            .sum::<f64>()
            / n as f64;
        let op = Op::CrossEntropyRows { logits, targets: targets.to_vec(), probs };
        Ok(self.push_owned(Tensor::scalar(loss), op, &[logits]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push_owned(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(invalid!("backward needs a scalar, got shape {:?}", lv.shape()));
        }
        if !lv.data()[0].is_finite() {
            return Err(Error::Numeric(alloc::format!("loss is not finite: {}", lv.data()[0])));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Grads { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop_node(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(o, d)| *o -= d));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |s| {
                    for ((o, d), y) in s.iter_mut().zip(g).zip(bv) {
                        *o += d * y;
                    }
                });
                acc(*b, &mut |s| {
                    for ((o, d), x) in s.iter_mut().zip(g).zip(av) {
                        *o += d * x;
                    }
                });
            }
            Op::Scale(a, k) => acc(*a, &mut |s| kernels::axpy(*k, g, s)),
            Op::AddRowVec { x, b } => {
                let m = self.nodes[b.0].value.len();
                acc(*x, &mut |s| add_into(s, g));
                acc(*b, &mut |s| {
                    for row in g.chunks(m) {
                        add_into(s, row);
                    }
                });
            }
            Op::AddChannelVec { x, b } => {
                let c = self.nodes[b.0].value.len();
                let hw = g.len() / c;
                acc(*x, &mut |s| add_into(s, g));
                acc(*b, &mut |s| {
                    for (o, plane) in s.iter_mut().zip(g.chunks(hw)) {
                        *o += plane.iter().sum::<f64>();
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (n, k) = shape2(&self.nodes[a.0].value);
                let m = g.len() / n;
                if self.wants(*a) {
                    let ga = kernels::matmul_bt(g, val(*b), n, m, k);
                    acc(*a, &mut |s| add_into(s, &ga));
                }
                if self.wants(*b) {
                    let gb = kernels::matmul_at(val(*a), g, n, k, m);
                    acc(*b, &mut |s| add_into(s, &gb));
                }
            }
            Op::MatMulBt(a, b) => {
                let (n, k) = shape2(&self.nodes[a.0].value);
                let m = g.len() / n;
                if self.wants(*a) {
                    let ga = kernels::matmul(g, val(*b), n, m, k);
                    acc(*a, &mut |s| add_into(s, &ga));
                }
                if self.wants(*b) {
                    let gb = kernels::matmul_at(g, val(*a), n, m, k);
                    acc(*b, &mut |s| add_into(s, &gb));
                }
            }
            Op::Conv { x, w, b, geom, col } => {
                let wv = val(*w);
                let mut dx = self.wants(*x).then(|| vec![0.0; self.nodes[x.0].value.len()]);
                let mut dw = self.wants(*w).then(|| vec![0.0; wv.len()]);
                let mut db = b.filter(|b| self.wants(*b)).map(|_| vec![0.0; geom.out_ch]);
                kernels::conv2d_backward(g, col, wv, geom, dx.as_deref_mut(), dw.as_deref_mut(), db.as_deref_mut());
                if let Some(dx) = dx {
                    acc(*x, &mut |s| add_into(s, &dx));
                }
                if let Some(dw) = dw {
                    acc(*w, &mut |s| add_into(s, &dw));
                }
                if let (Some(b), Some(db)) = (b, db) {
                    acc(*b, &mut |s| add_into(s, &db));
                }
            }
            Op::Upsample2x(x) => {
                let (c, h, w) = shape3(&self.nodes[x.0].value);
                acc(*x, &mut |s| {
                    for ch in 0..c {
                        for y in 0..2 * h {
                            for xx in 0..2 * w {
                                s[(ch * h + y / 2) * w + xx / 2] += g[(ch * 2 * h + y) * 2 * w + xx];
                            }
                        }
                    }
                });
            }
            Op::ConcatChannels(a, b) => {
                let split = self.nodes[a.0].value.len();
                acc(*a, &mut |s| add_into(s, &g[..split]));
                acc(*b, &mut |s| add_into(s, &g[split..]));
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.nodes[p.0].value.len();
                    acc(*p, &mut |s| add_into(s, &g[off..off + n]));
                    off += n;
                }
            }
            Op::Reshape(x) => acc(*x, &mut |s| add_into(s, g)),
            Op::ChannelsToRows(x) => {
                let (c, h, w) = shape3(&self.nodes[x.0].value);
                let back = transpose(g, h * w, c);
                acc(*x, &mut |s| add_into(s, &back));
            }
            Op::RowsToChannels(x) => {
                let (n, c) = shape2(&self.nodes[x.0].value);
                let back = transpose(g, c, n);
                acc(*x, &mut |s| add_into(s, &back));
            }
            Op::Silu(x) => {
                let xv = val(*x);
                acc(*x, &mut |s| {
                    for ((o, d), v) in s.iter_mut().zip(g).zip(xv) {
                        *o += d * kernels::silu_grad(*v);
                    }
                });
            }
            Op::Relu(x) => {
                let xv = val(*x);
                acc(*x, &mut |s| {
                    for ((o, d), v) in s.iter_mut().zip(g).zip(xv) {
                        if *v > 0.0 {
                            *o += d;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(*x, &mut |s| {
                    for ((o, d), yv) in s.iter_mut().zip(g).zip(y) {
                        *o += d * yv * (1.0 - yv);
                    }
                });
            }
            Op::GroupNorm { x, gamma, beta, xhat, rstd } => {
                let c = self.nodes[gamma.0].value.len();
                let hw = g.len() / c;
                let gm = val(*gamma);
                acc(*gamma, &mut |s| {
                    for (ch, o) in s.iter_mut().enumerate() {
                        let r = ch * hw..(ch + 1) * hw;
                        *o += kernels::dot(&g[r.clone()], &xhat[r]);
                    }
                });
                acc(*beta, &mut |s| {
                    for (o, plane) in s.iter_mut().zip(g.chunks(hw)) {
                        *o += plane.iter().sum::<f64>();
                    }
                });
                if self.wants(*x) {
                    let dxhat: Vec<f64> = g.iter().enumerate().map(|(i, d)| d * gm[i / hw]).collect();
                    acc(*x, &mut |s| kernels::normalize_groups_backward(&dxhat, xhat, rstd, s));
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let d = self.nodes[gamma.0].value.len();
                let gm = val(*gamma);
                acc(*gamma, &mut |s| {
                    for (row_g, row_h) in g.chunks(d).zip(xhat.chunks(d)) {
                        for ((o, a), b) in s.iter_mut().zip(row_g).zip(row_h) {
                            *o += a * b;
                        }
                    }
                });
                acc(*beta, &mut |s| {
                    for row in g.chunks(d) {
                        add_into(s, row);
                    }
                });
                if self.wants(*x) {
                    let dxhat: Vec<f64> = g.iter().enumerate().map(|(i, v)| v * gm[i % d]).collect();
                    acc(*x, &mut |s| kernels::normalize_groups_backward(&dxhat, xhat, rstd, s));
                }
            }
            Op::SoftmaxRows(x) => {
                let y = node.value.data();
                let m = shape2(&node.value).1;
                acc(*x, &mut |s| {
                    for ((srow, grow), yrow) in s.chunks_mut(m).zip(g.chunks(m)).zip(y.chunks(m)) {
                        let inner = kernels::dot(grow, yrow);
                        for ((o, d), yv) in srow.iter_mut().zip(grow).zip(yrow) {
                            *o += yv * (d - inner);
                        }
                    }
                });
            }
            Op::Gather { table, ids } => {
                let d = shape2(&self.nodes[table.0].value).1;
                acc(*table, &mut |s| {
                    for (r, &i) in ids.iter().enumerate() {
                        add_into(&mut s[i * d..(i + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::MeanSquared { pred, target } => {
                let p = val(*pred);
                let k = 2.0 * g[0] / p.len() as f64;
                acc(*pred, &mut |s| {
                    for ((o, a), b) in s.iter_mut().zip(p).zip(target.data()) {
                        *o += k * (a - b);
                    }
                });
            }
            Op::MeanRows(x) => {
                let (n, m) = shape2(&self.nodes[x.0].value);
                acc(*x, &mut |s| {
                    for row in s.chunks_mut(m) {
                        kernels::axpy(1.0 / n as f64, g, row);
                    }
                });
            }
            Op::GlobalAvgPool(x) => {
                let (_, h, w) = shape3(&self.nodes[x.0].value);
                let hw = h * w;
                acc(*x, &mut |s| {
                    for (plane, d) in s.chunks_mut(hw).zip(g) {
                        plane.iter_mut().for_each(|o| *o += d / hw as f64);
                    }
                });
            }
            Op::L2NormalizeRows { x, norms } => {
                let y = node.value.data();
                let m = shape2(&node.value).1;
                acc(*x, &mut |s| {
                    for (((srow, grow), yrow), n) in
                        s.chunks_mut(m).zip(g.chunks(m)).zip(y.chunks(m)).zip(norms)
                    {
                        let inner = kernels::dot(grow, yrow);
                        for ((o, d), yv) in srow.iter_mut().zip(grow).zip(yrow) {
                            *o += (d - yv * inner) / n;
                        }
                    }
                });
            }
            Op::CrossEntropyRows { logits, targets, probs } => {
                let n = targets.len();
                let m = probs.len() / n;
                let k = g[0] / n as f64;
                acc(*logits, &mut |s| {
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..m {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            s[i * m + j] += k * (probs[i * m + j] - onehot);
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |s| s.iter_mut().for_each(|o| *o += g[0])),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, v) in dst.iter_mut().zip(src) {
        *o += v;
    }
}

fn shape2(t: &Tensor) -> (usize, usize) {
    (t.shape()[0], t.shape()[1])
}

fn shape3(t: &Tensor) -> (usize, usize, usize) {
    (t.shape()[0], t.shape()[1], t.shape()[2])
}

/// Transposes a row-major `[rows, cols]` buffer.
fn transpose(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Central-difference check of every input gradient of `build`.
    fn check(inputs: Vec<Tensor>, build: impl Fn(&mut Graph, &[Var]) -> Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars);
        let grads = g.backward(out).unwrap();
        let h = 1e-5;
        for (k, t) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[k]).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; t.len()]);
            for i in 0..t.len() {
                let eval = |delta: f64| {
                    let mut shifted = inputs.clone();
                    shifted[k].data_mut()[i] += delta;
                    let mut g2 = Graph::new();
                    let vs: Vec<Var> = shifted.into_iter().map(|t| g2.input(t)).collect();
                    let o = build(&mut g2, &vs);
                    g2.value(o).data()[0]
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let err = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-6);
                assert!(err < 1e-5, "input {k} coord {i}: numeric {numeric} analytic {}", analytic[i]);
            }
        }
    }

    fn rand_t(seed: u64, shape: &[usize]) -> Tensor {
        rng::normal_tensor(&mut rng::seeded(seed), shape)
    }

    /// Weighted sum so every output coordinate gets a distinct upstream gradient.
    fn probe(g: &mut Graph, v: Var) -> Var {
        let w = Tensor::from_fn(g.value(v).shape(), |i| ((i * 7919) % 13) as f64 / 13.0 - 0.4);
        let wv = g.constant(w);
        let p = g.mul(v, wv).unwrap();
        g.sum(p)
    }

    #[test]
    fn stacking_and_reshape() {
        check(vec![rand_t(31, &[2, 3]), rand_t(32, &[1, 3]), rand_t(33, &[2, 3, 1])], |g, v| {
            let c = g.reshape(v[2], &[2, 3]).unwrap();
            let s = g.concat_rows(&[v[0], v[1], c]).unwrap();
            let t = g.silu(s);
            probe(g, t)
        });
    }

    #[test]
    fn elementwise_ops() {
        check(vec![rand_t(1, &[2, 3]), rand_t(2, &[2, 3])], |g, v| {
            let a = g.add(v[0], v[1]).unwrap();
            let b = g.sub(a, v[1]).unwrap();
            let c = g.mul(b, v[1]).unwrap();
            let d = g.scale(c, 0.7);
            let e = g.silu(d);
            let f = g.sigmoid(e);
            probe(g, f)
        });
    }

    #[test]
    fn matrix_ops() {
        check(vec![rand_t(3, &[3, 4]), rand_t(4, &[4, 5]), rand_t(5, &[2, 4]), rand_t(6, &[2])], |g, v| {
            let a = g.matmul(v[0], v[1]).unwrap();
            let b = g.linear(v[0], v[2], Some(v[3])).unwrap();
            let s = g.softmax_rows(b).unwrap();
            let n = g.l2_normalize_rows(a).unwrap();
            let m = g.mean_rows(n).unwrap();
            let p1 = probe(g, s);
            let p2 = probe(g, m);
            g.add(p1, p2).unwrap()
        });
    }

    #[test]
    fn conv_and_spatial_ops() {
        check(
            vec![rand_t(7, &[2, 4, 4]), rand_t(8, &[3, 2, 3, 3]), rand_t(9, &[3]), rand_t(10, &[3, 3, 1, 1])],
            |g, v| {
                let c = g.conv2d(v[0], v[1], Some(v[2]), 2, 1).unwrap();
                let u = g.upsample2x(c).unwrap();
                let cc = g.conv2d(u, v[3], None, 1, 0).unwrap();
                let cat = g.concat_channels(cc, u).unwrap();
                let r = g.channels_to_rows(cat).unwrap();
                let back = g.rows_to_channels(r, 4, 4).unwrap();
                let p = g.global_avg_pool(back).unwrap();
                let a = probe(g, back);
                let b = probe(g, p);
                g.add(a, b).unwrap()
            },
        );
    }

    #[test]
    fn normalization_ops() {
        check(
            vec![rand_t(11, &[4, 3, 3]), rand_t(12, &[4]), rand_t(13, &[4]), rand_t(14, &[3, 5]), rand_t(15, &[5]), rand_t(16, &[5])],
            |g, v| {
                let gn = g.group_norm(v[0], v[1], v[2], 2).unwrap();
                let cvec = g.add_channel_vec(gn, v[1]).unwrap();
                let ln = g.layer_norm(v[3], v[4], v[5]).unwrap();
                let a = probe(g, cvec);
                let b = probe(g, ln);
                g.add(a, b).unwrap()
            },
        );
    }

    #[test]
    fn lookup_and_losses() {
        let target = rand_t(20, &[3, 4]);
        check(vec![rand_t(17, &[5, 4])], move |g, v| {
            let e = g.gather(v[0], &[4, 1, 4]).unwrap();
            let mse = g.mean_squared(e, &target).unwrap();
            let ce = g.cross_entropy_rows(e, &[0, 3, 2]).unwrap();
            g.add(mse, ce).unwrap()
        });
    }

    #[test]
    fn frozen_leaves_get_no_gradient() {
        let w = rand_t(1, &[2, 2]);
        let mut g = Graph::new();
        let a = g.frozen(&w);
        let b = g.input(rand_t(2, &[2, 2]));
        let c = g.mul(a, b).unwrap();
        let s = g.sum(c);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(a).is_none());
        assert!(grads.get(b).is_some());
    }

    #[test]
    fn backward_rejects_non_finite_loss() {
        let mut g = Graph::new();
        let a = g.input(Tensor::scalar(f64::NAN));
        assert!(matches!(g.backward(a), Err(Error::Numeric(_))));
    }
}
