//! Reverse-mode differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and a single reverse sweep visits every node once.

use super::kernels::{self, gemm_acc, gemm_at_acc, gemm_bt_acc};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberately wrong gradient rules, used as negative controls for the
/// gradient checker.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradFault {
    /// Scales the gain gradient of every RMS norm by 1.5.
    RmsNormGain,
    /// Drops the derivative of the sigmoid factor inside SiLU.
    SiluShortcut,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var, usize),
    Silu(Var),
    Softmax(Var),
    RmsNorm(Var, Var),
    Rope(Var),
    DepthwiseConv(Var, Var),
    MaskRows(Var, Vec<bool>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SegmentMean(Var, Vec<Option<usize>>),
    Sum(Var),
    RowNorms(Var),
    Transpose(Var),
    Reshape(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::MatMulBt(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::ScaleBy(a, b, _)
            | Op::RmsNorm(a, b)
            | Op::DepthwiseConv(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Silu(a)
            | Op::Softmax(a)
            | Op::Rope(a)
            | Op::MaskRows(a, _)
            | Op::GatherRows(a, _)
            | Op::SegmentMean(a, _)
            | Op::Sum(a)
            | Op::RowNorms(a)
            | Op::Transpose(a)
            | Op::Reshape(a) => vec![*a],
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Tape of tensor operations with reverse-mode gradients.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    fault: Option<GradFault>,
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, contrib: &[f64]) {
    match &mut grads[v.0] {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(contrib) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(contrib.to_vec()),
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    #[doc(hidden)]
    pub fn set_fault(&mut self, fault: Option<GradFault>) {
        self.fault = fault;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf: gradients are accumulated for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf: no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a trainable leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn shape_of(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a * b^T`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        if bv.cols() != k {
            return Err(Error::Shape(format!(
                "matmul_bt {:?} x {:?}^T",
                av.shape(),
                bv.shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm_bt_acc(av.data(), bv.data(), &mut out, m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMulBt(a, b)))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape_of(a) != self.shape_of(b) {
            return Err(Error::Shape(format!(
                "{what} {:?} vs {:?}",
                self.shape_of(a),
                self.shape_of(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        let out = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Adds a row vector (length = last extent) to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        let c = av.cols();
        if bv.len() != c {
            return Err(Error::Shape(format!(
                "add_row bias {:?} for {:?}",
                bv.shape(),
                av.shape()
            )));
        }
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(c) {
            for (x, b) in row.iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddRow(a, bias)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let av = self.value(a);
        let out = Tensor::new(av.shape().to_vec(), av.data().iter().map(|x| x * factor).collect())
            .expect("same shape");
        self.push(out, Op::Scale(a, factor))
    }

    /// Multiplies `a` by element `index` of `s`.
    pub fn scale_by(&mut self, a: Var, s: Var, index: usize) -> Result<Var> {
        let factor = *self
            .value(s)
            .data()
            .get(index)
            .ok_or_else(|| Error::Shape(format!("scale_by index {index} out of range")))?;
        let av = self.value(a);
        let out = Tensor::new(av.shape().to_vec(), av.data().iter().map(|x| x * factor).collect())?;
        Ok(self.push(out, Op::ScaleBy(a, s, index)))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let out = Tensor::new(av.shape().to_vec(), av.data().iter().map(|&x| kernels::silu(x)).collect())
            .expect("same shape");
        self.push(out, Op::Silu(a))
    }

    /// Softmax over the last axis, optionally restricted by a per-element mask.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<Vec<bool>>) -> Result<Var> {
        let out = kernels::softmax_rows(self.value(a), mask.as_deref())?;
        Ok(self.push(out, Op::Softmax(a)))
    }

    /// Softmax along `axis` (last axis, or axis 0 of a matrix).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let rank = self.shape_of(a).len();
        if axis + 1 == rank {
            self.softmax_rows(a, None)
        } else if rank == 2 && axis == 0 {
            let t = self.transpose(a);
            let s = self.softmax_rows(t, None)?;
            Ok(self.transpose(s))
        } else {
            Err(Error::InvalidArgument(format!(
                "softmax axis {axis} on rank-{rank} tensor"
            )))
        }
    }

    pub fn rms_norm(&mut self, a: Var, gain: Var) -> Result<Var> {
        let out = kernels::rms_norm(self.value(a), self.value(gain))?;
        Ok(self.push(out, Op::RmsNorm(a, gain)))
    }

    /// Rotary encoding of every row, using the row index as position.
    pub fn rope(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let d = av.cols();
        if d % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "rotary encoding needs an even width, got {d}"
            )));
        }
        let mut out = vec![0.0; av.len()];
        for r in 0..av.rows() {
            kernels::rope_row(av.row(r), &mut out[r * d..(r + 1) * d], r as f64, 1.0);
        }
        let out = Tensor::new(av.shape().to_vec(), out)?;
        Ok(self.push(out, Op::Rope(a)))
    }

    /// Depth-wise convolution of `x: [length, channels]` with `kernels: [channels, k]`.
    pub fn depthwise_conv1d(&mut self, x: Var, kernels: Var) -> Result<Var> {
        let out = kernels::depthwise_conv1d(self.value(x), self.value(kernels))?;
        Ok(self.push(out, Op::DepthwiseConv(x, kernels)))
    }

    /// Zeroes rows whose flag is false.
    pub fn mask_rows(&mut self, a: Var, keep: Vec<bool>) -> Result<Var> {
        let av = self.value(a);
        let c = av.cols();
        if keep.len() != av.rows() {
            return Err(Error::Shape(format!(
                "row mask of length {} for {} rows",
                keep.len(),
                av.rows()
            )));
        }
        let mut data = av.data().to_vec();
        for (row, &k) in data.chunks_mut(c).zip(&keep) {
            if !k {
                row.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(out, Op::MaskRows(a, keep)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Shape("concat_cols row mismatch".into()));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        Ok(self.push(Tensor::matrix(rows, total, data), Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            return Err(Error::Shape("concat_rows column mismatch".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols;
        Ok(self.push(Tensor::matrix(rows, cols, data), Op::ConcatRows(parts.to_vec())))
    }

    /// `out[i] = a[index[i]]`.
    pub fn gather_rows(&mut self, a: Var, index: Vec<usize>) -> Result<Var> {
        let av = self.value(a);
        let c = av.cols();
        if index.is_empty() {
            return Err(Error::Shape("gather_rows with no indices".into()));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= av.rows()) {
            return Err(Error::Shape(format!(
                "gather_rows index {bad} for {} rows",
                av.rows()
            )));
        }
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in &index {
            data.extend_from_slice(av.row(i));
        }
        let out = Tensor::matrix(index.len(), c, data);
        Ok(self.push(out, Op::GatherRows(a, index)))
    }

    /// Averages rows by segment: `segment[i]` names the output row that input
    /// row `i` contributes to (`None` rows are ignored). Segments without
    /// members produce zero rows.
    pub fn segment_mean(
        &mut self,
        a: Var,
        segment: Vec<Option<usize>>,
        n_segments: usize,
    ) -> Result<Var> {
        let av = self.value(a);
        let c = av.cols();
        if segment.len() != av.rows() || n_segments == 0 {
            return Err(Error::Shape(format!(
                "segment map of length {} for {} rows",
                segment.len(),
                av.rows()
            )));
        }
        if segment.iter().flatten().any(|&s| s >= n_segments) {
            return Err(Error::Shape("segment id out of range".into()));
        }
        let counts = segment_counts(&segment, n_segments);
        let mut data = vec![0.0; n_segments * c];
        for (i, s) in segment.iter().enumerate() {
            if let Some(s) = *s {
                let inv = 1.0 / counts[s] as f64;
                for (o, x) in data[s * c..(s + 1) * c].iter_mut().zip(av.row(i)) {
                    *o += x * inv;
                }
            }
        }
        let out = Tensor::matrix(n_segments, c, data);
        Ok(self.push(out, Op::SegmentMean(a, segment)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Euclidean norm of every row, as a column `[rows, 1]`.
    pub fn row_norms(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = (0..av.rows())
            .map(|r| av.row(r).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect::<Vec<_>>();
        let rows = data.len();
        self.push(Tensor::matrix(rows, 1, data), Op::RowNorms(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// `x * w + b` for `x: [rows, in]`, `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    /// Accumulates `d loss / d leaf` into every trainable leaf reachable from
    /// `loss`. Calling it twice without [`Graph::zero_grad`] sums the results.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        for (i, n) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let Some(bad) = n.op.inputs().into_iter().find(|v| v.0 >= i) {
                return Err(Error::GraphCycle {
                    node: i,
                    input: bad.0,
                });
            }
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                    None => {
                        node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                    }
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        let val = |v: &Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => unreachable!(),
            Op::MatMul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if needs(a) {
                    let ga = slot(grads, *a, m * k);
                    gemm_bt_acc(g, bv.data(), ga, m, n, k);
                }
                if needs(b) {
                    let gb = slot(grads, *b, k * n);
                    gemm_at_acc(av.data(), g, gb, m, k, n);
                }
            }
            Op::MatMulBt(a, b) => {
                // out[m,n] = a[m,k] b[n,k]^T
                let (av, bv) = (val(a), val(b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                if needs(a) {
                    let ga = slot(grads, *a, m * k);
                    gemm_acc(g, bv.data(), ga, m, n, k);
                }
                if needs(b) {
                    let gb = slot(grads, *b, n * k);
                    gemm_at_acc(g, av.data(), gb, m, n, k);
                }
            }
            Op::Add(a, b) => {
                if needs(a) {
                    accumulate(grads, *a, g);
                }
                if needs(b) {
                    accumulate(grads, *b, g);
                }
            }
            Op::Sub(a, b) => {
                if needs(a) {
                    accumulate(grads, *a, g);
                }
                if needs(b) {
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    accumulate(grads, *b, &neg);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(a), val(b));
                if needs(a) {
                    let c: Vec<f64> = g.iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                    accumulate(grads, *a, &c);
                }
                if needs(b) {
                    let c: Vec<f64> = g.iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    accumulate(grads, *b, &c);
                }
            }
            Op::AddRow(a, b) => {
                if needs(a) {
                    accumulate(grads, *a, g);
                }
                if needs(b) {
                    let c = val(b).len();
                    let gb = slot(grads, *b, c);
                    for row in g.chunks(c) {
                        for (o, x) in gb.iter_mut().zip(row) {
                            *o += x;
                        }
                    }
                }
            }
            Op::Scale(a, f) => {
                if needs(a) {
                    let c: Vec<f64> = g.iter().map(|x| x * f).collect();
                    accumulate(grads, *a, &c);
                }
            }
            Op::ScaleBy(a, s, idx) => {
                let factor = val(s).data()[*idx];
                if needs(a) {
                    let c: Vec<f64> = g.iter().map(|x| x * factor).collect();
                    accumulate(grads, *a, &c);
                }
                if needs(s) {
                    let dot: f64 = g.iter().zip(val(a).data()).map(|(x, y)| x * y).sum();
                    let len = val(s).len();
                    slot(grads, *s, len)[*idx] += dot;
                }
            }
            Op::Silu(a) => {
                if needs(a) {
                    let shortcut = self.fault == Some(GradFault::SiluShortcut);
                    let c: Vec<f64> = g
                        .iter()
                        .zip(val(a).data())
                        .map(|(x, &z)| {
                            if shortcut {
                                x / (1.0 + (-z).exp())
                            } else {
                                x * kernels::silu_grad(z)
                            }
                        })
                        .collect();
                    accumulate(grads, *a, &c);
                }
            }
            Op::Softmax(a) => {
                if needs(a) {
                    let y = &node.value;
                    let c = y.cols();
                    let mut out = vec![0.0; y.len()];
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = &g[r * c..(r + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..c {
                            out[r * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(grads, *a, &out);
                }
            }
            Op::RmsNorm(a, gain) => {
                let (xv, gv) = (val(a), val(gain));
                let c = xv.cols();
                let gd = gv.data();
                let mut dx = vec![0.0; xv.len()];
                let mut dg = vec![0.0; c];
                for r in 0..xv.rows() {
                    let x = xv.row(r);
                    let inv = kernels::rms_inv(x);
                    let gr = &g[r * c..(r + 1) * c];
                    let mut dot = 0.0;
                    for j in 0..c {
                        dg[j] += gr[j] * x[j] * inv;
                        dot += gr[j] * gd[j] * x[j];
                    }
                    let k = dot * inv * inv * inv / c as f64;
                    for j in 0..c {
                        dx[r * c + j] = gr[j] * gd[j] * inv - x[j] * k;
                    }
                }
                if self.fault == Some(GradFault::RmsNormGain) {
                    dg.iter_mut().for_each(|v| *v *= 1.5);
                }
                if needs(a) {
                    accumulate(grads, *a, &dx);
                }
                if needs(gain) {
                    accumulate(grads, *gain, &dg);
                }
            }
            Op::Rope(a) => {
                if needs(a) {
                    let d = node.value.cols();
                    let mut out = vec![0.0; g.len()];
                    for r in 0..node.value.rows() {
                        kernels::rope_row(
                            &g[r * d..(r + 1) * d],
                            &mut out[r * d..(r + 1) * d],
                            r as f64,
                            -1.0,
                        );
                    }
                    accumulate(grads, *a, &out);
                }
            }
            Op::DepthwiseConv(x, w) => {
                let (xv, wv) = (val(x), val(w));
                let (len, ch, k) = (xv.rows(), xv.cols(), wv.cols());
                let half = k / 2;
                let mut dx = vec![0.0; xv.len()];
                let mut dw = vec![0.0; wv.len()];
                let (xd, wd) = (xv.data(), wv.data());
                for t in 0..len {
                    for j in 0..k {
                        let s = t as isize + j as isize - half as isize;
                        if s < 0 || s as usize >= len {
                            continue;
                        }
                        let s = s as usize;
                        for c in 0..ch {
                            let go = g[t * ch + c];
                            dx[s * ch + c] += wd[c * k + j] * go;
                            dw[c * k + j] += xd[s * ch + c] * go;
                        }
                    }
                }
                if needs(x) {
                    accumulate(grads, *x, &dx);
                }
                if needs(w) {
                    accumulate(grads, *w, &dw);
                }
            }
            Op::MaskRows(a, keep) => {
                if needs(a) {
                    let c = node.value.cols();
                    let mut out = g.to_vec();
                    for (row, &k) in out.chunks_mut(c).zip(keep) {
                        if !k {
                            row.iter_mut().for_each(|x| *x = 0.0);
                        }
                    }
                    accumulate(grads, *a, &out);
                }
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let c = val(p).cols();
                    if needs(p) {
                        let gp = slot(grads, *p, rows * c);
                        for r in 0..rows {
                            for j in 0..c {
                                gp[r * c + j] += g[r * total + offset + j];
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(p).len();
                    if needs(p) {
                        accumulate(grads, *p, &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::GatherRows(a, index) => {
                if needs(a) {
                    let c = node.value.cols();
                    let n = val(a).len();
                    let ga = slot(grads, *a, n);
                    for (r, &src) in index.iter().enumerate() {
                        for j in 0..c {
                            ga[src * c + j] += g[r * c + j];
                        }
                    }
                }
            }
            Op::SegmentMean(a, segment) => {
                if needs(a) {
                    let c = node.value.cols();
                    let counts = segment_counts(segment, node.value.rows());
                    let mut out = vec![0.0; val(a).len()];
                    for (i, s) in segment.iter().enumerate() {
                        if let Some(s) = *s {
                            let inv = 1.0 / counts[s] as f64;
                            for j in 0..c {
                                out[i * c + j] = g[s * c + j] * inv;
                            }
                        }
                    }
                    accumulate(grads, *a, &out);
                }
            }
            Op::Sum(a) => {
                if needs(a) {
                    let n = val(a).len();
                    let ga = slot(grads, *a, n);
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::RowNorms(a) => {
                if needs(a) {
                    let av = val(a);
                    let c = av.cols();
                    let mut out = vec![0.0; av.len()];
                    for r in 0..av.rows() {
                        let norm = node.value.data()[r];
                        // subgradient 0 at the origin
                        if norm > 0.0 {
                            for j in 0..c {
                                out[r * c + j] = g[r] * av.row(r)[j] / norm;
                            }
                        }
                    }
                    accumulate(grads, *a, &out);
                }
            }
            Op::Transpose(a) => {
                if needs(a) {
                    let (r, c) = (node.value.rows(), node.value.cols());
                    let mut out = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            out[j * r + i] = g[i * c + j];
                        }
                    }
                    accumulate(grads, *a, &out);
                }
            }
            Op::Reshape(a) => {
                if needs(a) {
                    accumulate(grads, *a, g);
                }
            }
        }
    }
}

fn segment_counts(segment: &[Option<usize>], n_segments: usize) -> Vec<usize> {
    let mut counts = vec![0usize; n_segments];
    for s in segment.iter().flatten() {
        counts[*s] += 1;
    }
    counts
}
