//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied during a forward pass as a
//! node holding its output value. [`Graph::backward`] then walks the tape in
//! reverse, accumulating gradients into every node that depends on a
//! trainable leaf. A graph supports exactly one backward pass.

use rayon::prelude::*;

use super::tensor::{gemm, Mat, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// How multiple positives are combined inside the contrastive loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// `-log( Σ_{p∈P} e^{l_p} / Σ_{j≠i} e^{l_j} )`: positives summed inside one log.
    #[default]
    SumOut,
    /// `-(1/|P|) Σ_{p∈P} log( e^{l_p} / Σ_{j≠i} e^{l_j} )`.
    MeanOfLogs,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Relu(Var),
    AvgPool { x: Var, factor: usize },
    GlobalAvgPool(Var),
    Conv1d { x: Var, w: Var, stride: usize, pad: usize },
    Norm { x: Var, gamma: Var, beta: Var, mean: Vec<T>, rstd: Vec<T> },
    Linear { x: Var, w: Var, b: Var },
    CosineRows { a: Var, b: Var },
    Contrastive { z: Var, coef: Vec<T>, normed: Vec<T>, norms: Vec<T> },
    CrossEntropy { logits: Var, probs: Vec<T>, labels: Vec<usize> },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(msg: String) -> Error {
    Error::ShapeMismatch(msg)
}

fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Unfold one example `[c_in, len]` into `[c_in·kernel, out_len]` columns.
fn im2col<T: Scalar>(x: &[T], c_in: usize, len: usize, kernel: usize, stride: usize, pad: usize, out_len: usize, cols: &mut [T]) {
    for c in 0..c_in {
        let row = &x[c * len..(c + 1) * len];
        for k in 0..kernel {
            let dst = &mut cols[(c * kernel + k) * out_len..(c * kernel + k + 1) * out_len];
            for (l, d) in dst.iter_mut().enumerate() {
                let pos = (l * stride + k) as isize - pad as isize;
                *d = if pos >= 0 && (pos as usize) < len { row[pos as usize] } else { T::zero() };
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], c_in: usize, len: usize, kernel: usize, stride: usize, pad: usize, out_len: usize, dx: &mut [T]) {
    for c in 0..c_in {
        let row = &mut dx[c * len..(c + 1) * len];
        for k in 0..kernel {
            let src = &cols[(c * kernel + k) * out_len..(c * kernel + k + 1) * out_len];
            for (l, &v) in src.iter().enumerate() {
                let pos = (l * stride + k) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < len {
                    row[pos as usize] = row[pos as usize] + v;
                }
            }
        }
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; no gradient is tracked for it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Trainable leaf; its gradient is available after [`backward`](Self::backward).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value, grad: None, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient, if `v` was reached by the backward pass.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Gradient of `v`, with unreached nodes reported as all zeros.
    pub fn grad_or_zero(&self, v: Var) -> Vec<T> {
        match self.grad(v) {
            Some(g) => g.to_vec(),
            None => vec![T::zero(); self.nodes[v.0].value.len()],
        }
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(out, Op::Add(a, b), "add", &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(out, Op::Mul(a, b), "mul", &[a, b])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum", &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(out, Op::Relu(a), "relu", &[a])
    }

    /// Non-overlapping mean pooling over the last axis of `[batch, channels, len]`;
    /// a trailing remainder shorter than `factor` is discarded.
    pub fn avg_pool(&mut self, x: Var, factor: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || factor == 0 || shape[2] < factor {
            return Err(shape_err(format!("avg_pool factor {factor} on {shape:?}")));
        }
        if factor == 1 {
            let out = self.value(x).clone();
            return self.push(out, Op::AvgPool { x, factor }, "avg_pool", &[x]);
        }
        let (rows, len) = (shape[0] * shape[1], shape[2]);
        let out_len = len / factor;
        let inv = T::of(1.0 / factor as f64);
        let src = self.value(x).data();
        let mut data = vec![T::zero(); rows * out_len];
        data.par_chunks_mut(out_len).enumerate().for_each(|(r, dst)| {
            let row = &src[r * len..(r + 1) * len];
            for (j, d) in dst.iter_mut().enumerate() {
                *d = row[j * factor..(j + 1) * factor].iter().copied().sum::<T>() * inv;
            }
        });
        let out = Tensor::new(vec![shape[0], shape[1], out_len], data)?;
        self.push(out, Op::AvgPool { x, factor }, "avg_pool", &[x])
    }

    /// Mean over the time axis: `[batch, channels, len] -> [batch, channels]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || shape[2] == 0 {
            return Err(shape_err(format!("global_avg_pool on {shape:?}")));
        }
        let len = shape[2];
        let inv = T::of(1.0 / len as f64);
        let data = self.value(x).data().chunks(len).map(|r| r.iter().copied().sum::<T>() * inv).collect();
        let out = Tensor::new(vec![shape[0], shape[1]], data)?;
        self.push(out, Op::GlobalAvgPool(x), "global_avg_pool", &[x])
    }

    /// 1-D cross-correlation. `x: [batch, c_in, len]`, `w: [c_out, c_in, kernel]`.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] {
            return Err(shape_err(format!("conv1d input {xs:?} with kernel {ws:?}")));
        }
        let (batch, c_in, len) = (xs[0], xs[1], xs[2]);
        let (c_out, kernel) = (ws[0], ws[2]);
        let out_len = conv_out_len(len, kernel, stride, pad)
            .ok_or_else(|| shape_err(format!("conv1d kernel {kernel} stride {stride} pad {pad} on length {len}")))?;
        let ck = c_in * kernel;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut data = vec![T::zero(); batch * c_out * out_len];
        data.par_chunks_mut(c_out * out_len).enumerate().for_each(|(n, dst)| {
            let mut cols = vec![T::zero(); ck * out_len];
            im2col(&xv[n * c_in * len..(n + 1) * c_in * len], c_in, len, kernel, stride, pad, out_len, &mut cols);
            gemm(Mat::new(wv, c_out, ck), Mat::new(&cols, ck, out_len), dst, false);
        });
        let out = Tensor::new(vec![batch, c_out, out_len], data)?;
        self.push(out, Op::Conv1d { x, w, stride, pad }, "conv1d", &[x, w])
    }

    /// Per-example normalisation over all channels and time steps of
    /// `[batch, channels, len]`, followed by a per-channel affine map.
    pub fn norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || self.shape(gamma) != [xs[1]] || self.shape(beta) != [xs[1]] {
            return Err(shape_err(format!(
                "norm input {xs:?} with gamma {:?} beta {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let (batch, chans, len) = (xs[0], xs[1], xs[2]);
        let per = chans * len;
        let xv = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut mean = vec![T::zero(); batch];
        let mut rstd = vec![T::zero(); batch];
        let mut data = vec![T::zero(); batch * per];
        data.par_chunks_mut(per)
            .zip(mean.par_iter_mut().zip(rstd.par_iter_mut()))
            .enumerate()
            .for_each(|(n, (dst, (mu_out, rs_out)))| {
                let src = &xv[n * per..(n + 1) * per];
                let mu = src.iter().map(|v| v.as_f64()).sum::<f64>() / per as f64;
                let var = src.iter().map(|v| (v.as_f64() - mu).powi(2)).sum::<f64>() / per as f64;
                let rs = 1.0 / (var + EPS).sqrt();
                let (mu_t, rs_t) = (T::of(mu), T::of(rs));
                for c in 0..chans {
                    for l in 0..len {
                        let i = c * len + l;
                        dst[i] = g[c] * (src[i] - mu_t) * rs_t + b[c];
                    }
                }
                *mu_out = mu_t;
                *rs_out = rs_t;
            });
        let out = Tensor::new(xs.clone(), data)?;
        self.push(out, Op::Norm { x, gamma, beta, mean, rstd }, "norm", &[x, gamma, beta])
    }

    /// Affine map `x · w + b` with `x: [batch, d_in]`, `w: [d_in, d_out]`, `b: [d_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x).to_vec(), self.shape(w).to_vec(), self.shape(b).to_vec());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
            return Err(shape_err(format!("linear input {xs:?} weight {ws:?} bias {bs:?}")));
        }
        let (batch, d_in, d_out) = (xs[0], xs[1], ws[1]);
        let bv = self.value(b).data();
        let mut data: Vec<T> = (0..batch).flat_map(|_| bv.iter().copied()).collect();
        gemm(Mat::new(self.value(x).data(), batch, d_in), Mat::new(self.value(w).data(), d_in, d_out), &mut data, true);
        let out = Tensor::new(vec![batch, d_out], data)?;
        self.push(out, Op::Linear { x, w, b }, "linear", &[x, w, b])
    }

    /// Row-wise cosine similarity of two `[n, d]` matrices, giving `[n]`.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "cosine_rows")?;
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 {
            return Err(shape_err(format!("cosine_rows on {shape:?}")));
        }
        let d = shape[1];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(shape[0]);
        for (ra, rb) in av.chunks(d).zip(bv.chunks(d)) {
            let na = ra.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
            let nb = rb.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return Err(Error::ZeroVector);
            }
            let dot: f64 = ra.iter().zip(rb).map(|(x, y)| x.as_f64() * y.as_f64()).sum();
            data.push(T::of(dot / (na * nb)));
        }
        let out = Tensor::new(vec![shape[0]], data)?;
        self.push(out, Op::CosineRows { a, b }, "cosine_rows", &[a, b])
    }

    /// Contrastive loss over the rows of `z: [n, d]`, averaged over rows.
    ///
    /// `mask` is a row-major `n × n` positive indicator. Callers are
    /// responsible for its structural validity (symmetric, zero diagonal,
    /// at least one positive per row).
    pub fn contrastive(&mut self, z: Var, mask: &[bool], temperature: f64, variant: LossVariant) -> Result<Var> {
        let shape = self.shape(z).to_vec();
        if shape.len() != 2 || mask.len() != shape[0] * shape[0] {
            return Err(shape_err(format!("contrastive embeddings {shape:?} with mask of {} entries", mask.len())));
        }
        let (n, d) = (shape[0], shape[1]);
        let zv = self.value(z).data();
        let mut norms = Vec::with_capacity(n);
        let mut normed = Vec::with_capacity(n * d);
        for row in zv.chunks(d) {
            let nrm = row.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
            if nrm == 0.0 {
                return Err(Error::ZeroVector);
            }
            norms.push(T::of(nrm));
            normed.extend(row.iter().map(|v| T::of(v.as_f64() / nrm)));
        }
        let mut sim = vec![T::zero(); n * n];
        gemm(Mat::new(&normed, n, d), Mat::t(&normed, n, d), &mut sim, false);

        let inv_t = 1.0 / temperature;
        let scale = 1.0 / n as f64;
        let mut total = 0.0f64;
        // g[i][j] = dL/ds_ij
        let mut g = vec![0.0f64; n * n];
        let mut logits = vec![0.0f64; n];
        for i in 0..n {
            let row_mask = &mask[i * n..(i + 1) * n];
            let mut max = f64::NEG_INFINITY;
            for j in 0..n {
                if j != i {
                    logits[j] = sim[i * n + j].as_f64() * inv_t;
                    max = max.max(logits[j]);
                }
            }
            let mut denom = 0.0;
            let mut pos = 0.0;
            let mut n_pos = 0usize;
            for j in (0..n).filter(|&j| j != i) {
                let e = (logits[j] - max).exp();
                denom += e;
                if row_mask[j] {
                    pos += e;
                    n_pos += 1;
                }
            }
            if n_pos == 0 {
                return Err(Error::NoPositive(i));
            }
            let log_denom = denom.ln();
            let grow = &mut g[i * n..(i + 1) * n];
            match variant {
                LossVariant::SumOut => {
                    total += log_denom - pos.ln();
                    for j in (0..n).filter(|&j| j != i) {
                        let e = (logits[j] - max).exp();
                        let p = if row_mask[j] { e / pos } else { 0.0 };
                        grow[j] = (e / denom - p) * inv_t * scale;
                    }
                }
                LossVariant::MeanOfLogs => {
                    let k = n_pos as f64;
                    let mut acc = 0.0;
                    for j in (0..n).filter(|&j| j != i) {
                        let e = (logits[j] - max).exp();
                        let indicator = if row_mask[j] {
                            acc += logits[j] - max - log_denom;
                            1.0 / k
                        } else {
                            0.0
                        };
                        grow[j] = (e / denom - indicator) * inv_t * scale;
                    }
                    total -= acc / k;
                }
            }
        }
        let mut coef = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                coef[i * n + j] = T::of(g[i * n + j] + g[j * n + i]);
            }
        }
        let out = Tensor::scalar(T::of(total * scale));
        self.push(out, Op::Contrastive { z, coef, normed, norms }, "contrastive", &[z])
    }

    /// Mean softmax cross-entropy of `logits: [batch, classes]` against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() || shape[0] == 0 {
            return Err(shape_err(format!("cross_entropy logits {shape:?} with {} labels", labels.len())));
        }
        let classes = shape[1];
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let lv = self.value(logits).data();
        let mut probs = Vec::with_capacity(lv.len());
        let mut total = 0.0f64;
        for (row, &label) in lv.chunks(classes).zip(labels) {
            let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
            total += denom.ln() - (row[label].as_f64() - max);
            probs.extend(row.iter().map(|v| T::of((v.as_f64() - max).exp() / denom)));
        }
        let out = Tensor::scalar(T::of(total / labels.len() as f64));
        self.push(out, Op::CrossEntropy { logits, probs, labels: labels.to_vec() }, "cross_entropy", &[logits])
    }

    /// Populate gradients of `loss` with respect to every node that depends
    /// on a trainable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphReused);
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::NotScalar(self.nodes[loss.0].value.shape().to_vec()));
        }
        self.consumed = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(grad) = self.nodes[i].grad.take() else { continue };
            let contributions = self.local_grads(i, &grad)?;
            self.nodes[i].grad = Some(grad);
            for (parent, g) in contributions {
                let node = &mut self.nodes[parent.0];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn local_grads(&self, i: usize, grad: &[T]) -> Result<Vec<(Var, Vec<T>)>> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &p in [a, b] {
                    if self.wants(p) {
                        out.push((p, grad.to_vec()));
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    out.push((*a, grad.iter().zip(vb).map(|(&g, &y)| g * y).collect()));
                }
                if self.wants(*b) {
                    out.push((*b, grad.iter().zip(va).map(|(&g, &x)| g * x).collect()));
                }
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    out.push((*a, vec![grad[0]; self.value(*a).len()]));
                }
            }
            Op::Relu(a) => {
                if self.wants(*a) {
                    let va = self.value(*a).data();
                    out.push((*a, grad.iter().zip(va).map(|(&g, &x)| if x > T::zero() { g } else { T::zero() }).collect()));
                }
            }
            Op::AvgPool { x, factor } => {
                if self.wants(*x) {
                    let xs = self.shape(*x);
                    let (rows, len) = (xs[0] * xs[1], xs[2]);
                    let out_len = len / factor;
                    let inv = T::of(1.0 / *factor as f64);
                    let mut dx = vec![T::zero(); rows * len];
                    for r in 0..rows {
                        for j in 0..out_len {
                            let g = grad[r * out_len + j] * inv;
                            dx[r * len + j * factor..r * len + (j + 1) * factor].iter_mut().for_each(|d| *d = g);
                        }
                    }
                    out.push((*x, dx));
                }
            }
            Op::GlobalAvgPool(x) => {
                if self.wants(*x) {
                    let len = self.shape(*x)[2];
                    let inv = T::of(1.0 / len as f64);
                    let dx = grad.iter().flat_map(|&g| std::iter::repeat(g * inv).take(len)).collect();
                    out.push((*x, dx));
                }
            }
            Op::Conv1d { x, w, stride, pad } => {
                let (stride, pad) = (*stride, *pad);
                let xs = self.shape(*x).to_vec();
                let ws = self.shape(*w).to_vec();
                let (batch, c_in, len) = (xs[0], xs[1], xs[2]);
                let (c_out, kernel) = (ws[0], ws[2]);
                let out_len = node.value.shape()[2];
                let ck = c_in * kernel;
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                if self.wants(*w) {
                    let partials: Vec<Vec<T>> = (0..batch)
                        .into_par_iter()
                        .map(|n| {
                            let mut cols = vec![T::zero(); ck * out_len];
                            im2col(&xv[n * c_in * len..(n + 1) * c_in * len], c_in, len, kernel, stride, pad, out_len, &mut cols);
                            let dy = &grad[n * c_out * out_len..(n + 1) * c_out * out_len];
                            let mut dw = vec![T::zero(); c_out * ck];
                            gemm(Mat::new(dy, c_out, out_len), Mat::t(&cols, ck, out_len), &mut dw, false);
                            dw
                        })
                        .collect();
                    let mut dw = vec![T::zero(); c_out * ck];
                    for p in &partials {
                        dw.iter_mut().zip(p).for_each(|(a, &b)| *a = *a + b);
                    }
                    out.push((*w, dw));
                }
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); batch * c_in * len];
                    dx.par_chunks_mut(c_in * len).enumerate().for_each(|(n, dxn)| {
                        let dy = &grad[n * c_out * out_len..(n + 1) * c_out * out_len];
                        let mut dcols = vec![T::zero(); ck * out_len];
                        gemm(Mat::t(wv, c_out, ck), Mat::new(dy, c_out, out_len), &mut dcols, false);
                        col2im(&dcols, c_in, len, kernel, stride, pad, out_len, dxn);
                    });
                    out.push((*x, dx));
                }
            }
            Op::Norm { x, gamma, beta, mean, rstd } => {
                let xs = self.shape(*x);
                let (batch, chans, len) = (xs[0], xs[1], xs[2]);
                let per = chans * len;
                let xv = self.value(*x).data();
                let gv = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); chans];
                let mut dbeta = vec![T::zero(); chans];
                let mut dx = if self.wants(*x) { vec![T::zero(); batch * per] } else { Vec::new() };
                for n in 0..batch {
                    let src = &xv[n * per..(n + 1) * per];
                    let dy = &grad[n * per..(n + 1) * per];
                    let (mu, rs) = (mean[n], rstd[n]);
                    let mut sum_dxhat = 0.0f64;
                    let mut sum_dxhat_xhat = 0.0f64;
                    for c in 0..chans {
                        for l in 0..len {
                            let k = c * len + l;
                            let xhat = (src[k] - mu) * rs;
                            dgamma[c] = dgamma[c] + dy[k] * xhat;
                            dbeta[c] = dbeta[c] + dy[k];
                            let dxhat = (dy[k] * gv[c]).as_f64();
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat.as_f64();
                        }
                    }
                    if !dx.is_empty() {
                        let m1 = sum_dxhat / per as f64;
                        let m2 = sum_dxhat_xhat / per as f64;
                        let rs64 = rs.as_f64();
                        for c in 0..chans {
                            for l in 0..len {
                                let k = c * len + l;
                                let xhat = ((src[k] - mu) * rs).as_f64();
                                let dxhat = (dy[k] * gv[c]).as_f64();
                                dx[n * per + k] = T::of(rs64 * (dxhat - m1 - xhat * m2));
                            }
                        }
                    }
                }
                if !dx.is_empty() {
                    out.push((*x, dx));
                }
                if self.wants(*gamma) {
                    out.push((*gamma, dgamma));
                }
                if self.wants(*beta) {
                    out.push((*beta, dbeta));
                }
            }
            Op::Linear { x, w, b } => {
                let (batch, d_in) = (self.shape(*x)[0], self.shape(*x)[1]);
                let d_out = self.shape(*w)[1];
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); batch * d_in];
                    gemm(Mat::new(grad, batch, d_out), Mat::t(self.value(*w).data(), d_in, d_out), &mut dx, false);
                    out.push((*x, dx));
                }
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); d_in * d_out];
                    gemm(Mat::t(self.value(*x).data(), batch, d_in), Mat::new(grad, batch, d_out), &mut dw, false);
                    out.push((*w, dw));
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); d_out];
                    for row in grad.chunks(d_out) {
                        db.iter_mut().zip(row).for_each(|(a, &g)| *a = *a + g);
                    }
                    out.push((*b, db));
                }
            }
            Op::CosineRows { a, b } => {
                let d = self.shape(*a)[1];
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let mut da = vec![T::zero(); av.len()];
                let mut db = vec![T::zero(); bv.len()];
                for (r, (ra, rb)) in av.chunks(d).zip(bv.chunks(d)).enumerate() {
                    let na = ra.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
                    let nb = rb.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
                    let s = node.value.data()[r].as_f64();
                    let g = grad[r].as_f64();
                    for k in 0..d {
                        let (x, y) = (ra[k].as_f64(), rb[k].as_f64());
                        da[r * d + k] = T::of(g * (y / (na * nb) - s * x / (na * na)));
                        db[r * d + k] = T::of(g * (x / (na * nb) - s * y / (nb * nb)));
                    }
                }
                if self.wants(*a) {
                    out.push((*a, da));
                }
                if self.wants(*b) {
                    out.push((*b, db));
                }
            }
            Op::Contrastive { z, coef, normed, norms } => {
                if self.wants(*z) {
                    let (n, d) = (self.shape(*z)[0], self.shape(*z)[1]);
                    let mut dn = vec![T::zero(); n * d];
                    gemm(Mat::new(coef, n, n), Mat::new(normed, n, d), &mut dn, false);
                    let g = grad[0];
                    let mut dz = vec![T::zero(); n * d];
                    for k in 0..n {
                        let nk = &normed[k * d..(k + 1) * d];
                        let dk = &dn[k * d..(k + 1) * d];
                        let proj: T = nk.iter().zip(dk).map(|(&a, &b)| a * b).sum();
                        let inv = g / norms[k];
                        for c in 0..d {
                            dz[k * d + c] = (dk[c] - nk[c] * proj) * inv;
                        }
                    }
                    out.push((*z, dz));
                }
            }
            Op::CrossEntropy { logits, probs, labels } => {
                if self.wants(*logits) {
                    let classes = self.shape(*logits)[1];
                    let scale = grad[0] / T::of(labels.len() as f64);
                    let mut dl = probs.clone();
                    for (r, &label) in labels.iter().enumerate() {
                        dl[r * classes + label] = dl[r * classes + label] - T::one();
                    }
                    dl.iter_mut().for_each(|v| *v = *v * scale);
                    out.push((*logits, dl));
                }
            }
        }
        Ok(out)
    }
}
