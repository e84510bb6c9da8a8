//! Recorded-operation graph with reverse-mode gradients.
//!
//! A `Tape` owns every tensor produced during a forward pass. Operations
//! record their inputs and whatever forward state the backward rule needs,
//! and `backward` replays the record in reverse, accumulating gradients into
//! each node. Values are immutable once written; one optimization step owns
//! one tape.

use super::kernels;
use super::{Scalar, Tensor};
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

impl TensorId {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<S: Scalar> {
    Leaf,
    MatMul { a: TensorId, b: TensorId },
    Transpose { a: TensorId },
    Add { a: TensorId, b: TensorId },
    AddRow { a: TensorId, bias: TensorId },
    Mul { a: TensorId, b: TensorId },
    Div { a: TensorId, b: TensorId },
    Scale { a: TensorId, c: S },
    AddConst { a: TensorId },
    Relu { a: TensorId },
    Gelu { a: TensorId },
    Tanh { a: TensorId },
    Sigmoid { a: TensorId },
    SoftmaxRows { a: TensorId },
    LayerNorm { a: TensorId, gamma: TensorId, beta: TensorId, xhat: Vec<S>, inv_std: Vec<S> },
    GatherRows { a: TensorId, idx: Vec<u32> },
    SliceCols { a: TensorId, start: usize },
    ConcatCols { parts: Vec<TensorId> },
    SumAll { a: TensorId },
    MeanAll { a: TensorId },
    CrossEntropyRows { logits: TensorId, targets: Vec<u32>, probs: Vec<S> },
    CosineRows { a: TensorId, b: TensorId, eps: S },
    Bce { score: TensorId, label: u8 },
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    grad: Option<Vec<S>>,
    requires_grad: bool,
    op: Op<S>,
}

/// Dynamically recorded operation graph.
pub struct Tape<S: Scalar = f32> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, requires_grad: bool, op: Op<S>) -> TensorId {
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        TensorId(self.nodes.len() - 1)
    }

    fn requires(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn value(&self, id: TensorId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: TensorId) -> Option<&[S]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Registers a tensor as a graph input, keeping its `requires_grad` flag.
    pub fn leaf(&mut self, t: Tensor<S>) -> TensorId {
        let req = t.requires_grad();
        self.push(t, req, Op::Leaf)
    }

    /// Registers a non-differentiable input.
    pub fn constant(&mut self, t: Tensor<S>) -> TensorId {
        self.push(t, false, Op::Leaf)
    }

    /// Registers a trainable input.
    pub fn param(&mut self, t: Tensor<S>) -> TensorId {
        self.push(t.with_requires_grad(), true, Op::Leaf)
    }

    pub fn scalar_constant(&mut self, v: S) -> TensorId {
        self.constant(Tensor::scalar(v))
    }

    // ── forward ops ─────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, ka) = self.value(a).rows_cols();
        let (kb, n) = self.value(b).rows_cols();
        if ka != kb {
            return Err(Error::Shape(format!(
                "matmul inner dims {} vs {}",
                ka, kb
            )));
        }
        let mut out = vec![S::zero(); m * n];
        kernels::matmul_nn(self.value(a).data(), self.value(b).data(), m, ka, n, &mut out);
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, req, Op::MatMul { a, b }))
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        let (m, n) = self.value(a).rows_cols();
        let src = self.value(a).data();
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let req = self.requires(a);
        Ok(self.push(Tensor::new(vec![n, m], out)?, req, Op::Transpose { a }))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise_binary(a, b, "add")
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise_binary(a, b, "mul")
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise_binary(a, b, "div")
    }

    fn elementwise_binary(&mut self, a: TensorId, b: TensorId, what: &str) -> Result<TensorId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "{} on shapes {:?} vs {:?}",
                what,
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let out: Vec<S> = match what {
            "add" => da.iter().zip(db).map(|(&x, &y)| x + y).collect(),
            "mul" => da.iter().zip(db).map(|(&x, &y)| x * y).collect(),
            _ => da.iter().zip(db).map(|(&x, &y)| x / y).collect(),
        };
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a) || self.requires(b);
        let op = match what {
            "add" => Op::Add { a, b },
            "mul" => Op::Mul { a, b },
            _ => Op::Div { a, b },
        };
        Ok(self.push(Tensor::new(shape, out)?, req, op))
    }

    /// `[m,n] + [n]` row-broadcast bias add.
    pub fn add_row(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId> {
        let (m, n) = self.value(a).rows_cols();
        if self.value(bias).numel() != n {
            return Err(Error::Shape(format!(
                "bias of {} elements against {} columns",
                self.value(bias).numel(),
                n
            )));
        }
        let da = self.value(a).data();
        let dbias = self.value(bias).data();
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = da[i * n + j] + dbias[j];
            }
        }
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a) || self.requires(bias);
        Ok(self.push(Tensor::new(shape, out)?, req, Op::AddRow { a, bias }))
    }

    pub fn scale(&mut self, a: TensorId, c: S) -> Result<TensorId> {
        let out: Vec<S> = self.value(a).data().iter().map(|&x| x * c).collect();
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a);
        Ok(self.push(Tensor::new(shape, out)?, req, Op::Scale { a, c }))
    }

    pub fn add_const(&mut self, a: TensorId, c: S) -> Result<TensorId> {
        let out: Vec<S> = self.value(a).data().iter().map(|&x| x + c).collect();
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a);
        Ok(self.push(Tensor::new(shape, out)?, req, Op::AddConst { a }))
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        let out: Vec<S> = self.value(a).data().iter().map(|&x| x.max(S::zero())).collect();
        self.unary(a, out, Op::Relu { a })
    }

    pub fn gelu(&mut self, a: TensorId) -> Result<TensorId> {
        let out: Vec<S> = self.value(a).data().iter().map(|&x| gelu_val(x)).collect();
        self.unary(a, out, Op::Gelu { a })
    }

    pub fn tanh(&mut self, a: TensorId) -> Result<TensorId> {
        let out: Vec<S> = self.value(a).data().iter().map(|&x| x.tanh()).collect();
        self.unary(a, out, Op::Tanh { a })
    }

    pub fn sigmoid(&mut self, a: TensorId) -> Result<TensorId> {
        let one = S::one();
        let out: Vec<S> =
            self.value(a).data().iter().map(|&x| one / (one + (-x).exp())).collect();
        self.unary(a, out, Op::Sigmoid { a })
    }

    fn unary(&mut self, a: TensorId, out: Vec<S>, op: Op<S>) -> Result<TensorId> {
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a);
        Ok(self.push(Tensor::new(shape, out)?, req, op))
    }

    /// Row-wise softmax over the last dimension.
    pub fn softmax_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let (m, n) = self.value(a).rows_cols();
        if n == 0 {
            return Err(Error::Shape("softmax over zero columns".into()));
        }
        let src = self.value(a).data();
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            softmax_row(&src[i * n..(i + 1) * n], &mut out[i * n..(i + 1) * n]);
        }
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a);
        Ok(self.push(Tensor::new(shape, out)?, req, Op::SoftmaxRows { a }))
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(
        &mut self,
        a: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> Result<TensorId> {
        let (m, n) = self.value(a).rows_cols();
        if self.value(gamma).numel() != n || self.value(beta).numel() != n {
            return Err(Error::Shape(format!(
                "layer_norm gain/bias must have {} elements",
                n
            )));
        }
        let eps = S::from_f64(eps);
        let src = self.value(a).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let inv_n = S::one() / S::from_f64(n as f64);
        let mut out = vec![S::zero(); m * n];
        let mut xhat = vec![S::zero(); m * n];
        let mut inv_std = vec![S::zero(); m];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().copied().sum::<S>() * inv_n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() * inv_n;
            let is = S::one() / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let xh = (row[j] - mean) * is;
                xhat[i * n + j] = xh;
                out[i * n + j] = xh * g[j] + b[j];
            }
        }
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a) || self.requires(gamma) || self.requires(beta);
        Ok(self.push(
            Tensor::new(shape, out)?,
            req,
            Op::LayerNorm { a, gamma, beta, xhat, inv_std },
        ))
    }

    /// Selects rows of `a` by index; also serves as embedding lookup.
    pub fn gather_rows(&mut self, a: TensorId, idx: &[u32]) -> Result<TensorId> {
        let (m, n) = self.value(a).rows_cols();
        for &i in idx {
            if i as usize >= m {
                return Err(Error::Index(format!("row {} out of {} rows", i, m)));
            }
        }
        let src = self.value(a).data();
        let mut out = vec![S::zero(); idx.len() * n];
        for (r, &i) in idx.iter().enumerate() {
            out[r * n..(r + 1) * n].copy_from_slice(&src[i as usize * n..(i as usize + 1) * n]);
        }
        let req = self.requires(a);
        Ok(self.push(
            Tensor::new(vec![idx.len(), n], out)?,
            req,
            Op::GatherRows { a, idx: idx.to_vec() },
        ))
    }

    pub fn slice_cols(&mut self, a: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let (m, n) = self.value(a).rows_cols();
        if start + len > n {
            return Err(Error::Index(format!(
                "column slice {}..{} out of {} columns",
                start,
                start + len,
                n
            )));
        }
        let src = self.value(a).data();
        let mut out = vec![S::zero(); m * len];
        for i in 0..m {
            out[i * len..(i + 1) * len]
                .copy_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let req = self.requires(a);
        Ok(self.push(Tensor::new(vec![m, len], out)?, req, Op::SliceCols { a, start }))
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let m = self.value(parts[0]).rows_cols().0;
        let mut total = 0usize;
        for &p in parts {
            let (mp, np) = self.value(p).rows_cols();
            if mp != m {
                return Err(Error::Shape(format!("concat rows {} vs {}", mp, m)));
            }
            total += np;
        }
        let mut out = vec![S::zero(); m * total];
        let mut offset = 0usize;
        for &p in parts {
            let (_, np) = self.value(p).rows_cols();
            let src = self.value(p).data();
            for i in 0..m {
                out[i * total + offset..i * total + offset + np]
                    .copy_from_slice(&src[i * np..(i + 1) * np]);
            }
            offset += np;
        }
        let req = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            Tensor::new(vec![m, total], out)?,
            req,
            Op::ConcatCols { parts: parts.to_vec() },
        ))
    }

    pub fn sum_all(&mut self, a: TensorId) -> Result<TensorId> {
        let s: S = self.value(a).data().iter().copied().sum();
        let req = self.requires(a);
        Ok(self.push(Tensor::scalar(s), req, Op::SumAll { a }))
    }

    pub fn mean_all(&mut self, a: TensorId) -> Result<TensorId> {
        let numel = self.value(a).numel();
        if numel == 0 {
            return Err(Error::Shape("mean of empty tensor".into()));
        }
        let s: S = self.value(a).data().iter().copied().sum();
        let v = s / S::from_f64(numel as f64);
        let req = self.requires(a);
        Ok(self.push(Tensor::scalar(v), req, Op::MeanAll { a }))
    }

    /// Per-row `−log softmax(logits)[target]`, the loss primitive shared by
    /// every classification head.
    pub fn cross_entropy_rows(&mut self, logits: TensorId, targets: &[u32]) -> Result<TensorId> {
        let (m, n) = self.value(logits).rows_cols();
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "cross entropy needs at least 2 classes, got {}",
                n
            )));
        }
        if targets.len() != m {
            return Err(Error::Shape(format!(
                "{} targets for {} rows",
                targets.len(),
                m
            )));
        }
        for &t in targets {
            if t as usize >= n {
                return Err(Error::Index(format!("target {} out of {} classes", t, n)));
            }
        }
        let src = self.value(logits).data();
        let mut probs = vec![S::zero(); m * n];
        let mut out = vec![S::zero(); m];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let prow = &mut probs[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let mut denom = S::zero();
            for j in 0..n {
                let e = (row[j] - max).exp();
                prow[j] = e;
                denom = denom + e;
            }
            for p in prow.iter_mut() {
                *p = *p / denom;
            }
            let lse = max + denom.ln();
            out[i] = lse - row[targets[i] as usize];
        }
        let req = self.requires(logits);
        Ok(self.push(
            Tensor::new(vec![m], out)?,
            req,
            Op::CrossEntropyRows { logits, targets: targets.to_vec(), probs },
        ))
    }

    /// Per-row cosine similarity `a·b / max(‖a‖‖b‖, eps)`.
    pub fn cosine_rows(&mut self, a: TensorId, b: TensorId, eps: f64) -> Result<TensorId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "cosine on shapes {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let (m, n) = self.value(a).rows_cols();
        if n == 0 {
            return Err(Error::Shape("cosine of zero-length vectors".into()));
        }
        let eps = S::from_f64(eps);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![S::zero(); m];
        for i in 0..m {
            let ra = &da[i * n..(i + 1) * n];
            let rb = &db[i * n..(i + 1) * n];
            let (dot, na2, nb2) = dot_norms(ra, rb);
            let denom = (na2.sqrt() * nb2.sqrt()).max(eps);
            out[i] = dot / denom;
        }
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::new(vec![m], out)?, req, Op::CosineRows { a, b, eps }))
    }

    /// Binary cross-entropy on a probability clamped into `[1e−7, 1−1e−7]`.
    pub fn bce(&mut self, score: TensorId, label: u8) -> Result<TensorId> {
        if self.value(score).numel() != 1 {
            return Err(Error::Shape("bce expects a single score".into()));
        }
        if label > 1 {
            return Err(Error::InvalidArgument(format!("binary label {}", label)));
        }
        let g = clamp_prob(self.value(score).data()[0]);
        let one = S::one();
        let loss = if label == 1 { -(g.ln()) } else { -((one - g).ln()) };
        let req = self.requires(score);
        Ok(self.push(Tensor::scalar(loss), req, Op::Bce { score, label }))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Accumulates `d loss / d node` into every node that requires a
    /// gradient. `loss` must be a finite scalar.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward from tensor of {} elements",
                lt.numel()
            )));
        }
        let lv = lt.data()[0];
        if !lv.is_finite() {
            return Err(Error::NonFinite(format!("loss value {}", lv)));
        }
        self.accumulate(loss, &[S::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let up = self.nodes[i].grad.take().unwrap();
            self.step_back(i, &up);
            self.nodes[i].grad = Some(up);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: TensorId, contrib: &[S]) {
        let node = &mut self.nodes[id.0];
        if !node.requires_grad {
            return;
        }
        match node.grad.as_mut() {
            Some(g) => {
                for (gi, &c) in g.iter_mut().zip(contrib) {
                    *gi = *gi + c;
                }
            }
            None => {
                node.grad = Some(contrib.to_vec());
            }
        }
    }

    fn step_back(&mut self, i: usize, up: &[S]) {
        // Ops only reference earlier nodes, so taking the op apart by value
        // is safe while mutating input grads.
        let one = S::one();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (a, b) = (*a, *b);
                let (m, k) = self.value(a).rows_cols();
                let n = self.value(b).rows_cols().1;
                if self.requires(a) {
                    let mut da = vec![S::zero(); m * k];
                    kernels::matmul_nt(up, self.value(b).data(), m, n, k, &mut da);
                    self.accumulate(a, &da);
                }
                if self.requires(b) {
                    let mut db = vec![S::zero(); k * n];
                    kernels::matmul_tn(self.value(a).data(), up, k, m, n, &mut db);
                    self.accumulate(b, &db);
                }
            }
            Op::Transpose { a } => {
                let a = *a;
                let (m, n) = self.value(a).rows_cols();
                let mut da = vec![S::zero(); m * n];
                for i2 in 0..n {
                    for j in 0..m {
                        da[j * n + i2] = up[i2 * m + j];
                    }
                }
                self.accumulate(a, &da);
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                self.accumulate(a, up);
                self.accumulate(b, up);
            }
            Op::AddRow { a, bias } => {
                let (a, bias) = (*a, *bias);
                let (m, n) = self.value(a).rows_cols();
                self.accumulate(a, up);
                if self.requires(bias) {
                    let mut db = vec![S::zero(); n];
                    for i2 in 0..m {
                        for j in 0..n {
                            db[j] = db[j] + up[i2 * n + j];
                        }
                    }
                    self.accumulate(bias, &db);
                }
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                if self.requires(a) {
                    let da: Vec<S> =
                        up.iter().zip(self.value(b).data()).map(|(&u, &y)| u * y).collect();
                    self.accumulate(a, &da);
                }
                if self.requires(b) {
                    let db: Vec<S> =
                        up.iter().zip(self.value(a).data()).map(|(&u, &x)| u * x).collect();
                    self.accumulate(b, &db);
                }
            }
            Op::Div { a, b } => {
                let (a, b) = (*a, *b);
                if self.requires(a) {
                    let da: Vec<S> =
                        up.iter().zip(self.value(b).data()).map(|(&u, &y)| u / y).collect();
                    self.accumulate(a, &da);
                }
                if self.requires(b) {
                    let db: Vec<S> = up
                        .iter()
                        .zip(self.value(a).data().iter().zip(self.value(b).data()))
                        .map(|(&u, (&x, &y))| -u * x / (y * y))
                        .collect();
                    self.accumulate(b, &db);
                }
            }
            Op::Scale { a, c } => {
                let (a, c) = (*a, *c);
                let da: Vec<S> = up.iter().map(|&u| u * c).collect();
                self.accumulate(a, &da);
            }
            Op::AddConst { a } => {
                let a = *a;
                self.accumulate(a, up);
            }
            Op::Relu { a } => {
                let a = *a;
                let da: Vec<S> = up
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(&u, &x)| if x > S::zero() { u } else { S::zero() })
                    .collect();
                self.accumulate(a, &da);
            }
            Op::Gelu { a } => {
                let a = *a;
                let da: Vec<S> =
                    up.iter().zip(self.value(a).data()).map(|(&u, &x)| u * gelu_grad(x)).collect();
                self.accumulate(a, &da);
            }
            Op::Tanh { a } => {
                let a = *a;
                let da: Vec<S> = up
                    .iter()
                    .zip(self.nodes[i].value.data())
                    .map(|(&u, &y)| u * (one - y * y))
                    .collect();
                self.accumulate(a, &da);
            }
            Op::Sigmoid { a } => {
                let a = *a;
                let da: Vec<S> = up
                    .iter()
                    .zip(self.nodes[i].value.data())
                    .map(|(&u, &y)| u * y * (one - y))
                    .collect();
                self.accumulate(a, &da);
            }
            Op::SoftmaxRows { a } => {
                let a = *a;
                let (m, n) = self.nodes[i].value.rows_cols();
                let y = self.nodes[i].value.data();
                let mut da = vec![S::zero(); m * n];
                for r in 0..m {
                    let yr = &y[r * n..(r + 1) * n];
                    let ur = &up[r * n..(r + 1) * n];
                    let dot: S = yr.iter().zip(ur).map(|(&yv, &uv)| yv * uv).sum();
                    for j in 0..n {
                        da[r * n + j] = yr[j] * (ur[j] - dot);
                    }
                }
                self.accumulate(a, &da);
            }
            Op::LayerNorm { a, gamma, beta, xhat, inv_std } => {
                let (a, gamma, beta) = (*a, *gamma, *beta);
                let (m, n) = self.value(a).rows_cols();
                let inv_n = one / S::from_f64(n as f64);
                let g = self.value(gamma).data().to_vec();
                let xhat = xhat.clone();
                let inv_std = inv_std.clone();
                if self.requires(a) {
                    let mut da = vec![S::zero(); m * n];
                    for r in 0..m {
                        let mut m1 = S::zero();
                        let mut m2 = S::zero();
                        for j in 0..n {
                            let gg = up[r * n + j] * g[j];
                            m1 = m1 + gg;
                            m2 = m2 + gg * xhat[r * n + j];
                        }
                        m1 = m1 * inv_n;
                        m2 = m2 * inv_n;
                        for j in 0..n {
                            let gg = up[r * n + j] * g[j];
                            da[r * n + j] = inv_std[r] * (gg - m1 - xhat[r * n + j] * m2);
                        }
                    }
                    self.accumulate(a, &da);
                }
                if self.requires(gamma) {
                    let mut dg = vec![S::zero(); n];
                    for r in 0..m {
                        for j in 0..n {
                            dg[j] = dg[j] + up[r * n + j] * xhat[r * n + j];
                        }
                    }
                    self.accumulate(gamma, &dg);
                }
                if self.requires(beta) {
                    let mut db = vec![S::zero(); n];
                    for r in 0..m {
                        for j in 0..n {
                            db[j] = db[j] + up[r * n + j];
                        }
                    }
                    self.accumulate(beta, &db);
                }
            }
            Op::GatherRows { a, idx } => {
                let a = *a;
                let idx = idx.clone();
                let (m, n) = self.value(a).rows_cols();
                let mut da = vec![S::zero(); m * n];
                for (r, &src_row) in idx.iter().enumerate() {
                    let base = src_row as usize * n;
                    for j in 0..n {
                        da[base + j] = da[base + j] + up[r * n + j];
                    }
                }
                self.accumulate(a, &da);
            }
            Op::SliceCols { a, start } => {
                let (a, start) = (*a, *start);
                let (m, n) = self.value(a).rows_cols();
                let len = self.nodes[i].value.rows_cols().1;
                let mut da = vec![S::zero(); m * n];
                for r in 0..m {
                    for j in 0..len {
                        da[r * n + start + j] = up[r * len + j];
                    }
                }
                self.accumulate(a, &da);
            }
            Op::ConcatCols { parts } => {
                let parts = parts.clone();
                let total = self.nodes[i].value.rows_cols().1;
                let m = self.nodes[i].value.rows_cols().0;
                let mut offset = 0usize;
                for p in parts {
                    let (_, np) = self.value(p).rows_cols();
                    if self.requires(p) {
                        let mut dp = vec![S::zero(); m * np];
                        for r in 0..m {
                            dp[r * np..(r + 1) * np].copy_from_slice(
                                &up[r * total + offset..r * total + offset + np],
                            );
                        }
                        self.accumulate(p, &dp);
                    }
                    offset += np;
                }
            }
            Op::SumAll { a } => {
                let a = *a;
                let da = vec![up[0]; self.value(a).numel()];
                self.accumulate(a, &da);
            }
            Op::MeanAll { a } => {
                let a = *a;
                let numel = self.value(a).numel();
                let c = up[0] / S::from_f64(numel as f64);
                let da = vec![c; numel];
                self.accumulate(a, &da);
            }
            Op::CrossEntropyRows { logits, targets, probs } => {
                let logits = *logits;
                let targets = targets.clone();
                let probs = probs.clone();
                let (m, n) = self.value(logits).rows_cols();
                let mut da = vec![S::zero(); m * n];
                for r in 0..m {
                    for j in 0..n {
                        let indicator =
                            if j == targets[r] as usize { one } else { S::zero() };
                        da[r * n + j] = up[r] * (probs[r * n + j] - indicator);
                    }
                }
                self.accumulate(logits, &da);
            }
            Op::CosineRows { a, b, eps } => {
                let (a, b, eps) = (*a, *b, *eps);
                let (m, n) = self.value(a).rows_cols();
                let da_src = self.value(a).data().to_vec();
                let db_src = self.value(b).data().to_vec();
                let mut da = vec![S::zero(); m * n];
                let mut db = vec![S::zero(); m * n];
                for r in 0..m {
                    let ra = &da_src[r * n..(r + 1) * n];
                    let rb = &db_src[r * n..(r + 1) * n];
                    let (dot, na2, nb2) = dot_norms(ra, rb);
                    let prod = na2.sqrt() * nb2.sqrt();
                    let u = up[r];
                    if prod > eps {
                        let c = dot / prod;
                        for j in 0..n {
                            da[r * n + j] = u * (rb[j] / prod - c * ra[j] / na2);
                            db[r * n + j] = u * (ra[j] / prod - c * rb[j] / nb2);
                        }
                    } else {
                        // clamped denominator is a constant
                        for j in 0..n {
                            da[r * n + j] = u * rb[j] / eps;
                            db[r * n + j] = u * ra[j] / eps;
                        }
                    }
                }
                if self.requires(a) {
                    self.accumulate(a, &da);
                }
                if self.requires(b) {
                    self.accumulate(b, &db);
                }
            }
            Op::Bce { score, label } => {
                let (score, label) = (*score, *label);
                let g = self.value(score).data()[0];
                let gc = clamp_prob(g);
                let grad = if gc != g {
                    S::zero()
                } else if label == 1 {
                    -(one / gc)
                } else {
                    one / (one - gc)
                };
                self.accumulate(score, &[up[0] * grad]);
            }
        }
    }
}

fn softmax_row<S: Scalar>(row: &[S], out: &mut [S]) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut denom = S::zero();
    for (o, &x) in out.iter_mut().zip(row) {
        let e = (x - max).exp();
        *o = e;
        denom = denom + e;
    }
    for o in out.iter_mut() {
        *o = *o / denom;
    }
}

fn dot_norms<S: Scalar>(a: &[S], b: &[S]) -> (S, S, S) {
    let mut dot = S::zero();
    let mut na2 = S::zero();
    let mut nb2 = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        dot = dot + x * y;
        na2 = na2 + x * x;
        nb2 = nb2 + y * y;
    }
    (dot, na2, nb2)
}

fn clamp_prob<S: Scalar>(g: S) -> S {
    let lo = S::from_f64(1e-7);
    let hi = S::one() - lo;
    g.max(lo).min(hi)
}

const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C1: f64 = 0.044715;

fn gelu_val<S: Scalar>(x: S) -> S {
    let c0 = S::from_f64(GELU_C0);
    let c1 = S::from_f64(GELU_C1);
    let half = S::from_f64(0.5);
    let u = c0 * (x + c1 * x * x * x);
    half * x * (S::one() + u.tanh())
}

fn gelu_grad<S: Scalar>(x: S) -> S {
    let c0 = S::from_f64(GELU_C0);
    let c1 = S::from_f64(GELU_C1);
    let three = S::from_f64(3.0);
    let half = S::from_f64(0.5);
    let u = c0 * (x + c1 * x * x * x);
    let t = u.tanh();
    let sech2 = S::one() - t * t;
    half * (S::one() + t) + half * x * sech2 * c0 * (S::one() + three * c1 * x * x)
}
