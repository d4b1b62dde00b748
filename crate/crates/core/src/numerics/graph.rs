use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{matmul_acc, matmul_at_acc, matmul_bt_acc, NumericsError, Real, Tensor};

/// Additive mask value for disallowed attention positions.
pub const MASK_VALUE: f64 = -1e9;
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<T>,
        count: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Tape of operations. Nodes are appended in evaluation order, so the node
/// list is already a topological order and backward walks it in reverse.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    training: bool,
    rng: ChaCha8Rng,
}

fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

/// `L×L` additive causal mask: 0 on and below the diagonal, [`MASK_VALUE`] above.
pub fn causal_mask<T: Real>(len: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); len * len];
    for i in 0..len {
        for j in i + 1..len {
            data[i * len + j] = T::c(MASK_VALUE);
        }
    }
    Tensor::new(vec![len, len], data).expect("square mask")
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let inner = C * (x + A * x * x * x);
    let t = inner.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (y, dy)
}

fn softmax_row<T: Real>(row: &[T], out: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

impl<T: Real> Graph<T> {
    /// Graph in evaluation mode (dropout is the identity).
    pub fn new() -> Self {
        Self::with_mode(false, 0)
    }

    /// Graph in training mode; dropout masks are drawn from `seed`.
    pub fn training(seed: u64) -> Self {
        Self::with_mode(true, seed)
    }

    fn with_mode(training: bool, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            grad: None,
            requires_grad: true,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            grad: None,
            requires_grad: false,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].grad.take()
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        matmul_acc(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    /// Adds the 1-D tensor `row` to every row of the matrix `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, NumericsError> {
        let (_, cols) = self.value(x).dims2();
        let sr = self.shape(row);
        if self.shape(x).len() != 2 || sr.len() != 1 || sr[0] != cols {
            return Err(shape_err("add_row", self.shape(x), sr));
        }
        let r = self.value(row).data().to_vec();
        let data = self
            .value(x)
            .data()
            .chunks(cols.max(1))
            .flat_map(|chunk| {
                chunk
                    .iter()
                    .zip(&r)
                    .map(|(&a, &b)| a + b)
                    .collect::<Vec<_>>()
            })
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(t, Op::AddRow(x, row), &[x, row]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("mul", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let data = self.value(x).data().iter().map(|&v| v * s).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        self.push(t, Op::Scale(x, s), &[x])
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| T::c(gelu_parts(v.to_f64().unwrap_or(f64::NAN)).0))
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        self.push(t, Op::Gelu(x), &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (rows, cols) = self.value(x).dims2();
        let mut out = vec![T::zero(); rows * cols];
        let src = self.value(x).data();
        for r in 0..rows {
            softmax_row(
                &src[r * cols..(r + 1) * cols],
                &mut out[r * cols..(r + 1) * cols],
            );
        }
        let t = Tensor::new(self.shape(x).to_vec(), out).expect("same shape");
        self.push(t, Op::Softmax(x), &[x])
    }

    /// Row-wise layer normalization with learned scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, NumericsError> {
        let (rows, cols) = self.value(x).dims2();
        if self.shape(gamma) != [cols] || self.shape(beta) != [cols] {
            return Err(shape_err("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let eps = T::c(LAYER_NORM_EPS);
        let n = T::c(cols as f64);
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![T::zero(); rows * cols];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// Gathers rows of `table` (`V×D`) for each id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let ts = self.shape(table);
        if ts.len() != 2 {
            return Err(shape_err("embedding", ts, &[ids.len()]));
        }
        let (vocab, dim) = (ts[0], ts[1]);
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(NumericsError::IndexOutOfRange {
                    op: "embedding",
                    index: id,
                    limit: vocab,
                });
            }
            out.extend_from_slice(self.value(table).row(id));
        }
        let t = Tensor::new(vec![ids.len(), dim], out)?;
        Ok(self.push(
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Inverted dropout. The identity in evaluation mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var, NumericsError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumericsError::Invalid(format!(
                "dropout rate {p} outside [0, 1)"
            )));
        }
        if !self.training || p == 0.0 {
            return Ok(x);
        }
        let keep = T::c(1.0 / (1.0 - p));
        let n = self.value(x).len();
        let mask: Vec<T> = (0..n)
            .map(|_| {
                if self.rng.random::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(t, Op::Dropout { x, mask }, &[x]))
    }

    /// Multi-head scaled dot-product attention. `q`, `k`, `v` are `L×D` with
    /// heads laid out as contiguous column blocks; `mask` is an additive
    /// `Lq×Lk` matrix.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: &Tensor<T>,
    ) -> Result<Var, NumericsError> {
        let (lq, d) = self.value(q).dims2();
        let (lk, dk) = self.value(k).dims2();
        if self.shape(q).len() != 2 || dk != d {
            return Err(shape_err("attention(q, k)", self.shape(q), self.shape(k)));
        }
        if self.shape(v) != self.shape(k) {
            return Err(shape_err("attention(k, v)", self.shape(k), self.shape(v)));
        }
        if mask.shape() != [lq, lk] {
            return Err(shape_err("attention(mask)", &[lq, lk], mask.shape()));
        }
        if heads == 0 || d % heads != 0 {
            return Err(NumericsError::Invalid(format!(
                "{d} columns not divisible into {heads} heads"
            )));
        }
        let dh = d / heads;
        let scale = T::c(1.0 / (dh as f64).sqrt());
        let (qd, kd, vd, md) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            mask.data(),
        );
        let mut probs = vec![T::zero(); heads * lq * lk];
        let mut out = vec![T::zero(); lq * d];
        let mut scores = vec![T::zero(); lk];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..lq {
                let qi = &qd[i * d + off..i * d + off + dh];
                for j in 0..lk {
                    let kj = &kd[j * d + off..j * d + off + dh];
                    let dot: T = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum();
                    scores[j] = dot * scale + md[i * lk + j];
                }
                let p = &mut probs[(h * lq + i) * lk..(h * lq + i + 1) * lk];
                softmax_row(&scores, p);
                let o = &mut out[i * d + off..i * d + off + dh];
                for (j, &pj) in p.iter().enumerate() {
                    if pj == T::zero() {
                        continue;
                    }
                    let vj = &vd[j * d + off..j * d + off + dh];
                    for (ov, &vv) in o.iter_mut().zip(vj) {
                        *ov += pj * vv;
                    }
                }
            }
        }
        let t = Tensor::new(vec![lq, d], out)?;
        Ok(self.push(
            t,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Mean over unmasked rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: &[bool],
    ) -> Result<Var, NumericsError> {
        let (rows, cols) = self.value(logits).dims2();
        if targets.len() != rows || mask.len() != rows {
            return Err(shape_err(
                "cross_entropy",
                &[rows, cols],
                &[targets.len(), mask.len()],
            ));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(NumericsError::EmptyMask);
        }
        let src = self.value(logits).data();
        let mut probs = vec![T::zero(); rows * cols];
        let mut total = T::zero();
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            softmax_row(row, &mut probs[r * cols..(r + 1) * cols]);
            if !mask[r] {
                continue;
            }
            let t = targets[r];
            if t >= cols {
                return Err(NumericsError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: t,
                    limit: cols,
                });
            }
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            total += lse - row[t];
        }
        let loss = total / T::c(count as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
            &[logits],
        ))
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let (rows, cols) = self.value(x).dims2();
        if self.shape(x).len() != 2 || start + len > rows {
            return Err(shape_err(
                "slice_rows",
                self.shape(x),
                &[start, start + len],
            ));
        }
        let data = self.value(x).data()[start * cols..(start + len) * cols].to_vec();
        let t = Tensor::new(vec![len, cols], data)?;
        Ok(self.push(t, Op::SliceRows { x, start }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    fn accumulate(&mut self, target: Var, f: impl FnOnce(&mut [T])) {
        let node = &mut self.nodes[target.0];
        if !node.requires_grad {
            return;
        }
        let n = node.value.len();
        let g = node.grad.get_or_insert_with(|| vec![T::zero(); n]);
        f(g);
    }

    /// Back-propagates from a scalar `loss`, filling gradients of every node
    /// that depends on a trainable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericsError> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::NotScalar(self.shape(loss).to_vec()));
        }
        if !self.value(loss).is_finite() {
            return Err(NumericsError::NonFinite("loss".into()));
        }
        self.accumulate(loss, |g| g[0] = T::one());
        for idx in (0..=loss.0).rev() {
            let Some(grad) = self.nodes[idx].grad.take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
            self.backprop_node(idx, &op, &grad);
            self.nodes[idx].op = op;
            self.nodes[idx].grad = Some(grad);
        }
        Ok(())
    }

    fn backprop_node(&mut self, idx: usize, op: &Op<T>, grad: &[T]) {
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(a).dims2();
                let n = self.value(b).dims2().1;
                if self.nodes[a.0].requires_grad {
                    let bv = self.value(b).data().to_vec();
                    self.accumulate(a, |ga| matmul_bt_acc(grad, &bv, ga, m, k, n));
                }
                if self.nodes[b.0].requires_grad {
                    let av = self.value(a).data().to_vec();
                    self.accumulate(b, |gb| matmul_at_acc(&av, grad, gb, m, k, n));
                }
            }
            Op::Add(a, b) => {
                for t in [a, b] {
                    self.accumulate(t, |g| g.iter_mut().zip(grad).for_each(|(x, &d)| *x += d));
                }
            }
            Op::AddRow(x, row) => {
                self.accumulate(x, |g| g.iter_mut().zip(grad).for_each(|(a, &d)| *a += d));
                let cols = self.value(row).len();
                self.accumulate(row, |g| {
                    for chunk in grad.chunks(cols.max(1)) {
                        g.iter_mut().zip(chunk).for_each(|(a, &d)| *a += d);
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.value(a).data().to_vec();
                let bv = self.value(b).data().to_vec();
                self.accumulate(a, |g| {
                    for ((x, &d), &y) in g.iter_mut().zip(grad).zip(&bv) {
                        *x += d * y;
                    }
                });
                self.accumulate(b, |g| {
                    for ((x, &d), &y) in g.iter_mut().zip(grad).zip(&av) {
                        *x += d * y;
                    }
                });
            }
            Op::Scale(x, s) => {
                self.accumulate(x, |g| {
                    g.iter_mut().zip(grad).for_each(|(a, &d)| *a += d * s)
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(x).data().to_vec();
                self.accumulate(x, |g| {
                    for ((a, &d), &v) in g.iter_mut().zip(grad).zip(&xv) {
                        *a += d * T::c(gelu_parts(v.to_f64().unwrap_or(f64::NAN)).1);
                    }
                });
            }
            Op::Softmax(x) => {
                let y = self.nodes[idx].value.data().to_vec();
                let cols = self.nodes[idx].value.dims2().1.max(1);
                self.accumulate(x, |g| {
                    for ((gr, dy), yr) in g
                        .chunks_mut(cols)
                        .zip(grad.chunks(cols))
                        .zip(y.chunks(cols))
                    {
                        let dot: T = dy.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for ((a, &d), &yy) in gr.iter_mut().zip(dy).zip(yr) {
                            *a += yy * (d - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                ref xhat,
                ref inv_std,
            } => {
                let (rows, cols) = self.value(x).dims2();
                let gv = self.value(gamma).data().to_vec();
                let n = T::c(cols as f64);
                self.accumulate(gamma, |g| {
                    for r in 0..rows {
                        for c in 0..cols {
                            g[c] += grad[r * cols + c] * xhat[r * cols + c];
                        }
                    }
                });
                self.accumulate(beta, |g| {
                    for r in 0..rows {
                        for c in 0..cols {
                            g[c] += grad[r * cols + c];
                        }
                    }
                });
                self.accumulate(x, |g| {
                    let mut dxhat = vec![T::zero(); cols];
                    for r in 0..rows {
                        let mut sum = T::zero();
                        let mut sum_xh = T::zero();
                        for c in 0..cols {
                            dxhat[c] = grad[r * cols + c] * gv[c];
                            sum += dxhat[c];
                            sum_xh += dxhat[c] * xhat[r * cols + c];
                        }
                        let k = inv_std[r] / n;
                        for c in 0..cols {
                            g[r * cols + c] +=
                                k * (n * dxhat[c] - sum - xhat[r * cols + c] * sum_xh);
                        }
                    }
                });
            }
            Op::Embedding { table, ref ids } => {
                let dim = self.value(table).dims2().1;
                self.accumulate(table, |g| {
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..dim {
                            g[id * dim + c] += grad[r * dim + c];
                        }
                    }
                });
            }
            Op::Dropout { x, ref mask } => {
                self.accumulate(x, |g| {
                    for ((a, &d), &m) in g.iter_mut().zip(grad).zip(mask) {
                        *a += d * m;
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                ref probs,
            } => self.attention_backward(q, k, v, heads, probs, grad),
            Op::CrossEntropy {
                logits,
                ref targets,
                ref mask,
                ref probs,
                count,
            } => {
                let cols = self.value(logits).dims2().1;
                let scale = grad[0] / T::c(count as f64);
                self.accumulate(logits, |g| {
                    for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
                        if !m {
                            continue;
                        }
                        for c in 0..cols {
                            let onehot = if c == t { T::one() } else { T::zero() };
                            g[r * cols + c] += scale * (probs[r * cols + c] - onehot);
                        }
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let cols = self.value(x).dims2().1;
                self.accumulate(x, |g| {
                    for (a, &d) in g[start * cols..start * cols + grad.len()]
                        .iter_mut()
                        .zip(grad)
                    {
                        *a += d;
                    }
                });
            }
            Op::Sum(x) => {
                let d = grad[0];
                self.accumulate(x, |g| g.iter_mut().for_each(|a| *a += d));
            }
        }
    }

    fn attention_backward(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: &[T],
        grad: &[T],
    ) {
        let (lq, d) = self.value(q).dims2();
        let lk = self.value(k).dims2().0;
        let dh = d / heads;
        let scale = T::c(1.0 / (dh as f64).sqrt());
        let qd = self.value(q).data().to_vec();
        let kd = self.value(k).data().to_vec();
        let vd = self.value(v).data().to_vec();
        let mut dq = vec![T::zero(); lq * d];
        let mut dk = vec![T::zero(); lk * d];
        let mut dv = vec![T::zero(); lk * d];
        let mut dp = vec![T::zero(); lk];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..lq {
                let p = &probs[(h * lq + i) * lk..(h * lq + i + 1) * lk];
                let go = &grad[i * d + off..i * d + off + dh];
                let mut dot = T::zero();
                for j in 0..lk {
                    let vj = &vd[j * d + off..j * d + off + dh];
                    dp[j] = go.iter().zip(vj).map(|(&a, &b)| a * b).sum();
                    dot += dp[j] * p[j];
                }
                for j in 0..lk {
                    let pj = p[j];
                    if pj == T::zero() {
                        continue;
                    }
                    for c in 0..dh {
                        dv[j * d + off + c] += pj * go[c];
                    }
                    let ds = pj * (dp[j] - dot) * scale;
                    for c in 0..dh {
                        dq[i * d + off + c] += ds * kd[j * d + off + c];
                        dk[j * d + off + c] += ds * qd[i * d + off + c];
                    }
                }
            }
        }
        for (t, src) in [(q, dq), (k, dk), (v, dv)] {
            self.accumulate(t, |g| g.iter_mut().zip(&src).for_each(|(a, &b)| *a += b));
        }
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn softmax_uniform() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(vec![1, 4]));
        let y = g.softmax(x);
        assert_eq!(g.value(y).data(), &[0.25; 4]);
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::filled(vec![2, 5], 3.5));
        let gamma = g.constant(Tensor::filled(vec![5], 1.0));
        let beta = g.constant(Tensor::zeros(vec![5]));
        let y = g.layer_norm(x, gamma, beta).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn causal_attention_first_row_is_first_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::<f64>::new();
        let q = g.constant(randn(vec![4, 6], &mut rng));
        let k = g.constant(randn(vec![4, 6], &mut rng));
        let vt = randn(vec![4, 6], &mut rng);
        let v = g.constant(vt.clone());
        let out = g.attention(q, k, v, 2, &causal_mask(4)).unwrap();
        assert_eq!(g.value(out).row(0), vt.row(0));
    }

    #[test]
    fn causal_attention_ignores_future() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (qt, kt, vt) = (
            randn(vec![5, 4], &mut rng),
            randn(vec![5, 4], &mut rng),
            randn(vec![5, 4], &mut rng),
        );
        let run = |k: &Tensor<f64>, v: &Tensor<f64>| {
            let mut g = Graph::<f64>::new();
            let (q, k, v) = (
                g.constant(qt.clone()),
                g.constant(k.clone()),
                g.constant(v.clone()),
            );
            let out = g.attention(q, k, v, 1, &causal_mask(5)).unwrap();
            g.value(out).clone()
        };
        let base = run(&kt, &vt);
        let mut k2 = kt.clone();
        let mut v2 = vt.clone();
        for c in 0..4 {
            k2.data_mut()[4 * 4 + c] += 3.0;
            v2.data_mut()[4 * 4 + c] -= 2.0;
        }
        let pert = run(&k2, &v2);
        assert_eq!(&base.data()[..16], &pert.data()[..16]);
        assert_ne!(&base.data()[16..], &pert.data()[16..]);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            NumericsError::ShapeMismatch {
                op: "matmul",
                left: vec![2, 3],
                right: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("[2, 3]"));
        let c = g.constant(Tensor::zeros(vec![3, 2]));
        assert!(g.add(a, c).is_err());
    }

    #[test]
    fn cross_entropy_values() {
        let mut g = Graph::<f64>::new();
        let logits = g.constant(Tensor::zeros(vec![3, 16]));
        let loss = g.cross_entropy(logits, &[0, 5, 15], &[true; 3]).unwrap();
        assert!((g.value(loss).data()[0] - 16f64.ln()).abs() < 1e-12);

        let mut sat = Tensor::zeros(vec![1, 4]);
        sat.data_mut()[2] = 100.0;
        let l2 = g.constant(sat);
        let loss2 = g.cross_entropy(l2, &[2], &[true]).unwrap();
        assert!(g.value(loss2).data()[0] < 1e-30);

        assert_eq!(
            g.cross_entropy(logits, &[0, 1, 2], &[false; 3])
                .unwrap_err(),
            NumericsError::EmptyMask
        );
        assert!(matches!(
            g.cross_entropy(logits, &[0, 16, 2], &[true; 3]),
            Err(NumericsError::IndexOutOfRange { .. })
        ));
    }

    /// Independent scalar log-sum-exp evaluation.
    fn ce_oracle(logits: &[Vec<f64>], targets: &[usize], mask: &[bool]) -> f64 {
        let mut total = 0.0;
        let mut n = 0.0;
        for ((row, &t), &m) in logits.iter().zip(targets).zip(mask) {
            if !m {
                continue;
            }
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            total += -(row[t].exp() / z).ln();
            n += 1.0;
        }
        total / n
    }

    #[test]
    fn cross_entropy_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = randn(vec![3, 5], &mut rng);
        let rows: Vec<Vec<f64>> = (0..3).map(|r| t.row(r).to_vec()).collect();
        let targets = [4, 0, 2];
        let mask = [true, false, true];
        let mut g = Graph::<f64>::new();
        let x = g.param(t);
        let loss = g.cross_entropy(x, &targets, &mask).unwrap();
        let expected = ce_oracle(&rows, &targets, &mask);
        assert!((g.value(loss).data()[0] - expected).abs() < 1e-10);

        // analytic softmax - onehot gradient
        g.backward(loss).unwrap();
        let grad = g.grad(x).unwrap();
        for r in 0..3 {
            let z: f64 = rows[r].iter().map(|v| v.exp()).sum();
            for c in 0..5 {
                let expect = if mask[r] {
                    (rows[r][c].exp() / z - if c == targets[r] { 1.0 } else { 0.0 }) / 2.0
                } else {
                    0.0
                };
                assert!((grad[r * 5 + c] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dropout_identity_in_eval_and_scaled_in_training() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::filled(vec![10, 10], 1.0));
        let y = g.dropout(x, 0.5).unwrap();
        assert_eq!(x, y);

        let mut g = Graph::<f64>::training(1);
        let x = g.param(Tensor::filled(vec![100, 10], 1.0));
        let y = g.dropout(x, 0.25).unwrap();
        let vals = g.value(y).data();
        assert!(vals
            .iter()
            .all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-12));
        let kept = vals.iter().filter(|&&v| v > 0.0).count() as f64 / 1000.0;
        assert!((kept - 0.75).abs() < 0.05, "{kept}");

        let mut g2 = Graph::<f64>::training(1);
        let x2 = g2.param(Tensor::filled(vec![100, 10], 1.0));
        let y2 = g2.dropout(x2, 0.25).unwrap();
        assert_eq!(g2.value(y2), g.value(y));
    }

    #[test]
    fn embedding_scatter_add() {
        let mut g = Graph::<f64>::new();
        let table = g.param(Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let e = g.embedding(table, &[2, 0, 2]).unwrap();
        assert_eq!(g.value(e).data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let s = g.sum(e);
        g.backward(s).unwrap();
        assert_eq!(g.grad(table).unwrap(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
        assert!(g.embedding(table, &[3]).is_err());
    }

    #[test]
    fn linear_map_gradient_is_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = randn(vec![4, 1], &mut rng);
        let w = randn(vec![3, 4], &mut rng);
        let xs = x.clone();
        let err = grad_check(
            |g, p| {
                let xv = g.constant(xs.clone());
                let y = g.matmul(p[0], xv)?;
                Ok(g.sum(y))
            },
            std::slice::from_ref(&w),
            0,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");

        let mut g = Graph::<f64>::new();
        let wv = g.param(w);
        let xv = g.constant(x.clone());
        let y = g.matmul(wv, xv).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        let grad = g.grad(wv).unwrap();
        for r in 0..3 {
            for c in 0..4 {
                assert!((grad[r * 4 + c] - x.data()[c]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn constant_graph_check_is_zero() {
        let err = grad_check(
            |g, _| {
                let c = g.constant(Tensor::scalar(2.0));
                Ok(g.sum(c))
            },
            &[],
            0,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    fn weighted_sum(g: &mut Graph<f64>, x: Var, w: &Tensor<f64>) -> Result<Var, NumericsError> {
        let wv = g.constant(w.clone());
        let m = g.mul(x, wv)?;
        Ok(g.sum(m))
    }

    #[test]
    fn every_kernel_passes_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = randn(vec![3, 4], &mut rng);
        let b = randn(vec![4, 5], &mut rng);
        let w35 = randn(vec![3, 5], &mut rng);
        let w34 = randn(vec![3, 4], &mut rng);
        let row = randn(vec![4], &mut rng);
        let tol = 1e-4;

        let checks: Vec<(&str, f64)> = vec![
            (
                "matmul",
                grad_check(
                    |g, p| {
                        let y = g.matmul(p[0], p[1])?;
                        weighted_sum(g, y, &w35)
                    },
                    &[a.clone(), b.clone()],
                    1,
                )
                .unwrap(),
            ),
            (
                "add/mul/scale",
                grad_check(
                    |g, p| {
                        let s = g.add(p[0], p[1])?;
                        let m = g.mul(s, p[0])?;
                        let y = g.scale(m, 0.7);
                        weighted_sum(g, y, &w34)
                    },
                    &[a.clone(), w34.clone()],
                    2,
                )
                .unwrap(),
            ),
            (
                "add_row",
                grad_check(
                    |g, p| {
                        let y = g.add_row(p[0], p[1])?;
                        let y = g.mul(y, y)?;
                        weighted_sum(g, y, &w34)
                    },
                    &[a.clone(), row.clone()],
                    3,
                )
                .unwrap(),
            ),
            (
                "gelu",
                grad_check(
                    |g, p| {
                        let y = g.gelu(p[0]);
                        weighted_sum(g, y, &w34)
                    },
                    std::slice::from_ref(&a),
                    4,
                )
                .unwrap(),
            ),
            (
                "softmax",
                grad_check(
                    |g, p| {
                        let y = g.softmax(p[0]);
                        weighted_sum(g, y, &w34)
                    },
                    std::slice::from_ref(&a),
                    5,
                )
                .unwrap(),
            ),
            (
                "layer_norm",
                grad_check(
                    |g, p| {
                        let y = g.layer_norm(p[0], p[1], p[2])?;
                        weighted_sum(g, y, &w34)
                    },
                    &[
                        a.clone(),
                        row.clone(),
                        randn(vec![4], &mut ChaCha8Rng::seed_from_u64(9)),
                    ],
                    6,
                )
                .unwrap(),
            ),
            (
                "embedding",
                grad_check(
                    |g, p| {
                        let y = g.embedding(p[0], &[1, 0, 1])?;
                        weighted_sum(g, y, &w35)
                    },
                    &[randn(vec![2, 5], &mut ChaCha8Rng::seed_from_u64(10))],
                    7,
                )
                .unwrap(),
            ),
            (
                "attention",
                grad_check(
                    |g, p| {
                        let y = g.attention(p[0], p[1], p[2], 2, &causal_mask(3))?;
                        weighted_sum(g, y, &w34)
                    },
                    &[
                        a.clone(),
                        w34.clone(),
                        randn(vec![3, 4], &mut ChaCha8Rng::seed_from_u64(12)),
                    ],
                    8,
                )
                .unwrap(),
            ),
            (
                "cross_entropy/slice",
                grad_check(
                    |g, p| {
                        let y = g.slice_rows(p[0], 1, 2)?;
                        g.cross_entropy(y, &[3, 0], &[true, true])
                    },
                    std::slice::from_ref(&a),
                    9,
                )
                .unwrap(),
            ),
        ];
        for (name, err) in checks {
            assert!(err < tol, "{name}: relative error {err}");
        }
    }

    proptest! {
        #[test]
        fn softmax_rows_normalize(values in proptest::collection::vec(-50.0f32..50.0, 1..64), cols in 1usize..8) {
            let rows = values.len() / cols;
            prop_assume!(rows > 0);
            let data = values[..rows * cols].to_vec();
            let mut g = Graph::<f32>::new();
            let x = g.constant(Tensor::new(vec![rows, cols], data).unwrap());
            let y = g.softmax(x);
            for r in 0..rows {
                let row = g.value(y).row(r);
                prop_assert!(row.iter().all(|&v| v >= 0.0));
                let s: f32 = row.iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }
}
