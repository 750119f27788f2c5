// SPDX-License-Identifier: MIT OR Apache-2.0

//! Eager, tape-based reverse-mode automatic differentiation.
//!
//! Every op computes its value immediately and appends a node to the
//! [`Tape`]. Node ids are assigned in creation order, so the tape is always
//! topologically sorted and [`Tape::backward`] walks it once in reverse.
//!
//! Leaves can borrow their tensors (`Tape::param`), which keeps forward
//! passes over a large parameter set free of copies.

mod optim;

pub use optim::{Adam, AdamConfig};

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul_into, matmul_t_into, matmul_tn_into, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    ScaleCols(Var, Vec<T>),
    Gelu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    PickCols {
        x: Var,
        idx: Vec<usize>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    Concat(Vec<Var>),
    Sum(Var),
    Mean(Var),
    SegmentMean {
        x: Var,
        segments: Vec<(usize, usize)>,
    },
    CausalAttention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<T>,
    },
    ClippedSurrogate {
        logp: Var,
        old: Vec<T>,
        adv: Vec<T>,
        eps: T,
    },
    AnchorDistance {
        w: Var,
        rows: Vec<usize>,
        snapshot: Vec<T>,
        cap: T,
    },
    BceWithLogits {
        logits: Var,
        labels: Vec<T>,
    },
    Mse {
        pred: Var,
        targets: Vec<T>,
    },
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only computation graph.
pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
}

impl<'a, T: Scalar> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by leaf.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf, or `None` if it does not influence the root or
    /// does not require grad.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Borrowed trainable leaf.
    pub fn param(&mut self, t: &'a Tensor<T>) -> Var {
        self.leaf(Cow::Borrowed(t), true)
    }

    /// Owned trainable leaf.
    pub fn param_owned(&mut self, t: Tensor<T>) -> Var {
        self.leaf(Cow::Owned(t), true)
    }

    /// Borrowed leaf that never receives a gradient.
    pub fn constant_ref(&mut self, t: &'a Tensor<T>) -> Var {
        self.leaf(Cow::Borrowed(t), false)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(Cow::Owned(t), false)
    }

    /// A constant copy of `v`'s value; gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn leaf(&mut self, value: Cow<'a, Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        if cfg!(debug_assertions) && !value.is_finite() {
            let finite_inputs = inputs.iter().all(|v| self.nodes[v.0].value.is_finite());
            assert!(
                !finite_inputs,
                "op {:?} produced a non-finite value from finite inputs",
                std::mem::discriminant(&op)
            );
        }
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn matrix_dims(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.value(v).shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Shape(format!("{what} must be a matrix, got {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(out, Op::MatMulT(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.same_shape(a, b, what)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Broadcast-add a row vector `bias[d]` to every row of `x[..×d]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let d = tx.cols();
        if tb.numel() != d {
            return Err(Error::Shape(format!(
                "add_row: bias {:?} does not match width of {:?}",
                tb.shape(),
                tx.shape()
            )));
        }
        let b = tb.data();
        let data = tx
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &bv)| v + bv))
            .collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddRow(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    /// Multiply column `j` of `x` by the constant `factors[j]`.
    pub fn scale_cols(&mut self, x: Var, factors: Vec<T>) -> Result<Var> {
        let tx = self.value(x);
        let d = tx.cols();
        if factors.len() != d {
            return Err(Error::Shape(format!(
                "scale_cols: {} factors for width {d}",
                factors.len()
            )));
        }
        let data = tx
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(&factors).map(|(&v, &f)| v * f))
            .collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(out, Op::ScaleCols(x, factors), &[x]))
    }

    /// Elementwise GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        self.push(out, Op::Gelu(x), &[x])
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(tx.cols()) {
            softmax_in_place(row);
        }
        let out = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Softmax(x), &[x])
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(tx.cols()) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v = *v - lse);
        }
        let out = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::LogSoftmax(x), &[x])
    }

    /// Per-row normalization to zero mean and unit variance followed by an
    /// affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let tx = self.value(x);
        let d = tx.cols();
        if d < 2 {
            return Err(Error::Contract("layer_norm needs width >= 2".into()));
        }
        let (tg, tb) = (self.value(gain), self.value(bias));
        if tg.numel() != d || tb.numel() != d {
            return Err(Error::Shape(format!(
                "layer_norm: gain {:?} / bias {:?} for width {d}",
                tg.shape(),
                tb.shape()
            )));
        }
        let (g, b) = (tg.data(), tb.data());
        let rows = tx.rows();
        let mut xhat = Vec::with_capacity(tx.numel());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(tx.numel());
        let eps = T::of(LAYER_NORM_EPS);
        let dn = T::of(d as f64);
        for row in tx.data().chunks(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for j in 0..d {
                let h = (row[j] - mean) * r;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let (n, v) = (tl.rows(), tl.cols());
        if targets.len() != n {
            return Err(Error::Shape(format!(
                "cross_entropy: {} targets for {n} rows",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::Index(format!(
                "cross_entropy target {bad} out of range for {v} classes"
            )));
        }
        let mut probs = tl.data().to_vec();
        let mut loss = T::zero();
        for (i, row) in probs.chunks_mut(v).enumerate() {
            let lse = log_sum_exp(row);
            loss = loss + lse - row[targets[i]];
            row.iter_mut().for_each(|p| *p = (*p - lse).exp());
        }
        let out = Tensor::scalar(loss / T::of(n as f64));
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Row lookup `table[ids[i]]`; the embedding op.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (r, d) = (tt.rows(), tt.cols());
        if ids.is_empty() {
            return Err(Error::Contract("gather_rows with no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::Index(format!("row {bad} out of range for {r} rows")));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(tt.row(i));
        }
        let out = Tensor::matrix(ids.len(), d, data)?;
        Ok(self.push(
            out,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// `out[i] = x[i, idx[i]]`, a vector of length `rows(x)`.
    pub fn pick_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let (n, c) = (tx.rows(), tx.cols());
        if idx.len() != n {
            return Err(Error::Shape(format!("pick_cols: {} indices for {n} rows", idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= c) {
            return Err(Error::Index(format!("column {bad} out of range for {c} columns")));
        }
        let data = idx.iter().enumerate().map(|(i, &j)| tx.row(i)[j]).collect();
        let out = Tensor::from_vec(data);
        Ok(self.push(
            out,
            Op::PickCols {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        ))
    }

    /// Rows `start..start+len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.matrix_dims(x, "slice_rows")?;
        if len == 0 || start + len > r {
            return Err(Error::Index(format!(
                "slice_rows {start}..{} out of range for {r} rows",
                start + len
            )));
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let out = Tensor::matrix(len, c, data)?;
        Ok(self.push(out, Op::SliceRows { x, start }, &[x]))
    }

    /// Concatenate vectors end to end, or matrices along rows.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let rank1 = self.value(*first).shape().len() == 1;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if (t.shape().len() == 1) != rank1 || (!rank1 && t.cols() != cols) {
                return Err(Error::Shape(format!(
                    "concat: incompatible part {:?}",
                    t.shape()
                )));
            }
            data.extend_from_slice(t.data());
        }
        let out = if rank1 {
            Tensor::from_vec(data)
        } else {
            let rows = data.len() / cols;
            Tensor::matrix(rows, cols, data)?
        };
        Ok(self.push(out, Op::Concat(parts.to_vec()), parts))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::scalar(t.sum() / T::of(t.numel() as f64));
        self.push(out, Op::Mean(x), &[x])
    }

    /// Mean of consecutive row ranges `(start, len)`; one output row each.
    pub fn segment_mean(&mut self, x: Var, segments: &[(usize, usize)]) -> Result<Var> {
        let tx = self.value(x);
        let (r, d) = (tx.rows(), tx.cols());
        if segments.is_empty() {
            return Err(Error::Contract("segment_mean with no segments".into()));
        }
        let mut data = Vec::with_capacity(segments.len() * d);
        for &(start, len) in segments {
            if len == 0 || start + len > r {
                return Err(Error::Index(format!(
                    "segment {start}+{len} out of range for {r} rows"
                )));
            }
            let inv = T::one() / T::of(len as f64);
            let mut acc = vec![T::zero(); d];
            for i in start..start + len {
                for (a, &v) in acc.iter_mut().zip(tx.row(i)) {
                    *a = *a + v;
                }
            }
            data.extend(acc.into_iter().map(|a| a * inv));
        }
        let out = Tensor::matrix(segments.len(), d, data)?;
        Ok(self.push(
            out,
            Op::SegmentMean {
                x,
                segments: segments.to_vec(),
            },
            &[x],
        ))
    }

    /// Multi-head scaled dot-product attention with a causal mask: row `t`
    /// attends to rows `0..=t` only.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        self.same_shape(q, k, "attention q/k")?;
        self.same_shape(q, v, "attention q/v")?;
        let (n, d) = self.matrix_dims(q, "attention")?;
        if heads == 0 || d % heads != 0 {
            return Err(Error::Shape(format!("{heads} heads do not divide width {d}")));
        }
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let (tq, tk, tv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![T::zero(); heads * n * n];
        let mut out = vec![T::zero(); n * d];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..n {
                let p = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
                let qi = &tq[i * d + off..i * d + off + dh];
                for j in 0..=i {
                    let kj = &tk[j * d + off..j * d + off + dh];
                    p[j] = crate::tensor::dot(qi, kj) * scale;
                }
                softmax_in_place(&mut p[..=i]);
                let o = &mut out[i * d + off..i * d + off + dh];
                for j in 0..=i {
                    let vj = &tv[j * d + off..j * d + off + dh];
                    for (ov, &vv) in o.iter_mut().zip(vj) {
                        *ov = *ov + p[j] * vv;
                    }
                }
            }
        }
        let out = Tensor::matrix(n, d, out)?;
        Ok(self.push(
            out,
            Op::CausalAttention {
                q,
                k,
                v,
                heads,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Loss form of the clipped PPO objective:
    /// `-mean_t min(ρ_t A_t, clip(ρ_t, 1-ε, 1+ε) A_t)` with
    /// `ρ_t = exp(logp_t - old_t)`.
    pub fn clipped_surrogate(&mut self, logp: Var, old: &[T], adv: &[T], eps: T) -> Result<Var> {
        let tl = self.value(logp);
        let n = tl.numel();
        if old.len() != n || adv.len() != n {
            return Err(Error::Shape(format!(
                "surrogate: {n} log-probs, {} old, {} advantages",
                old.len(),
                adv.len()
            )));
        }
        if !tl.is_finite() || old.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "surrogate log-probs: new finite={}, old finite={}",
                tl.is_finite(),
                old.iter().all(|x| x.is_finite())
            )));
        }
        let total: T = tl
            .data()
            .iter()
            .zip(old)
            .zip(adv)
            .map(|((&lp, &o), &a)| surrogate_term((lp - o).exp(), a, eps))
            .sum();
        let out = Tensor::scalar(-total / T::of(n as f64));
        Ok(self.push(
            out,
            Op::ClippedSurrogate {
                logp,
                old: old.to_vec(),
                adv: adv.to_vec(),
                eps,
            },
            &[logp],
        ))
    }

    /// `Σ_r min(‖w[r] - snapshot_r‖₂, cap)` over the selected rows of `w`.
    /// Gradients flow only into the selected rows.
    pub fn anchor_distance(&mut self, w: Var, rows: &[usize], snapshot: &[T], cap: T) -> Result<Var> {
        let tw = self.value(w);
        let d = tw.cols();
        if snapshot.len() != rows.len() * d {
            return Err(Error::Shape(format!(
                "anchor snapshot has {} values for {} rows of width {d}",
                snapshot.len(),
                rows.len()
            )));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= tw.rows()) {
            return Err(Error::Index(format!("anchor row {bad} out of range")));
        }
        let total: T = rows
            .iter()
            .enumerate()
            .map(|(k, &r)| row_distance(tw.row(r), &snapshot[k * d..(k + 1) * d]).min(cap))
            .sum();
        let out = Tensor::scalar(total);
        Ok(self.push(
            out,
            Op::AnchorDistance {
                w,
                rows: rows.to_vec(),
                snapshot: snapshot.to_vec(),
                cap,
            },
            &[w],
        ))
    }

    /// Mean binary cross-entropy of logits against labels in {0, 1}.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[T]) -> Result<Var> {
        let tz = self.value(logits);
        if tz.numel() != labels.len() {
            return Err(Error::Shape(format!(
                "bce: {} logits for {} labels",
                tz.numel(),
                labels.len()
            )));
        }
        let total: T = tz
            .data()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| softplus(z) - y * z)
            .sum();
        let out = Tensor::scalar(total / T::of(labels.len() as f64));
        Ok(self.push(
            out,
            Op::BceWithLogits {
                logits,
                labels: labels.to_vec(),
            },
            &[logits],
        ))
    }

    /// `0.5 · mean((pred - target)²)`.
    pub fn mse(&mut self, pred: Var, targets: &[T]) -> Result<Var> {
        let tp = self.value(pred);
        if tp.numel() != targets.len() {
            return Err(Error::Shape(format!(
                "mse: {} predictions for {} targets",
                tp.numel(),
                targets.len()
            )));
        }
        let total: T = tp
            .data()
            .iter()
            .zip(targets)
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        let out = Tensor::scalar(T::of(0.5) * total / T::of(targets.len() as f64));
        Ok(self.push(
            out,
            Op::Mse {
                pred,
                targets: targets.to_vec(),
            },
            &[pred],
        ))
    }

    /// Reverse pass from a scalar root. Returns gradients for every leaf
    /// that requires grad and influences the root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let root_val = self.value(root);
        if root_val.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                root_val.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backprop(i, &g, &mut grads);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| {
                    Tensor::new(self.nodes[i].value.shape().to_vec(), data).expect("grad shape")
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            let n = &self.nodes[v.0];
            if n.requires_grad {
                let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); n.value.numel()]);
                f(buf);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.rows(), ta.cols());
                let n = tb.cols();
                acc(*a, &mut |ga| matmul_t_into(g, tb.data(), ga, m, n, k));
                acc(*b, &mut |gb| matmul_tn_into(ta.data(), g, gb, m, k, n));
            }
            Op::MatMulT(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.rows(), ta.cols());
                let n = tb.rows();
                acc(*a, &mut |ga| matmul_into(g, tb.data(), ga, m, n, k));
                acc(*b, &mut |gb| matmul_tn_into(g, ta.data(), gb, m, n, k));
            }
            Op::Transpose(a) => {
                let (r, c) = (out.rows(), out.cols());
                acc(*a, &mut |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[j * r + i] = ga[j * r + i] + g[i * c + j];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, &y)| *x = *x - y));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| {
                    for ((x, &gv), &bv) in ga.iter_mut().zip(g).zip(tb) {
                        *x = *x + gv * bv;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((x, &gv), &av) in gb.iter_mut().zip(g).zip(ta) {
                        *x = *x + gv * av;
                    }
                });
            }
            Op::AddRow(x, bias) => {
                let d = out.cols();
                acc(*x, &mut |gx| add_into(gx, g));
                acc(*bias, &mut |gb| {
                    for row in g.chunks(d) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Scale(x, c) => {
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b * *c));
            }
            Op::ScaleCols(x, f) => {
                let d = f.len();
                acc(*x, &mut |gx| {
                    for (gr, row) in gx.chunks_mut(d).zip(g.chunks(d)) {
                        for ((a, &b), &s) in gr.iter_mut().zip(row).zip(f) {
                            *a = *a + b * s;
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let tx = self.value(*x).data();
                acc(*x, &mut |gx| {
                    for ((a, &b), &xv) in gx.iter_mut().zip(g).zip(tx) {
                        *a = *a + b * gelu_grad(xv);
                    }
                });
            }
            Op::Softmax(x) => {
                let d = out.cols();
                let y = out.data();
                acc(*x, &mut |gx| {
                    for ((gr, gy), yr) in gx.chunks_mut(d).zip(g.chunks(d)).zip(y.chunks(d)) {
                        let s: T = gy.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for ((a, &gv), &yv) in gr.iter_mut().zip(gy).zip(yr) {
                            *a = *a + yv * (gv - s);
                        }
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let d = out.cols();
                let y = out.data();
                acc(*x, &mut |gx| {
                    for ((gr, gy), yr) in gx.chunks_mut(d).zip(g.chunks(d)).zip(y.chunks(d)) {
                        let s: T = gy.iter().copied().sum();
                        for ((a, &gv), &yv) in gr.iter_mut().zip(gy).zip(yr) {
                            *a = *a + gv - yv.exp() * s;
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = out.cols();
                let gv = self.value(*gain).data();
                acc(*gain, &mut |gg| {
                    for (row_g, row_h) in g.chunks(d).zip(xhat.chunks(d)) {
                        for ((a, &b), &h) in gg.iter_mut().zip(row_g).zip(row_h) {
                            *a = *a + b * h;
                        }
                    }
                });
                acc(*bias, &mut |gb| {
                    for row in g.chunks(d) {
                        add_into(gb, row);
                    }
                });
                let dn = T::of(d as f64);
                acc(*x, &mut |gx| {
                    for (r, ((gxr, gr), hr)) in gx
                        .chunks_mut(d)
                        .zip(g.chunks(d))
                        .zip(xhat.chunks(d))
                        .enumerate()
                    {
                        let dh: Vec<T> = gr.iter().zip(gv).map(|(&a, &b)| a * b).collect();
                        let mean_dh = dh.iter().copied().sum::<T>() / dn;
                        let mean_dh_h = dh.iter().zip(hr).map(|(&a, &b)| a * b).sum::<T>() / dn;
                        for ((a, &dhv), &h) in gxr.iter_mut().zip(&dh).zip(hr) {
                            *a = *a + rstd[r] * (dhv - mean_dh - h * mean_dh_h);
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let v = self.value(*logits).cols();
                let scale = g[0] / T::of(targets.len() as f64);
                acc(*logits, &mut |gl| {
                    for (r, (gr, pr)) in gl.chunks_mut(v).zip(probs.chunks(v)).enumerate() {
                        for (j, (a, &p)) in gr.iter_mut().zip(pr).enumerate() {
                            let onehot = if j == targets[r] { T::one() } else { T::zero() };
                            *a = *a + scale * (p - onehot);
                        }
                    }
                });
            }
            Op::GatherRows { table, ids } => {
                let d = out.cols();
                acc(*table, &mut |gt| {
                    for (k, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[k * d..(k + 1) * d]);
                    }
                });
            }
            Op::PickCols { x, idx } => {
                let c = self.value(*x).cols();
                acc(*x, &mut |gx| {
                    for (r, &j) in idx.iter().enumerate() {
                        gx[r * c + j] = gx[r * c + j] + g[r];
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let c = out.cols();
                acc(*x, &mut |gx| add_into(&mut gx[start * c..start * c + g.len()], g));
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    acc(p, &mut |gp| add_into(gp, &g[off..off + len]));
                    off += len;
                }
            }
            Op::Sum(x) => {
                acc(*x, &mut |gx| gx.iter_mut().for_each(|a| *a = *a + g[0]));
            }
            Op::Mean(x) => {
                let n = T::of(self.value(*x).numel() as f64);
                acc(*x, &mut |gx| gx.iter_mut().for_each(|a| *a = *a + g[0] / n));
            }
            Op::SegmentMean { x, segments } => {
                let d = out.cols();
                acc(*x, &mut |gx| {
                    for (s, &(start, len)) in segments.iter().enumerate() {
                        let inv = T::one() / T::of(len as f64);
                        let gs = &g[s * d..(s + 1) * d];
                        for r in start..start + len {
                            for (a, &b) in gx[r * d..(r + 1) * d].iter_mut().zip(gs) {
                                *a = *a + b * inv;
                            }
                        }
                    }
                });
            }
            Op::CausalAttention {
                q,
                k,
                v,
                heads,
                probs,
            } => self.attention_backward(*q, *k, *v, *heads, probs, g, grads),
            Op::ClippedSurrogate {
                logp,
                old,
                adv,
                eps,
            } => {
                let lp = self.value(*logp).data();
                let n = T::of(lp.len() as f64);
                acc(*logp, &mut |gl| {
                    for (((a, &l), &o), &adv_t) in gl.iter_mut().zip(lp).zip(old).zip(adv) {
                        let ratio = (l - o).exp();
                        let d_obj = surrogate_term_grad(ratio, adv_t, *eps);
                        *a = *a - g[0] * d_obj / n;
                    }
                });
            }
            Op::AnchorDistance {
                w,
                rows,
                snapshot,
                cap,
            } => {
                let tw = self.value(*w);
                let d = tw.cols();
                acc(*w, &mut |gw| {
                    for (k, &r) in rows.iter().enumerate() {
                        let row = tw.row(r);
                        let snap = &snapshot[k * d..(k + 1) * d];
                        let dist = row_distance(row, snap);
                        // Zero distance has no direction; capped rows are flat.
                        if dist == T::zero() || dist >= *cap {
                            continue;
                        }
                        for ((a, &x), &s) in gw[r * d..(r + 1) * d].iter_mut().zip(row).zip(snap) {
                            *a = *a + g[0] * (x - s) / dist;
                        }
                    }
                });
            }
            Op::BceWithLogits { logits, labels } => {
                let z = self.value(*logits).data();
                let n = T::of(labels.len() as f64);
                acc(*logits, &mut |gz| {
                    for ((a, &zv), &y) in gz.iter_mut().zip(z).zip(labels) {
                        *a = *a + g[0] * (sigmoid(zv) - y) / n;
                    }
                });
            }
            Op::Mse { pred, targets } => {
                let p = self.value(*pred).data();
                let n = T::of(targets.len() as f64);
                acc(*pred, &mut |gp| {
                    for ((a, &pv), &t) in gp.iter_mut().zip(p).zip(targets) {
                        *a = *a + g[0] * (pv - t) / n;
                    }
                });
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: &[T],
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (tq, tk, tv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let (n, d) = (self.value(q).rows(), self.value(q).cols());
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let mut gq = vec![T::zero(); n * d];
        let mut gk = vec![T::zero(); n * d];
        let mut gv = vec![T::zero(); n * d];
        let mut dp = vec![T::zero(); n];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..n {
                let p = &probs[(h * n + i) * n..(h * n + i) * n + i + 1];
                let go = &g[i * d + off..i * d + off + dh];
                for j in 0..=i {
                    let vj = &tv[j * d + off..j * d + off + dh];
                    dp[j] = crate::tensor::dot(go, vj);
                    for (a, &b) in gv[j * d + off..j * d + off + dh].iter_mut().zip(go) {
                        *a = *a + p[j] * b;
                    }
                }
                let s: T = (0..=i).map(|j| dp[j] * p[j]).sum();
                for j in 0..=i {
                    let ds = p[j] * (dp[j] - s) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    for c in 0..dh {
                        gq[i * d + off + c] = gq[i * d + off + c] + ds * tk[j * d + off + c];
                        gk[j * d + off + c] = gk[j * d + off + c] + ds * tq[i * d + off + c];
                    }
                }
            }
        }
        for (var, local) in [(q, gq), (k, gk), (v, gv)] {
            if self.nodes[var.0].requires_grad {
                match &mut grads[var.0] {
                    Some(buf) => add_into(buf, &local),
                    slot @ None => *slot = Some(local),
                }
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(a, &b)| *a = *a + b);
}

fn row_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>()
        .sqrt()
}

const GELU_COEF: f64 = 0.044715;

fn gelu_c<T: Scalar>() -> T {
    T::of((2.0 / std::f64::consts::PI).sqrt())
}

pub fn gelu<T: Scalar>(x: T) -> T {
    let inner = gelu_c::<T>() * (x + T::of(GELU_COEF) * x * x * x);
    T::of(0.5) * x * (T::one() + inner.tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = gelu_c::<T>();
    let a = T::of(GELU_COEF);
    let t = (c * (x + a * x * x * x)).tanh();
    let half = T::of(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x)
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

pub fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s = s + *v;
    }
    row.iter_mut().for_each(|v| *v = *v / s);
}

/// One token's clipped objective `min(ρA, clip(ρ, 1-ε, 1+ε)A)`.
pub fn surrogate_term<T: Scalar>(ratio: T, adv: T, eps: T) -> T {
    let clipped = ratio.max(T::one() - eps).min(T::one() + eps);
    (ratio * adv).min(clipped * adv)
}

/// Derivative of [`surrogate_term`] with respect to the new log-prob.
/// Zero whenever the min selects the clipped branch and the clip is active.
fn surrogate_term_grad<T: Scalar>(ratio: T, adv: T, eps: T) -> T {
    let clipped = ratio.max(T::one() - eps).min(T::one() + eps);
    if ratio * adv <= clipped * adv {
        ratio * adv
    } else {
        T::zero()
    }
}

#[cfg(test)]
mod tests;
