use rand::Rng;

use super::{
    axis_extents, gemm_acc, gemm_nt_acc, gemm_tn_acc, ParamId, ParamStore, Result, Tensor,
    TensorError,
};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        axis: usize,
        inv_std: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
    Attention(Box<AttentionRecord>),
}

#[derive(Debug)]
struct AttentionRecord {
    q: Var,
    k: Var,
    v: Var,
    batch: usize,
    heads: usize,
    len_q: usize,
    len_k: usize,
    head_dim: usize,
    /// `[batch, heads, len_q, len_k]`
    weights: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Record of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`. Values that did not need a
    /// gradient, or did not influence the loss, return `None`.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Like [`get`](Self::get), but zeros for values with no gradient path.
    pub fn get_or_zero(&self, tape: &Tape, v: Var) -> Vec<f64> {
        self.get(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; tape.value(v).len()])
    }
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let g = slot.get_or_insert_with(|| vec![0.0; len]);
    f(g);
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        check_finite(name, &value)?;
        Ok(self.push(value, op, needs_grad))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// Input whose gradient is tracked.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Copies a stored parameter onto the tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    /// Parameters recorded on this tape, with their handles.
    pub fn params(&self) -> impl Iterator<Item = (Var, ParamId)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(id) => Some((Var(i), id)),
            _ => None,
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((m, k), (k2, n)) = match (ta.rows_cols(), tb.rows_cols()) {
            (Some(x), Some(y)) if x.1 == y.0 => (x, y),
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "matmul",
                    lhs: ta.shape().to_vec(),
                    rhs: tb.shape().to_vec(),
                })
            }
        };
        debug_assert_eq!(k, k2);
        let mut out = vec![0.0; m * n];
        gemm_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        self.push_checked("matmul", Tensor::new(&[m, n], out)?, Op::MatMul(a, b), needs)
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(name, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(ta.shape(), data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push_checked(name, t, op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn row_op(&mut self, name: &'static str, x: Var, row: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        let cols = *tx.shape().last().unwrap_or(&0);
        if tr.rank() != 1 || tr.len() != cols || tx.rank() == 0 {
            return Err(TensorError::ShapeMismatch {
                op: name,
                lhs: tx.shape().to_vec(),
                rhs: tr.shape().to_vec(),
            });
        }
        let data = tx
            .data()
            .chunks(cols)
            .flat_map(|chunk| chunk.iter().zip(tr.data()).map(|(a, b)| f(*a, *b)))
            .collect();
        let t = Tensor::new(tx.shape(), data)?;
        let needs = self.needs(x) || self.needs(row);
        self.push_checked(name, t, op, needs)
    }

    /// Adds a vector to every slice along the last axis (bias add).
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_op("add_row", x, row, |a, b| a + b, Op::AddRow(x, row))
    }

    /// Multiplies every slice along the last axis by a vector (gain).
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_op("mul_row", x, row, |a, b| a * b, Op::MulRow(x, row))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::new(t.shape(), t.data().iter().map(|v| v * c).collect())?;
        let needs = self.needs(x);
        self.push_checked("scale", out, Op::Scale(x, c), needs)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::new(t.shape(), t.data().iter().map(|v| v.max(0.0)).collect())?;
        let needs = self.needs(x);
        self.push_checked("relu", out, Op::Relu(x), needs)
    }

    /// Softmax along `axis`, computed with the per-slice maximum subtracted.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let (outer, size, inner) = axis_extents(t.shape(), axis)?;
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |s: usize| (o * size + s) * inner + i;
                let max = (0..size).map(|s| src[idx(s)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for s in 0..size {
                    let e = (src[idx(s)] - max).exp();
                    out[idx(s)] = e;
                    sum += e;
                }
                for s in 0..size {
                    out[idx(s)] /= sum;
                }
            }
        }
        let out = Tensor::new(t.shape(), out)?;
        let needs = self.needs(x);
        self.push_checked("softmax", out, Op::Softmax { x, axis }, needs)
    }

    /// Normalizes each slice along `axis` to zero mean and unit variance:
    /// `(x - mean) / sqrt(var + eps)` with the population variance.
    pub fn layer_norm(&mut self, x: Var, axis: usize, eps: f64) -> Result<Var> {
        let t = self.value(x);
        let (outer, size, inner) = axis_extents(t.shape(), axis)?;
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |s: usize| (o * size + s) * inner + i;
                let mean = (0..size).map(|s| src[idx(s)]).sum::<f64>() / size as f64;
                let var = (0..size).map(|s| (src[idx(s)] - mean).powi(2)).sum::<f64>() / size as f64;
                let r = 1.0 / (var + eps).sqrt();
                inv_std[o * inner + i] = r;
                for s in 0..size {
                    out[idx(s)] = (src[idx(s)] - mean) * r;
                }
            }
        }
        let out = Tensor::new(t.shape(), out)?;
        let needs = self.needs(x);
        self.push_checked("layer_norm", out, Op::LayerNorm { x, axis, inv_std }, needs)
    }

    /// Inverted dropout: zeroes entries with probability `p` and scales the
    /// survivors by `1 / (1 - p)`. With `train == false` or `p == 0` this is
    /// the identity and records nothing.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::BadDropout(p));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let t = self.value(x);
        let mask: Vec<f64> = (0..t.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = Tensor::new(t.shape(), t.data().iter().zip(&mask).map(|(a, m)| a * m).collect())?;
        let needs = self.needs(x);
        self.push_checked("dropout", out, Op::Dropout { x, mask }, needs)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
        let base = self.value(*first).shape().to_vec();
        let (outer, _, inner) = axis_extents(&base, axis)?;
        let mut total = 0;
        for v in xs {
            let s = self.value(*v).shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = base;
        shape[axis] = total;
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for v in xs {
                let t = self.value(*v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let needs = xs.iter().any(|v| self.needs(*v));
        self.push_checked(
            "concat",
            Tensor::new(&shape, out)?,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            needs,
        )
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.rows_cols().ok_or_else(|| TensorError::BadAxis {
            axis: 1,
            rank: t.rank(),
        })?;
        let src = t.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(&[c, r], out)?, Op::Transpose(x), needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Reshape(x), needs))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push_checked("sum", Tensor::scalar(s), Op::Sum(x), needs)
    }

    /// `x @ w + b` with `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// Mean squared error against a fixed target of the same shape.
    pub fn mse_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let p = self.value(pred);
        same_shape("mse_loss", p, target)?;
        if p.is_empty() {
            return Err(TensorError::Invalid("mse_loss of an empty tensor".into()));
        }
        let n = p.len() as f64;
        let loss = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / n;
        let needs = self.needs(pred);
        self.push_checked(
            "mse_loss",
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.data().to_vec(),
            },
            needs,
        )
    }

    /// Batched multi-head scaled dot-product attention.
    ///
    /// `q` is `[batch * len_q, heads * head_dim]`, `k` and `v` are
    /// `[batch * len_k, heads * head_dim]`; head `p` reads and writes columns
    /// `p * head_dim .. (p + 1) * head_dim`, so the output is the
    /// concatenation of the heads. `visible`, when given, is a
    /// `[len_q, len_k]` table shared by every batch element and head: `false`
    /// entries are excluded from the softmax and get exactly zero weight.
    pub fn multi_head_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        heads: usize,
        visible: Option<&[bool]>,
    ) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let mismatch = |lhs: &Tensor, rhs: &Tensor| TensorError::ShapeMismatch {
            op: "attention",
            lhs: lhs.shape().to_vec(),
            rhs: rhs.shape().to_vec(),
        };
        let (rq, width) = tq.rows_cols().ok_or_else(|| mismatch(tq, tk))?;
        let (rk, wk) = tk.rows_cols().ok_or_else(|| mismatch(tq, tk))?;
        if wk != width || tv.shape() != tk.shape() {
            return Err(mismatch(tk, tv));
        }
        if heads == 0 || width % heads != 0 || batch == 0 || rq % batch != 0 || rk % batch != 0 {
            return Err(TensorError::Invalid(format!(
                "attention: width {width} rows {rq}/{rk} incompatible with {heads} heads and batch {batch}"
            )));
        }
        let (len_q, len_k, head_dim) = (rq / batch, rk / batch, width / heads);
        if let Some(m) = visible {
            if m.len() != len_q * len_k {
                return Err(TensorError::Invalid(format!(
                    "attention mask has {} entries, expected {len_q}x{len_k}",
                    m.len()
                )));
            }
            if m.chunks(len_k).any(|row| !row.iter().any(|&b| b)) {
                return Err(TensorError::Invalid("attention mask hides every key of a query".into()));
            }
        }
        let scale = 1.0 / (head_dim as f64).sqrt();
        let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
        let mut weights = vec![0.0; batch * heads * len_q * len_k];
        let mut out = vec![0.0; rq * width];
        let mut scores = vec![0.0; len_k];
        for b in 0..batch {
            for h in 0..heads {
                let col = h * head_dim;
                for i in 0..len_q {
                    let qrow = &qd[(b * len_q + i) * width + col..][..head_dim];
                    let mut max = f64::NEG_INFINITY;
                    for (j, s) in scores.iter_mut().enumerate() {
                        if visible.is_some_and(|m| !m[i * len_k + j]) {
                            *s = f64::NEG_INFINITY;
                            continue;
                        }
                        let krow = &kd[(b * len_k + j) * width + col..][..head_dim];
                        *s = qrow.iter().zip(krow).map(|(x, y)| x * y).sum::<f64>() * scale;
                        max = max.max(*s);
                    }
                    let wrow = &mut weights[((b * heads + h) * len_q + i) * len_k..][..len_k];
                    let mut sum = 0.0;
                    for (w, s) in wrow.iter_mut().zip(&scores) {
                        *w = if s.is_finite() { (s - max).exp() } else { 0.0 };
                        sum += *w;
                    }
                    let orow = &mut out[(b * len_q + i) * width + col..][..head_dim];
                    for (j, w) in wrow.iter_mut().enumerate() {
                        *w /= sum;
                        if *w != 0.0 {
                            let vrow = &vd[(b * len_k + j) * width + col..][..head_dim];
                            for (o, x) in orow.iter_mut().zip(vrow) {
                                *o += *w * x;
                            }
                        }
                    }
                }
            }
        }
        let needs = self.needs(q) || self.needs(k) || self.needs(v);
        let rec = AttentionRecord {
            q,
            k,
            v,
            batch,
            heads,
            len_q,
            len_k,
            head_dim,
            weights,
        };
        self.push_checked("attention", Tensor::new(&[rq, width], out)?, Op::Attention(Box::new(rec)), needs)
    }

    /// Attention weights `[batch, heads, len_q, len_k]` recorded by
    /// [`multi_head_attention`](Self::multi_head_attention).
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes.get(v.0)?.op {
            Op::Attention(rec) => Some(&rec.weights),
            _ => None,
        }
    }

    /// Reverse pass from a scalar `loss`. Runs at most once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.needs_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Constant | Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = ta.rows_cols().unwrap();
                let n = tb.rows_cols().unwrap().1;
                if needs(*a) {
                    accumulate(&mut grads[a.0], m * k, |ga| gemm_nt_acc(g, tb.data(), ga, m, n, k));
                }
                if needs(*b) {
                    accumulate(&mut grads[b.0], k * n, |gb| gemm_tn_acc(ta.data(), g, gb, m, k, n));
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if needs(*v) {
                        accumulate(&mut grads[v.0], g.len(), |gv| {
                            gv.iter_mut().zip(g).for_each(|(x, y)| *x += y)
                        });
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if needs(*a) {
                    accumulate(&mut grads[a.0], g.len(), |ga| {
                        for ((x, y), o) in ga.iter_mut().zip(g).zip(tb.data()) {
                            *x += y * o;
                        }
                    });
                }
                if needs(*b) {
                    accumulate(&mut grads[b.0], g.len(), |gb| {
                        for ((x, y), o) in gb.iter_mut().zip(g).zip(ta.data()) {
                            *x += y * o;
                        }
                    });
                }
            }
            Op::AddRow(x, row) => {
                let cols = val(*row).len();
                if needs(*x) {
                    accumulate(&mut grads[x.0], g.len(), |gx| {
                        gx.iter_mut().zip(g).for_each(|(a, b)| *a += b)
                    });
                }
                if needs(*row) {
                    accumulate(&mut grads[row.0], cols, |gr| {
                        for chunk in g.chunks(cols) {
                            gr.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                        }
                    });
                }
            }
            Op::MulRow(x, row) => {
                let (tx, tr) = (val(*x), val(*row));
                let cols = tr.len();
                if needs(*x) {
                    accumulate(&mut grads[x.0], g.len(), |gx| {
                        for (gc, chunk) in gx.chunks_mut(cols).zip(g.chunks(cols)) {
                            for ((a, b), r) in gc.iter_mut().zip(chunk).zip(tr.data()) {
                                *a += b * r;
                            }
                        }
                    });
                }
                if needs(*row) {
                    accumulate(&mut grads[row.0], cols, |gr| {
                        for (gchunk, xchunk) in g.chunks(cols).zip(tx.data().chunks(cols)) {
                            for ((a, b), xv) in gr.iter_mut().zip(gchunk).zip(xchunk) {
                                *a += b * xv;
                            }
                        }
                    });
                }
            }
            Op::Scale(x, c) => {
                if needs(*x) {
                    accumulate(&mut grads[x.0], g.len(), |gx| {
                        gx.iter_mut().zip(g).for_each(|(a, b)| *a += b * c)
                    });
                }
            }
            Op::Relu(x) => {
                if needs(*x) {
                    let tx = val(*x);
                    accumulate(&mut grads[x.0], g.len(), |gx| {
                        for ((a, b), xv) in gx.iter_mut().zip(g).zip(tx.data()) {
                            if *xv > 0.0 {
                                *a += b;
                            }
                        }
                    });
                }
            }
            Op::Softmax { x, axis } => {
                if needs(*x) {
                    let y = node.value.data();
                    let (outer, size, inner) = axis_extents(node.value.shape(), *axis).unwrap();
                    accumulate(&mut grads[x.0], g.len(), |gx| {
                        for o in 0..outer {
                            for i in 0..inner {
                                let idx = |s: usize| (o * size + s) * inner + i;
                                let dot: f64 = (0..size).map(|s| y[idx(s)] * g[idx(s)]).sum();
                                for s in 0..size {
                                    gx[idx(s)] += y[idx(s)] * (g[idx(s)] - dot);
                                }
                            }
                        }
                    });
                }
            }
            Op::LayerNorm { x, axis, inv_std } => {
                if needs(*x) {
                    let y = node.value.data();
                    let (outer, size, inner) = axis_extents(node.value.shape(), *axis).unwrap();
                    let nf = size as f64;
                    accumulate(&mut grads[x.0], g.len(), |gx| {
                        for o in 0..outer {
                            for i in 0..inner {
                                let idx = |s: usize| (o * size + s) * inner + i;
                                let r = inv_std[o * inner + i];
                                let mean_g: f64 = (0..size).map(|s| g[idx(s)]).sum::<f64>() / nf;
                                let mean_gy: f64 =
                                    (0..size).map(|s| g[idx(s)] * y[idx(s)]).sum::<f64>() / nf;
                                for s in 0..size {
                                    gx[idx(s)] += r * (g[idx(s)] - mean_g - y[idx(s)] * mean_gy);
                                }
                            }
                        }
                    });
                }
            }
            Op::Dropout { x, mask } => {
                if needs(*x) {
                    accumulate(&mut grads[x.0], g.len(), |gx| {
                        for ((a, b), m) in gx.iter_mut().zip(g).zip(mask) {
                            *a += b * m;
                        }
                    });
                }
            }
            Op::Concat { xs, axis } => {
                let (outer, _, inner) = axis_extents(node.value.shape(), *axis).unwrap();
                let mut offset = 0;
                let total = node.value.shape()[*axis] * inner;
                for v in xs {
                    let t = val(*v);
                    let chunk = t.shape()[*axis] * inner;
                    if needs(*v) {
                        accumulate(&mut grads[v.0], t.len(), |gv| {
                            for o in 0..outer {
                                let src = &g[o * total + offset..][..chunk];
                                for (a, b) in gv[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                    *a += b;
                                }
                            }
                        });
                    }
                    offset += chunk;
                }
            }
            Op::Transpose(x) => {
                if needs(*x) {
                    let (r, c) = val(*x).rows_cols().unwrap();
                    accumulate(&mut grads[x.0], g.len(), |gx| {
                        for i in 0..r {
                            for j in 0..c {
                                gx[i * c + j] += g[j * r + i];
                            }
                        }
                    });
                }
            }
            Op::Reshape(x) => {
                if needs(*x) {
                    accumulate(&mut grads[x.0], g.len(), |gx| {
                        gx.iter_mut().zip(g).for_each(|(a, b)| *a += b)
                    });
                }
            }
            Op::Sum(x) => {
                if needs(*x) {
                    let n = val(*x).len();
                    accumulate(&mut grads[x.0], n, |gx| gx.iter_mut().for_each(|a| *a += g[0]));
                }
            }
            Op::Mse { pred, target } => {
                if needs(*pred) {
                    let p = val(*pred).data();
                    let c = 2.0 * g[0] / p.len() as f64;
                    accumulate(&mut grads[pred.0], p.len(), |gp| {
                        for ((a, pv), tv) in gp.iter_mut().zip(p).zip(target) {
                            *a += c * (pv - tv);
                        }
                    });
                }
            }
            Op::Attention(rec) => self.attention_backward(rec, g, grads),
        }
    }

    fn attention_backward(&self, rec: &AttentionRecord, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let AttentionRecord {
            q,
            k,
            v,
            batch,
            heads,
            len_q,
            len_k,
            head_dim,
            ref weights,
        } = *rec;
        let (qd, kd, vd) = (
            self.nodes[q.0].value.data(),
            self.nodes[k.0].value.data(),
            self.nodes[v.0].value.data(),
        );
        let width = heads * head_dim;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut gq = vec![0.0; qd.len()];
        let mut gk = vec![0.0; kd.len()];
        let mut gv = vec![0.0; vd.len()];
        let mut dw = vec![0.0; len_k];
        for b in 0..batch {
            for h in 0..heads {
                let col = h * head_dim;
                for i in 0..len_q {
                    let w = &weights[((b * heads + h) * len_q + i) * len_k..][..len_k];
                    let go = &g[(b * len_q + i) * width + col..][..head_dim];
                    // dV += w^T dO ; dW = dO V^T
                    for j in 0..len_k {
                        let vrow = (b * len_k + j) * width + col;
                        dw[j] = go.iter().zip(&vd[vrow..vrow + head_dim]).map(|(x, y)| x * y).sum();
                        if w[j] != 0.0 {
                            for (a, x) in gv[vrow..vrow + head_dim].iter_mut().zip(go) {
                                *a += w[j] * x;
                            }
                        }
                    }
                    let dot: f64 = w.iter().zip(&dw).map(|(a, b)| a * b).sum();
                    let qrow = (b * len_q + i) * width + col;
                    for j in 0..len_k {
                        let ds = w[j] * (dw[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let krow = (b * len_k + j) * width + col;
                        for d in 0..head_dim {
                            gq[qrow + d] += ds * kd[krow + d];
                            gk[krow + d] += ds * qd[qrow + d];
                        }
                    }
                }
            }
        }
        for (var, gr) in [(q, gq), (k, gk), (v, gv)] {
            if self.nodes[var.0].needs_grad {
                accumulate(&mut grads[var.0], gr.len(), |slot| {
                    slot.iter_mut().zip(&gr).for_each(|(a, b)| *a += b)
                });
            }
        }
    }
}
