//! Tape-based reverse-mode differentiation over the fixed operation set the
//! transformer needs.
//!
//! Every operation appends one node holding its forward value and whatever
//! the backward rule needs. `backward` walks the nodes in reverse order,
//! accumulating gradients into a side table. A tape runs backward once; call
//! [`Tape::reset`] before recording the next step.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{matmul_at_acc, matmul_bt_acc, matmul_into, Scalar, Tensor};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<F> {
    Leaf,
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    AddRow { x: Var, bias: Var },
    Scale { x: Var, factor: F },
    Gelu { x: Var },
    Softmax { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<F>, rstd: Vec<F> },
    Embedding { table: Var, ids: Vec<usize> },
    ConcatRows { parts: Vec<Var> },
    ConcatCols { parts: Vec<Var> },
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    Transpose { x: Var },
    CrossEntropy { logits: Var, targets: Vec<usize>, mask: Vec<bool>, probs: Vec<F>, count: usize },
    SquaredError { pred: Var, diff: Vec<F>, mask: Vec<bool>, count: usize },
    Sum { x: Var },
    Map { x: Var, deriv: Vec<F> },
    MaskMul { x: Var, mask: Vec<F> },
}

struct Node<F> {
    value: Tensor<F>,
    requires_grad: bool,
    name: Option<String>,
    op: Op<F>,
}

pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
    grad_enabled: bool,
    backward_done: bool,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn gelu_parts<F: Scalar>(x: F) -> (F, F) {
    // tanh approximation, as in GPT-2
    let c = F::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let k = F::from_f64(0.044715);
    let half = F::from_f64(0.5);
    let one = F::one();
    let three = F::from_f64(3.0);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let y = half * x * (one + t);
    let dinner = c * (one + three * k * x * x);
    let dy = half * (one + t) + half * x * (one - t * t) * dinner;
    (y, dy)
}

fn grad_slot<'a, F: Scalar>(
    nodes: &[Node<F>],
    grads: &'a mut [Option<Vec<F>>],
    v: Var,
) -> Option<&'a mut Vec<F>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); node.value.len()]))
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            grad_enabled: true,
            backward_done: false,
        }
    }

    /// A tape that records values only; nothing on it requires grad.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node and gradient.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.backward_done = false;
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor<F>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone()).ok()
    }

    fn push(&mut self, value: Tensor<F>, requires_grad: bool, op: Op<F>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad: requires_grad && self.grad_enabled,
            name: None,
            op,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    /// A named trainable leaf; its gradient appears in the map returned by
    /// [`Tape::backward`].
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<F>) -> Var {
        let v = self.leaf(value, true);
        self.nodes[v.0].name = Some(name.into());
        v
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::Shape {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![F::zero(); m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, rg, Op::MatMul { a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op: "add",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x + *y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, rg, Op::Add { a, b }))
    }

    /// Adds a `[H]` vector to every row of `x [.. × H]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let h = self.value(x).cols();
        if self.value(bias).len() != h {
            return Err(Error::Shape {
                op: "add_row",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| *v + b[i % h])
            .collect();
        let out = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, rg, Op::AddRow { x, bias }))
    }

    pub fn scale(&mut self, x: Var, factor: F) -> Var {
        let data = self.value(x).data().iter().map(|v| *v * factor).collect();
        let out = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(out, rg, Op::Scale { x, factor })
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|v| gelu_parts(*v).0).collect();
        let out = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(out, rg, Op::Gelu { x })
    }

    /// Elementwise `f` with derivative `df`, for test functions outside the
    /// model's op set.
    pub fn map(&mut self, x: Var, f: impl Fn(F) -> F, df: impl Fn(F) -> F) -> Var {
        let src = self.value(x).data();
        let data = src.iter().map(|v| f(*v)).collect();
        let deriv = src.iter().map(|v| df(*v)).collect();
        let out = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(out, rg, Op::Map { x, deriv })
    }

    /// Multiplies by a constant elementwise mask (dropout).
    pub fn mask_mul(&mut self, x: Var, mask: Vec<F>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(Error::Dimension(format!(
                "mask of {} elements for tensor {:?}",
                mask.len(),
                self.shape(x)
            )));
        }
        let data = self.value(x).data().iter().zip(&mask).map(|(v, m)| *v * *m).collect();
        let out = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::MaskMul { x, mask }))
    }

    /// Row-wise softmax. With `causal`, `x` must be square and entry `(i, j)`
    /// for `j > i` is excluded (probability exactly zero).
    pub fn softmax(&mut self, x: Var, causal: bool) -> Result<Var> {
        let cols = self.value(x).cols();
        let rows = self.value(x).rows();
        if causal && rows != cols {
            return Err(Error::Shape {
                op: "causal softmax",
                lhs: self.shape(x).to_vec(),
                rhs: vec![rows, rows],
            });
        }
        let src = self.value(x).data();
        let mut out = vec![F::zero(); src.len()];
        for r in 0..rows {
            let width = if causal { r + 1 } else { cols };
            let row = &src[r * cols..r * cols + width];
            let max = row.iter().fold(F::neg_infinity(), |m, v| m.max(*v));
            let dst = &mut out[r * cols..r * cols + width];
            let mut total = F::zero();
            for (d, v) in dst.iter_mut().zip(row) {
                *d = (*v - max).exp();
                total += *d;
            }
            for d in dst.iter_mut() {
                *d /= total;
            }
        }
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::Softmax { x }))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: F) -> Result<Var> {
        let h = self.value(x).cols();
        if h == 0 {
            return Err(Error::Dimension("layer_norm over an empty last dimension".into()));
        }
        for p in [gain, bias] {
            if self.value(p).len() != h {
                return Err(Error::Shape {
                    op: "layer_norm",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let rows = self.value(x).rows();
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let hf = F::from_usize(h);
        let mut xhat = vec![F::zero(); src.len()];
        let mut rstd = vec![F::zero(); rows];
        let mut out = vec![F::zero(); src.len()];
        for r in 0..rows {
            let row = &src[r * h..(r + 1) * h];
            let mean = row.iter().copied().sum::<F>() / hf;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<F>() / hf;
            let rs = F::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..h {
                let xh = (row[j] - mean) * rs;
                xhat[r * h + j] = xh;
                out[r * h + j] = xh * g[j] + b[j];
            }
        }
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(out, rg, Op::LayerNorm { x, gain, bias, xhat, rstd }))
    }

    /// Gathers rows of `table [N × H]` into `[ids.len() × H]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (n, h) = self.matrix_dims(table, "embedding")?;
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * h);
        for &id in ids {
            if id >= n {
                return Err(Error::Index { index: id, size: n });
            }
            out.extend_from_slice(&src[id * h..(id + 1) * h]);
        }
        let out = Tensor::new(vec![ids.len(), h], out)?;
        let rg = self.rg(&[table]);
        Ok(self.push(out, rg, Op::Embedding { table, ids: ids.to_vec() }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Dimension("concat of zero tensors".into()))?;
        let h = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.matrix_dims(p, "concat_rows")?;
            if c != h {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            data.extend_from_slice(self.value(p).data());
            rows += r;
        }
        let out = Tensor::new(vec![rows, h], data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, rg, Op::ConcatRows { parts: parts.to_vec() }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Dimension("concat of zero tensors".into()))?;
        let (rows, _) = self.matrix_dims(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.matrix_dims(p, "concat_cols")?;
            if r != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, rg, Op::ConcatCols { parts: parts.to_vec() }))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(x, "slice_rows")?;
        if start > end || end > rows {
            return Err(Error::Index { index: end, size: rows });
        }
        let data = self.value(x).data()[start * cols..end * cols].to_vec();
        let out = Tensor::new(vec![end - start, cols], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::SliceRows { x, start }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(x, "slice_cols")?;
        if start > end || end > cols {
            return Err(Error::Index { index: end, size: cols });
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols + start..r * cols + end]);
        }
        let out = Tensor::new(vec![rows, end - start], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::SliceCols { x, start }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(x, "transpose")?;
        let src = self.value(x).data();
        let mut data = vec![F::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = src[r * cols + c];
            }
        }
        let out = Tensor::new(vec![cols, rows], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::Transpose { x }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(total), rg, Op::Sum { x })
    }

    /// Mean over masked-in rows of `-log softmax(logits_i)[target_i]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let (rows, vocab) = self.matrix_dims(logits, "cross_entropy")?;
        if targets.len() != rows || mask.len() != rows {
            return Err(Error::Dimension(format!(
                "cross_entropy over {rows} rows got {} targets and {} mask entries",
                targets.len(),
                mask.len()
            )));
        }
        let count = mask.iter().filter(|m| **m).count();
        if count == 0 {
            return Err(Error::EmptyMask("cross_entropy"));
        }
        let src = self.value(logits).data();
        let mut probs = vec![F::zero(); rows * vocab];
        let mut total = F::zero();
        for r in 0..rows {
            if !mask[r] {
                continue;
            }
            let t = targets[r];
            if t >= vocab {
                return Err(Error::Index { index: t, size: vocab });
            }
            let row = &src[r * vocab..(r + 1) * vocab];
            let max = row.iter().fold(F::neg_infinity(), |m, v| m.max(*v));
            let z: F = row.iter().map(|v| (*v - max).exp()).sum();
            let log_z = z.ln() + max;
            total += log_z - row[t];
            for (p, v) in probs[r * vocab..(r + 1) * vocab].iter_mut().zip(row) {
                *p = (*v - log_z).exp();
            }
        }
        let value = total / F::from_usize(count);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(value),
            rg,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
        ))
    }

    /// Mean over masked-in rows of `‖pred_i − target_i‖²`.
    pub fn squared_error(&mut self, pred: Var, target: &Tensor<F>, mask: &[bool]) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(pred, "squared_error")?;
        if target.shape() != self.shape(pred) {
            return Err(Error::Shape {
                op: "squared_error",
                lhs: self.shape(pred).to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        if mask.len() != rows {
            return Err(Error::Dimension(format!(
                "squared_error over {rows} rows got {} mask entries",
                mask.len()
            )));
        }
        let count = mask.iter().filter(|m| **m).count();
        if count == 0 {
            return Err(Error::EmptyMask("squared_error"));
        }
        let p = self.value(pred).data();
        let t = target.data();
        let mut diff = vec![F::zero(); rows * cols];
        let mut total = F::zero();
        for r in (0..rows).filter(|r| mask[*r]) {
            for c in 0..cols {
                let d = p[r * cols + c] - t[r * cols + c];
                diff[r * cols + c] = d;
                total += d * d;
            }
        }
        let value = total / F::from_usize(count);
        let rg = self.rg(&[pred]);
        Ok(self.push(
            Tensor::scalar(value),
            rg,
            Op::SquaredError {
                pred,
                diff,
                mask: mask.to_vec(),
                count,
            },
        ))
    }

    /// Reverse pass from a scalar `loss`. Returns gradients of every named
    /// leaf reached from the loss.
    pub fn backward(&mut self, loss: Var) -> Result<BTreeMap<String, Tensor<F>>> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let shape = self.shape(loss).to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::Detached);
        }
        self.backward_done = true;
        self.grads[loss.0] = Some(vec![F::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }

        let mut named = BTreeMap::new();
        for (node, g) in self.nodes.iter().zip(&self.grads) {
            if let (Some(name), Some(g)) = (&node.name, g) {
                named.insert(name.clone(), Tensor::new(node.value.shape().to_vec(), g.clone())?);
            }
        }
        Ok(named)
    }

    fn backprop_node(&mut self, i: usize, g: &[F]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    matmul_bt_acc(g, bv.data(), ga, m, k, n);
                }
                if let Some(gb) = grad_slot(nodes, grads, *b) {
                    matmul_at_acc(av.data(), g, gb, m, k, n);
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(gv) = grad_slot(nodes, grads, v) {
                        gv.iter_mut().zip(g).for_each(|(d, s)| *d += *s);
                    }
                }
            }
            Op::AddRow { x, bias } => {
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(d, s)| *d += *s);
                }
                if let Some(gb) = grad_slot(nodes, grads, *bias) {
                    let h = gb.len();
                    for (j, s) in g.iter().enumerate() {
                        gb[j % h] += *s;
                    }
                }
            }
            Op::Scale { x, factor } => {
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(d, s)| *d += *s * *factor);
                }
            }
            Op::Gelu { x } => {
                let xv = nodes[x.0].value.data();
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    for ((d, s), v) in gx.iter_mut().zip(g).zip(xv) {
                        *d += *s * gelu_parts(*v).1;
                    }
                }
            }
            Op::Map { x, deriv } | Op::MaskMul { x, mask: deriv } => {
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    for ((d, s), k) in gx.iter_mut().zip(g).zip(deriv) {
                        *d += *s * *k;
                    }
                }
            }
            Op::Softmax { x } => {
                let cols = out.cols();
                let p = out.data();
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    for r in 0..out.rows() {
                        let pr = &p[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: F = pr.iter().zip(gr).map(|(a, b)| *a * *b).sum();
                        for c in 0..cols {
                            gx[r * cols + c] += pr[c] * (gr[c] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let h = out.cols();
                let rows = out.rows();
                let gv = nodes[gain.0].value.data().to_vec();
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    let hf = F::from_usize(h);
                    for r in 0..rows {
                        let gr = &g[r * h..(r + 1) * h];
                        let xr = &xhat[r * h..(r + 1) * h];
                        let mut sum_d = F::zero();
                        let mut sum_dx = F::zero();
                        for j in 0..h {
                            let d = gr[j] * gv[j];
                            sum_d += d;
                            sum_dx += d * xr[j];
                        }
                        for j in 0..h {
                            let d = gr[j] * gv[j];
                            gx[r * h + j] += rstd[r] * (d - sum_d / hf - xr[j] * sum_dx / hf);
                        }
                    }
                }
                if let Some(gg) = grad_slot(nodes, grads, *gain) {
                    for (j, (s, xh)) in g.iter().zip(xhat).enumerate() {
                        gg[j % h] += *s * *xh;
                    }
                }
                if let Some(gb) = grad_slot(nodes, grads, *bias) {
                    for (j, s) in g.iter().enumerate() {
                        gb[j % h] += *s;
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let h = out.cols();
                if let Some(gt) = grad_slot(nodes, grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..h {
                            gt[id * h + j] += g[r * h + j];
                        }
                    }
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for p in parts {
                    let n = nodes[p.0].value.len();
                    if let Some(gp) = grad_slot(nodes, grads, *p) {
                        gp.iter_mut().zip(&g[offset..offset + n]).for_each(|(d, s)| *d += *s);
                    }
                    offset += n;
                }
            }
            Op::ConcatCols { parts } => {
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let w = nodes[p.0].value.cols();
                    if let Some(gp) = grad_slot(nodes, grads, *p) {
                        for r in 0..out.rows() {
                            for c in 0..w {
                                gp[r * w + c] += g[r * total + offset + c];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceRows { x, start } => {
                let cols = out.cols();
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    let base = start * cols;
                    gx[base..base + g.len()].iter_mut().zip(g).for_each(|(d, s)| *d += *s);
                }
            }
            Op::SliceCols { x, start } => {
                let w = out.cols();
                let cols = nodes[x.0].value.cols();
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    for r in 0..out.rows() {
                        for c in 0..w {
                            gx[r * cols + start + c] += g[r * w + c];
                        }
                    }
                }
            }
            Op::Transpose { x } => {
                let (rows, cols) = (out.shape()[0], out.shape()[1]);
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    for r in 0..rows {
                        for c in 0..cols {
                            gx[c * rows + r] += g[r * cols + c];
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets, mask, probs, count } => {
                let vocab = nodes[logits.0].value.cols();
                let scale = g[0] / F::from_usize(*count);
                if let Some(gl) = grad_slot(nodes, grads, *logits) {
                    for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
                        if !m {
                            continue;
                        }
                        for c in 0..vocab {
                            let onehot = if c == t { F::one() } else { F::zero() };
                            gl[r * vocab + c] += scale * (probs[r * vocab + c] - onehot);
                        }
                    }
                }
            }
            Op::SquaredError { pred, diff, mask, count } => {
                let cols = nodes[pred.0].value.cols();
                let scale = g[0] * F::from_f64(2.0) / F::from_usize(*count);
                if let Some(gp) = grad_slot(nodes, grads, *pred) {
                    for (r, &m) in mask.iter().enumerate() {
                        if m {
                            for c in 0..cols {
                                gp[r * cols + c] += scale * diff[r * cols + c];
                            }
                        }
                    }
                }
            }
            Op::Sum { x } => {
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
        }
    }
}
