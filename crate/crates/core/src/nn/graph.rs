//! Reverse-mode differentiation over a recorded graph of matrix ops.
//!
//! A [`Graph`] records every op applied during a forward pass. Nodes are
//! appended in evaluation order, so walking them backwards is a valid
//! reverse topological order and [`Graph::backward`] needs no sorting.

use std::collections::HashMap;

use super::params::{ModelParams, ParamGrads, ParamId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Additive logit applied to blocked attention entries. Large enough for
/// `exp` to underflow to exactly zero, small enough to stay finite.
pub const BLOCKED_LOGIT: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul { a: Var, b: Var, tb: bool },
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    MaskedSoftmax(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows { table: Var, idx: Vec<usize> },
    CrossEntropy { logits: Var, target: Tensor },
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// A boolean `queries x keys` matrix; `true` means the key may be attended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    allow: Vec<bool>,
}

impl AttentionMask {
    pub fn new(rows: usize, cols: usize, allow: Vec<bool>) -> Result<Self> {
        if allow.len() != rows * cols {
            return Err(Error::Shape(format!(
                "mask of {} entries for {rows}x{cols}",
                allow.len()
            )));
        }
        for r in 0..rows {
            if !allow[r * cols..(r + 1) * cols].iter().any(|&a| a) {
                return Err(Error::BlockedRow(r));
            }
        }
        Ok(AttentionMask { rows, cols, allow })
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        AttentionMask {
            rows,
            cols,
            allow: vec![true; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let allow = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .map(|(r, c)| f(r, c))
            .collect();
        Self::new(rows, cols, allow)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn allowed(&self, r: usize, c: usize) -> bool {
        self.allow[r * self.cols + c]
    }

    pub fn row_count(&self, r: usize) -> usize {
        self.allow[r * self.cols..(r + 1) * self.cols]
            .iter()
            .filter(|&&a| a)
            .count()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(value.is_finite(), "non-finite value from {op:?}");
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input; receives no gradient outside the graph.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Binds a model parameter, reusing the node if already bound.
    pub fn param(&mut self, params: &ModelParams, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.push(params.value(id).clone(), Op::Param);
        self.bound.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul { a, b, tb: false }))
    }

    /// `a * b^T`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_t(false, self.value(b), true)?;
        Ok(self.push(out, Op::MatMul { a, b, tb: true }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::Shape(format!(
                "add {:?} and {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let mut out = x.clone();
        out.add_assign(y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a `1 x d` row to every row of an `n x d` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(Error::Shape(format!(
                "broadcast {:?} over {:?}",
                rv.shape(),
                xv.shape()
            )));
        }
        let mut out = xv.clone();
        for i in 0..out.rows() {
            for (o, r) in out.row_mut(i).iter_mut().zip(rv.data()) {
                *o += r;
            }
        }
        Ok(self.push(out, Op::AddRow(x, row)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::Shape(format!(
                "mul {:?} and {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).scale(s);
        self.push(out, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Row-wise layer normalization with learned gain and bias (`1 x d`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (n, d) = (xv.rows(), xv.cols());
        let (gv, bv) = (self.value(gain), self.value(bias));
        if gv.shape() != [1, d] || bv.shape() != [1, d] {
            return Err(Error::Shape("layer norm gain/bias must be 1 x d".into()));
        }
        let mut xhat = Tensor::zeros(n, d);
        let mut inv_std = Vec::with_capacity(n);
        let mut out = Tensor::zeros(n, d);
        for i in 0..n {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[(i, j)] = h;
                out[(i, j)] = h * gv.data()[j] + bv.data()[j];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Row softmax where blocked entries get [`BLOCKED_LOGIT`] added first.
    pub fn masked_softmax(&mut self, x: Var, mask: &AttentionMask) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != [mask.rows(), mask.cols()] {
            return Err(Error::Shape(format!(
                "mask {}x{} for scores {:?}",
                mask.rows(),
                mask.cols(),
                xv.shape()
            )));
        }
        let mut out = xv.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                if !mask.allowed(i, j) {
                    *v += BLOCKED_LOGIT;
                }
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        Ok(self.push(out, Op::MaskedSoftmax(x)))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.cols() {
            return Err(Error::Shape(format!(
                "columns {start}..{} of {}",
                start + len,
                xv.cols()
            )));
        }
        let mut out = Tensor::zeros(xv.rows(), len);
        for i in 0..xv.rows() {
            out.row_mut(i).copy_from_slice(&xv.row(i)[start..start + len]);
        }
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Shape("concat_cols with differing row counts".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for &p in parts {
                let r = self.value(p).row(i);
                out.row_mut(i)[off..off + r.len()].copy_from_slice(r);
                off += r.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            return Err(Error::Shape("concat_rows with differing column counts".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols.max(1);
        let out = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Embedding lookup: row `idx[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if let Some(&bad) = idx.iter().find(|&&i| i >= tv.rows()) {
            return Err(Error::Shape(format!(
                "row {bad} out of {} table rows",
                tv.rows()
            )));
        }
        let mut out = Tensor::zeros(idx.len(), tv.cols());
        for (o, &i) in idx.iter().enumerate() {
            out.row_mut(o).copy_from_slice(tv.row(i));
        }
        Ok(self.push(
            out,
            Op::GatherRows {
                table,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Mean cross-entropy between row softmaxes of `logits` and targets
    /// smoothed towards uniform by `smoothing`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], smoothing: f64) -> Result<Var> {
        let lv = self.value(logits);
        let (n, k) = (lv.rows(), lv.cols());
        if targets.len() != n {
            return Err(Error::Shape(format!("{} targets for {n} rows", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::TooManyClusters { label: bad + 1, max: k });
        }
        let mut target = Tensor::filled(n, k, smoothing / k as f64);
        let mut loss = 0.0;
        for i in 0..n {
            target[(i, targets[i])] += 1.0 - smoothing;
            let row = lv.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for j in 0..k {
                loss -= target[(i, j)] * (row[j] - lse);
            }
        }
        let loss = if n > 0 { loss / n as f64 } else { 0.0 };
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, target }))
    }

    /// Gradients of the scalar `loss` with respect to every bound parameter.
    ///
    /// Parameters that are bound but unreachable from `loss` get zeros.
    pub fn backward(&self, loss: Var, num_params: usize) -> Result<ParamGrads> {
        let mut grads = self.propagate(loss, false)?;
        let mut out = ParamGrads::empty(num_params);
        for (&id, &v) in &self.bound {
            let tv = self.value(v);
            let g = grads[v.0]
                .take()
                .unwrap_or_else(|| Tensor::zeros(tv.rows(), tv.cols()));
            out.set(id, g);
        }
        Ok(out)
    }

    fn propagate(&self, loss: Var, keep_all: bool) -> Result<Vec<Option<Tensor>>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::Shape("backward called without a recorded graph".into()));
        }
        if self.value(loss).shape() != [1, 1] {
            return Err(Error::Shape("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if keep_all {
                grads[idx] = Some(g.clone());
            }
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param => {
                    grads[idx] = Some(g);
                }
                Op::MatMul { a, b, tb } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = g.matmul_t(false, bv, !tb)?;
                    let db = if *tb {
                        g.matmul_t(true, av, false)?
                    } else {
                        av.matmul_t(true, &g, false)?
                    };
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(x, row) => {
                    let mut dr = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (d, v) in dr.data_mut().iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    acc(&mut grads, *x, g);
                    acc(&mut grads, *row, dr);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = Tensor::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect(),
                    )?;
                    let db = Tensor::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect(),
                    )?;
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Scale(x, s) => acc(&mut grads, *x, g.scale(*s)),
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let d = Tensor::from_vec(
                        g.rows(),
                        g.cols(),
                        g.data()
                            .iter()
                            .zip(xv.data())
                            .map(|(gv, v)| if *v > 0.0 { *gv } else { 0.0 })
                            .collect(),
                    )?;
                    acc(&mut grads, *x, d);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gain);
                    let (n, d) = (g.rows(), g.cols());
                    let mut dx = Tensor::zeros(n, d);
                    let mut dgain = Tensor::zeros(1, d);
                    let mut dbias = Tensor::zeros(1, d);
                    for i in 0..n {
                        let gy = g.row(i);
                        let xh = xhat.row(i);
                        let mut sum_dxh = 0.0;
                        let mut sum_dxh_xh = 0.0;
                        for j in 0..d {
                            dgain.data_mut()[j] += gy[j] * xh[j];
                            dbias.data_mut()[j] += gy[j];
                            let dxh = gy[j] * gv.data()[j];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh[j];
                        }
                        let inv = inv_std[i];
                        for j in 0..d {
                            let dxh = gy[j] * gv.data()[j];
                            dx[(i, j)] =
                                inv / d as f64 * (d as f64 * dxh - sum_dxh - xh[j] * sum_dxh_xh);
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gain, dgain);
                    acc(&mut grads, *bias, dbias);
                }
                Op::MaskedSoftmax(x) => {
                    let p = &node.value;
                    let mut dx = Tensor::zeros(p.rows(), p.cols());
                    for i in 0..p.rows() {
                        let (pr, gr) = (p.row(i), g.row(i));
                        let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (j, d) in dx.row_mut(i).iter_mut().enumerate() {
                            *d = pr[j] * (gr[j] - dot);
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    for i in 0..g.rows() {
                        dx.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        let mut dp = Tensor::zeros(g.rows(), c);
                        for i in 0..g.rows() {
                            dp.row_mut(i).copy_from_slice(&g.row(i)[off..off + c]);
                        }
                        off += c;
                        acc(&mut grads, p, dp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let r = self.value(p).rows();
                        let c = g.cols();
                        let dp = Tensor::from_vec(r, c, g.data()[off * c..(off + r) * c].to_vec())?;
                        off += r;
                        acc(&mut grads, p, dp);
                    }
                }
                Op::GatherRows { table, idx } => {
                    let tv = self.value(*table);
                    let mut dt = Tensor::zeros(tv.rows(), tv.cols());
                    for (o, &i) in idx.iter().enumerate() {
                        for (d, v) in dt.row_mut(i).iter_mut().zip(g.row(o)) {
                            *d += v;
                        }
                    }
                    acc(&mut grads, *table, dt);
                }
                Op::CrossEntropy { logits, target } => {
                    let lv = self.value(*logits);
                    let (n, k) = (lv.rows(), lv.cols());
                    let scale = g.to_scalar() / n.max(1) as f64;
                    let mut dl = Tensor::zeros(n, k);
                    for i in 0..n {
                        let row = lv.row(i);
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
                        for j in 0..k {
                            let p = (row[j] - max).exp() / z;
                            dl[(i, j)] = scale * (p - target[(i, j)]);
                        }
                    }
                    acc(&mut grads, *logits, dl);
                }
                Op::Sum(x) => {
                    let xv = self.value(*x);
                    acc(
                        &mut grads,
                        *x,
                        Tensor::filled(xv.rows(), xv.cols(), g.to_scalar()),
                    );
                }
            }
        }

        Ok(grads)
    }

    /// Gradient of `loss` with respect to any recorded node.
    pub fn grad_of(&self, loss: Var, target: Var) -> Result<Tensor> {
        let mut grads = self.propagate(loss, true)?;
        let tv = self.value(target);
        Ok(grads[target.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(tv.rows(), tv.cols())))
    }
}
