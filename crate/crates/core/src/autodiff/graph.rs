use alloc::vec;
use alloc::vec::Vec;

use super::params::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    MulRows(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        offset: Var,
        normalized: Vec<T>,
        inv_std: Vec<T>,
    },
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    RowSum(Var),
    MeanRows(Var),
    Sum(Var),
    RowOuter(Var, Var),
    Im2Col {
        x: Var,
        /// Source pixel per output entry (`None` for zero padding), one entry
        /// per `(output pixel, tap)`.
        taps: Vec<Option<usize>>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Tape of eagerly evaluated operations.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn check(op: &'static str, ok: bool, left: (usize, usize), right: (usize, usize)) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::ShapeMismatch { op, left, right })
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Input that receives a gradient but is not tied to a parameter.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let v = self.push(store.value(id).clone(), Op::Leaf, true);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        check("matmul", ta.cols == tb.rows, ta.shape(), tb.shape())?;
        let out = matmul(ta, tb);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        check(op, ta.shape() == tb.shape(), ta.shape(), tb.shape())?;
        Ok(Tensor::from_vec(
            ta.rows,
            ta.cols,
            ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect(),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// Adds the `1 x c` row `bias` to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        check("add_bias", tb.rows == 1 && tb.cols == tx.cols, tx.shape(), tb.shape())?;
        let mut out = tx.clone();
        for row in out.data.chunks_mut(tx.cols.max(1)) {
            for (o, &b) in row.iter_mut().zip(&tb.data) {
                *o = *o + b;
            }
        }
        let ng = self.ng(x) || self.ng(bias);
        Ok(self.push(out, Op::AddBias(x, bias), ng))
    }

    /// Scales row `i` of `x` by `weights[i]` (`weights` is `r x 1`).
    pub fn mul_rows(&mut self, x: Var, weights: Var) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(weights));
        check("mul_rows", tw.cols == 1 && tw.rows == tx.rows, tx.shape(), tw.shape())?;
        let mut out = tx.clone();
        for (row, &w) in out.data.chunks_mut(tx.cols.max(1)).zip(&tw.data) {
            row.iter_mut().for_each(|o| *o = *o * w);
        }
        let ng = self.ng(x) || self.ng(weights);
        Ok(self.push(out, Op::MulRows(x, weights), ng))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let tx = self.value(x);
        let out = Tensor::from_vec(tx.rows, tx.cols, tx.data.iter().map(|&v| v * factor).collect());
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, factor), ng)
    }

    fn map(&mut self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let tx = self.value(x);
        Tensor::from_vec(tx.rows, tx.cols, tx.data.iter().map(|&v| f(v)).collect())
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.map(x, sigmoid);
        let ng = self.ng(x);
        self.push(out, Op::Sigmoid(x), ng)
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.map(x, gelu);
        let ng = self.ng(x);
        self.push(out, Op::Gelu(x), ng)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let mut out = tx.clone();
        for row in out.data.chunks_mut(tx.cols.max(1)) {
            softmax_in_place(row);
        }
        let ng = self.ng(x);
        self.push(out, Op::Softmax(x), ng)
    }

    /// Row-wise layer normalization followed by `* gain + offset` (both `1 x c`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, offset: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(offset));
        let c = tx.cols;
        check("layer_norm", tg.shape() == (1, c), tx.shape(), tg.shape())?;
        check("layer_norm", tb.shape() == (1, c), tx.shape(), tb.shape())?;
        let inv_c = T::one() / T::lit(c as f64);
        let eps = T::lit(LN_EPS);
        let mut normalized = Vec::with_capacity(tx.len());
        let mut inv_std = Vec::with_capacity(tx.rows);
        let mut out = Vec::with_capacity(tx.len());
        for row in tx.data.chunks(c.max(1)) {
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) * inv_c;
            let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_c;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for (j, &v) in row.iter().enumerate() {
                let n = (v - mean) * inv;
                normalized.push(n);
                out.push(n * tg.data[j] + tb.data[j]);
            }
        }
        let out = Tensor::from_vec(tx.rows, c, out);
        let ng = self.ng(x) || self.ng(gain) || self.ng(offset);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                offset,
                normalized,
                inv_std,
            },
            ng,
        ))
    }

    /// Row `i` of the result is row `index[i]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= tx.rows) {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                left: tx.shape(),
                right: (bad, 0),
            });
        }
        let c = tx.cols;
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            data.extend_from_slice(tx.row(i));
        }
        let out = Tensor::from_vec(index.len(), c, data);
        let ng = self.ng(x);
        Ok(self.push(out, Op::GatherRows(x, index.to_vec()), ng))
    }

    /// Segment sum: row `i` of `x` is added into row `index[i]` of an
    /// `out_rows x c` result. Adjoint of [`Graph::gather_rows`].
    pub fn scatter_add_rows(&mut self, x: Var, index: &[usize], out_rows: usize) -> Result<Var> {
        let tx = self.value(x);
        check(
            "scatter_add_rows",
            index.len() == tx.rows && index.iter().all(|&i| i < out_rows),
            tx.shape(),
            (index.len(), out_rows),
        )?;
        let c = tx.cols;
        let mut out = Tensor::zeros(out_rows, c);
        for (r, &i) in index.iter().enumerate() {
            for (o, &v) in out.data[i * c..(i + 1) * c].iter_mut().zip(tx.row(r)) {
                *o = *o + v;
            }
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::ScatterAddRows(x, index.to_vec()), ng))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let tx = self.value(x);
        check("reshape", tx.len() == rows * cols, tx.shape(), (rows, cols))?;
        let out = Tensor::from_vec(rows, cols, tx.data.clone());
        let ng = self.ng(x);
        Ok(self.push(out, Op::Reshape(x), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows;
        for &p in parts {
            let s = self.shape(p);
            check("concat_cols", s.0 == rows, (rows, 0), s)?;
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Tensor::from_vec(rows, cols, data), Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        check("slice_cols", start + len <= tx.cols, tx.shape(), (start, len))?;
        let mut data = Vec::with_capacity(tx.rows * len);
        for r in 0..tx.rows {
            data.extend_from_slice(&tx.row(r)[start..start + len]);
        }
        let out = Tensor::from_vec(tx.rows, len, data);
        let ng = self.ng(x);
        Ok(self.push(out, Op::SliceCols(x, start), ng))
    }

    /// `r x c` to `r x 1` row sums.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx
            .data
            .chunks(tx.cols.max(1))
            .map(|row| row.iter().fold(T::zero(), |a, &v| a + v))
            .collect();
        let out = Tensor::from_vec(tx.rows, 1, data);
        let ng = self.ng(x);
        self.push(out, Op::RowSum(x), ng)
    }

    /// `r x c` to `1 x c` column means.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let mut out = Tensor::zeros(1, tx.cols);
        for row in tx.data.chunks(tx.cols.max(1)) {
            for (o, &v) in out.data.iter_mut().zip(row) {
                *o = *o + v;
            }
        }
        let inv = T::one() / T::lit(tx.rows as f64);
        out.data.iter_mut().for_each(|o| *o = *o * inv);
        let ng = self.ng(x);
        self.push(out, Op::MeanRows(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().fold(T::zero(), |a, &v| a + v);
        let ng = self.ng(x);
        self.push(Tensor::from_vec(1, 1, vec![s]), Op::Sum(x), ng)
    }

    /// Per-row outer product: row `r` of the `r x (p*q)` result is
    /// `vec(a_r b_r^T)` in row-major order.
    pub fn row_outer(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        check("row_outer", ta.rows == tb.rows, ta.shape(), tb.shape())?;
        let (p, q) = (ta.cols, tb.cols);
        let mut data = Vec::with_capacity(ta.rows * p * q);
        for r in 0..ta.rows {
            for &x in ta.row(r) {
                data.extend(tb.row(r).iter().map(|&y| x * y));
            }
        }
        let out = Tensor::from_vec(ta.rows, p * q, data);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::RowOuter(a, b), ng))
    }

    /// 3x3 patch extraction for a convolution with zero padding 1. `x` holds
    /// an `height x width` image as `(height*width) x c` pixel rows; the result
    /// has one row per output pixel and `9*c` columns ordered (dy, dx, channel).
    pub fn im2col3x3(&mut self, x: Var, height: usize, width: usize, stride: usize) -> Result<Var> {
        let tx = self.value(x);
        check(
            "im2col3x3",
            tx.rows == height * width && stride > 0,
            tx.shape(),
            (height, width),
        )?;
        let c = tx.cols;
        let out_h = (height + 2 - 3) / stride + 1;
        let out_w = (width + 2 - 3) / stride + 1;
        let mut taps = Vec::with_capacity(out_h * out_w * 9);
        for oy in 0..out_h {
            for ox in 0..out_w {
                for dy in 0..3 {
                    for dx in 0..3 {
                        let iy = (oy * stride + dy) as isize - 1;
                        let ix = (ox * stride + dx) as isize - 1;
                        let inside = iy >= 0 && ix >= 0 && (iy as usize) < height && (ix as usize) < width;
                        taps.push(inside.then(|| iy as usize * width + ix as usize));
                    }
                }
            }
        }
        let mut data = Vec::with_capacity(taps.len() * c);
        for t in &taps {
            match t {
                Some(p) => data.extend_from_slice(tx.row(*p)),
                None => data.extend(core::iter::repeat_n(T::zero(), c)),
            }
        }
        let out = Tensor::from_vec(out_h * out_w, 9 * c, data);
        let ng = self.ng(x);
        Ok(self.push(out, Op::Im2Col { x, taps }, ng))
    }

    /// Mean softmax cross-entropy of `r x k` logits against one class per row.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        check(
            "cross_entropy",
            targets.len() == tl.rows && targets.iter().all(|&t| t < tl.cols),
            tl.shape(),
            (targets.len(), 1),
        )?;
        let mut probs = tl.data.clone();
        let mut loss = T::zero();
        for (row, &t) in probs.chunks_mut(tl.cols).zip(targets) {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = row.iter().fold(T::zero(), |a, &v| a + (v - max).exp()).ln() + max;
            loss = loss + lse - row[t];
            softmax_in_place(row);
        }
        let loss = loss / T::lit(targets.len() as f64);
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::from_vec(1, 1, vec![loss]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Reverse sweep from a `1 x 1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lt = self.value(loss);
        check("backward", lt.shape() == (1, 1), lt.shape(), (1, 1))?;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(1, 1, T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |v: Var, t: Tensor<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    acc(*a, matmul_bt(g, tb));
                }
                if self.ng(*b) {
                    acc(*b, matmul_at(ta, g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, map(g, |v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, zip(g, tb, |x, y| x * y));
                acc(*b, zip(g, ta, |x, y| x * y));
            }
            Op::AddBias(x, bias) => {
                acc(*x, g.clone());
                acc(*bias, col_sums(g));
            }
            Op::MulRows(x, w) => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let c = g.cols.max(1);
                if self.ng(*x) {
                    let mut gx = g.clone();
                    for (row, &s) in gx.data.chunks_mut(c).zip(&tw.data) {
                        row.iter_mut().for_each(|v| *v = *v * s);
                    }
                    acc(*x, gx);
                }
                if self.ng(*w) {
                    let gw = g
                        .data
                        .chunks(c)
                        .zip(tx.data.chunks(c))
                        .map(|(gr, xr)| dot(gr, xr))
                        .collect();
                    acc(*w, Tensor::from_vec(tw.rows, 1, gw));
                }
            }
            Op::Scale(x, f) => acc(*x, map(g, |v| v * *f)),
            Op::Sigmoid(x) => acc(*x, zip(g, &node.value, |gv, y| gv * y * (T::one() - y))),
            Op::Gelu(x) => acc(*x, zip(g, self.value(*x), |gv, xv| gv * gelu_grad(xv))),
            Op::Softmax(x) => {
                let c = g.cols.max(1);
                let mut gx = Vec::with_capacity(g.len());
                for (gr, yr) in g.data.chunks(c).zip(node.value.data.chunks(c)) {
                    let inner = dot(gr, yr);
                    gx.extend(gr.iter().zip(yr).map(|(&gv, &y)| y * (gv - inner)));
                }
                acc(*x, Tensor::from_vec(g.rows, g.cols, gx));
            }
            Op::LayerNorm {
                x,
                gain,
                offset,
                normalized,
                inv_std,
            } => {
                let c = g.cols;
                let tg = self.value(*gain);
                if self.ng(*offset) {
                    acc(*offset, col_sums(g));
                }
                if self.ng(*gain) {
                    let mut gg = Tensor::zeros(1, c);
                    for (gr, nr) in g.data.chunks(c).zip(normalized.chunks(c)) {
                        for j in 0..c {
                            gg.data[j] = gg.data[j] + gr[j] * nr[j];
                        }
                    }
                    acc(*gain, gg);
                }
                if self.ng(*x) {
                    let cf = T::lit(c as f64);
                    let mut gx = Vec::with_capacity(g.len());
                    let mut dn = vec![T::zero(); c];
                    for ((gr, nr), &inv) in g.data.chunks(c).zip(normalized.chunks(c)).zip(inv_std) {
                        for j in 0..c {
                            dn[j] = gr[j] * tg.data[j];
                        }
                        let s1 = dn.iter().fold(T::zero(), |a, &v| a + v);
                        let s2 = dot(&dn, nr);
                        for j in 0..c {
                            gx.push(inv / cf * (cf * dn[j] - s1 - nr[j] * s2));
                        }
                    }
                    acc(*x, Tensor::from_vec(g.rows, c, gx));
                }
            }
            Op::GatherRows(x, index) => {
                let tx = self.value(*x);
                let c = tx.cols;
                let mut gx = Tensor::zeros(tx.rows, c);
                for (r, &i) in index.iter().enumerate() {
                    for (o, &v) in gx.data[i * c..(i + 1) * c].iter_mut().zip(g.row(r)) {
                        *o = *o + v;
                    }
                }
                acc(*x, gx);
            }
            Op::ScatterAddRows(x, index) => {
                let c = g.cols;
                let mut data = Vec::with_capacity(index.len() * c);
                for &i in index {
                    data.extend_from_slice(g.row(i));
                }
                acc(*x, Tensor::from_vec(index.len(), c, data));
            }
            Op::Reshape(x) => {
                let (r, c) = self.shape(*x);
                acc(*x, Tensor::from_vec(r, c, g.data.clone()));
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.ng(p) {
                        let mut data = Vec::with_capacity(r * c);
                        for row in 0..r {
                            data.extend_from_slice(&g.row(row)[start..start + c]);
                        }
                        acc(p, Tensor::from_vec(r, c, data));
                    }
                    start += c;
                }
            }
            Op::SliceCols(x, start) => {
                let (r, c) = self.shape(*x);
                let len = g.cols;
                let mut gx = Tensor::zeros(r, c);
                for row in 0..r {
                    gx.data[row * c + start..row * c + start + len].copy_from_slice(g.row(row));
                }
                acc(*x, gx);
            }
            Op::RowSum(x) => {
                let (r, c) = self.shape(*x);
                let mut data = Vec::with_capacity(r * c);
                for &gv in &g.data {
                    data.extend(core::iter::repeat_n(gv, c));
                }
                acc(*x, Tensor::from_vec(r, c, data));
            }
            Op::MeanRows(x) => {
                let (r, c) = self.shape(*x);
                let inv = T::one() / T::lit(r as f64);
                let row: Vec<T> = g.data.iter().map(|&v| v * inv).collect();
                let mut data = Vec::with_capacity(r * c);
                for _ in 0..r {
                    data.extend_from_slice(&row);
                }
                acc(*x, Tensor::from_vec(r, c, data));
            }
            Op::Sum(x) => {
                let (r, c) = self.shape(*x);
                acc(*x, Tensor::filled(r, c, g.scalar()));
            }
            Op::RowOuter(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (p, q) = (ta.cols, tb.cols);
                let mut ga = Tensor::zeros(ta.rows, p);
                let mut gb = Tensor::zeros(tb.rows, q);
                for r in 0..ta.rows {
                    let gr = g.row(r);
                    let (ar, br) = (ta.row(r), tb.row(r));
                    for i in 0..p {
                        let block = &gr[i * q..(i + 1) * q];
                        ga.data[r * p + i] = dot(block, br);
                        for (gbj, &bj) in gb.data[r * q..(r + 1) * q].iter_mut().zip(block) {
                            *gbj = *gbj + bj * ar[i];
                        }
                    }
                }
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::Im2Col { x, taps } => {
                let (r, c) = self.shape(*x);
                let mut gx = Tensor::zeros(r, c);
                for (t, src) in taps.iter().enumerate() {
                    if let Some(p) = src {
                        let from = &g.data[t * c..(t + 1) * c];
                        for (o, &v) in gx.data[p * c..(p + 1) * c].iter_mut().zip(from) {
                            *o = *o + v;
                        }
                    }
                }
                acc(*x, gx);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let (r, k) = self.shape(*logits);
                let scale = g.scalar() / T::lit(r as f64);
                let mut gl = probs.clone();
                for (row, &t) in gl.chunks_mut(k).zip(targets) {
                    row[t] = row[t] - T::one();
                    row.iter_mut().for_each(|v| *v = *v * scale);
                }
                acc(*logits, Tensor::from_vec(r, k, gl));
            }
        }
    }
}

/// Adjoints of one backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds the gradient of every parameter node into `buffers`, which are
    /// indexed by [`ParamId`] and shaped like the store.
    pub fn accumulate_params(&self, graph: &Graph<T>, buffers: &mut [Tensor<T>]) {
        for (i, node) in graph.nodes.iter().enumerate().take(self.grads.len()) {
            if let (Some(id), Some(g)) = (node.param, self.grads[i].as_ref()) {
                buffers[id.index()].add_assign(g);
            }
        }
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn gelu<T: Real>(v: T) -> T {
    let half = T::lit(0.5);
    half * v * (T::one() + (v * T::lit(core::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad<T: Real>(v: T) -> T {
    let half = T::lit(0.5);
    let cdf = half * (T::one() + (v * T::lit(core::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-half * v * v).exp() * T::lit(0.398_942_280_401_432_7);
    cdf + v * pdf
}

fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    row.iter_mut().for_each(|v| *v = *v / total);
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn map<T: Real>(t: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::from_vec(t.rows, t.cols, t.data.iter().map(|&v| f(v)).collect())
}

fn zip<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::from_vec(
        a.rows,
        a.cols,
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn col_sums<T: Real>(g: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(1, g.cols);
    for row in g.data.chunks(g.cols.max(1)) {
        for (o, &v) in out.data.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
    out
}

pub(crate) fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b.data[p * m..(p + 1) * m]) {
                *o = *o + av * bv;
            }
        }
    }
    Tensor::from_vec(n, m, out)
}

/// `g * b^T`.
fn matmul_bt<T: Real>(g: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (n, m, k) = (g.rows, g.cols, b.rows);
    let mut out = Vec::with_capacity(n * k);
    for i in 0..n {
        let gr = &g.data[i * m..(i + 1) * m];
        for p in 0..k {
            out.push(dot(gr, &b.data[p * m..(p + 1) * m]));
        }
    }
    Tensor::from_vec(n, k, out)
}

/// `a^T * g`.
fn matmul_at<T: Real>(a: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let (n, k, m) = (a.rows, a.cols, g.cols);
    let mut out = vec![T::zero(); k * m];
    for i in 0..n {
        let gr = &g.data[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == T::zero() {
                continue;
            }
            for (o, &gv) in out[p * m..(p + 1) * m].iter_mut().zip(gr) {
                *o = *o + av * gv;
            }
        }
    }
    Tensor::from_vec(k, m, out)
}
