//! Tape-based reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so the backward sweep is a reverse walk over the tape.
//! Parameters are borrowed from a [`ParamStore`] rather than copied, and
//! large constants (extractor weights, positional tables) can be borrowed
//! the same way.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::tensor::{gemm, Matrix};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'a> {
    Owned(Matrix),
    Borrowed(&'a Matrix),
    Param(ParamId),
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { a: Var, bias: Var },
    AddCol { a: Var, bias: Var },
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    Abs(Var),
    Square(Var),
    Softmax(Var),
    LayerNorm { a: Var, gain: Var, bias: Var, xhat: Matrix, rstd: Vec<f64> },
    SliceCols { a: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows { a: Var, idx: Vec<usize> },
    Gather { a: Var, idx: Vec<usize> },
    Mean(Var),
    Im2Col { a: Var, height: usize, width: usize },
    MaxPool { a: Var, argmax: Vec<usize> },
    ChannelAffine { a: Var, scales: Vec<f64> },
}

struct Node<'a> {
    op: Op,
    value: Value<'a>,
    needs_grad: bool,
}

/// Computation tape.
pub struct Graph<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node<'a>>,
    param_vars: Vec<Option<Var>>,
    grad_enabled: bool,
}

impl<'a> Graph<'a> {
    /// A tape that records gradients for every parameter it touches.
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            grad_enabled: true,
        }
    }

    /// A tape for inference only; `backward` yields no gradients.
    pub fn inference(store: &'a ParamStore) -> Self {
        let mut g = Self::new(store);
        g.grad_enabled = false;
        g
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Matrix {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Borrowed(m) => m,
            Value::Param(id) => self.store.value(*id),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op: Op, value: Matrix, parents: &[Var]) -> Var {
        let needs_grad = self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            op,
            value: Value::Owned(value),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, m: Matrix) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: Value::Owned(m),
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Borrowed constant, e.g. frozen weights.
    pub fn constant(&mut self, m: &'a Matrix) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: Value::Borrowed(m),
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input leaf whose gradient is recorded.
    pub fn variable(&mut self, m: Matrix) -> Var {
        let needs_grad = self.grad_enabled;
        self.nodes.push(Node {
            op: Op::Leaf,
            value: Value::Owned(m),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let needs_grad = self.grad_enabled;
        self.nodes.push(Node {
            op: Op::Leaf,
            value: Value::Param(id),
            needs_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) · op(b)` with optional transposes.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let out = Matrix::matmul(self.value(a), ta, self.value(b), tb)?;
        Ok(self.push(Op::MatMul { a, b, ta, tb }, out, &[a, b]))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(alloc::format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.as_slice().iter().zip(y.as_slice()).map(|(p, q)| f(*p, *q)).collect();
        Matrix::from_vec(x.rows(), x.cols(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Matrix {
        let x = self.value(a);
        let data = x.as_slice().iter().map(|p| f(*p)).collect();
        Matrix::from_vec(x.rows(), x.cols(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_map(a, b, |p, q| p + q);
        Ok(self.push(Op::Add(a, b), out, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_map(a, b, |p, q| p - q);
        Ok(self.push(Op::Sub(a, b), out, &[a, b]))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_map(a, b, |p, q| p * q);
        Ok(self.push(Op::Mul(a, b), out, &[a, b]))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(bias) != (1, c) {
            return Err(Error::shape(alloc::format!("row bias {:?} for {r}x{c}", self.shape(bias))));
        }
        let mut out = self.value(a).clone();
        let b = self.value(bias).as_slice();
        for i in 0..r {
            for (o, bb) in out.row_mut(i).iter_mut().zip(b) {
                *o += bb;
            }
        }
        Ok(self.push(Op::AddRow { a, bias }, out, &[a, bias]))
    }

    /// Adds an `m x 1` column to every column of `a`.
    pub fn add_col(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(bias) != (r, 1) {
            return Err(Error::shape(alloc::format!("column bias {:?} for {r}x{c}", self.shape(bias))));
        }
        let mut out = self.value(a).clone();
        let b = self.value(bias).as_slice();
        for i in 0..r {
            let bi = b[i];
            for o in out.row_mut(i) {
                *o += bi;
            }
        }
        Ok(self.push(Op::AddCol { a, bias }, out, &[a, bias]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.map(a, |p| p * s);
        self.push(Op::Scale(a, s), out, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map(a, |p| if p > 0.0 { p } else { 0.0 });
        self.push(Op::Relu(a), out, &[a])
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| 0.5 * x * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2)));
        self.push(Op::Gelu(a), out, &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.map(a, libm::fabs);
        self.push(Op::Abs(a), out, &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.map(a, |p| p * p);
        self.push(Op::Square(a), out, &[a])
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = libm::exp(*v - max);
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.push(Op::Softmax(a), out, &[a])
    }

    /// Row-wise layer normalization with `1 x n` gain and bias.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(gain) != (1, c) || self.shape(bias) != (1, c) {
            return Err(Error::shape("layer norm affine parameters must be 1 x width"));
        }
        let x = self.value(a);
        let g = self.value(gain).as_slice();
        let b = self.value(bias).as_slice();
        let mut xhat = Matrix::zeros(r, c);
        let mut out = Matrix::zeros(r, c);
        let mut rstd = Vec::with_capacity(r);
        for i in 0..r {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / libm::sqrt(var + eps);
            rstd.push(rs);
            let xh = xhat.row_mut(i);
            for j in 0..c {
                xh[j] = (row[j] - mean) * rs;
            }
            let o = out.row_mut(i);
            for j in 0..c {
                o[j] = xh[j] * g[j] + b[j];
            }
        }
        Ok(self.push(Op::LayerNorm { a, gain, bias, xhat, rstd }, out, &[a, gain, bias]))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > c {
            return Err(Error::shape(alloc::format!("column slice {start}..{} of width {c}", start + len)));
        }
        let x = self.value(a);
        let out = Matrix::from_fn(r, len, |i, j| x.get(i, start + j));
        Ok(self.push(Op::SliceCols { a, start }, out, &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|p| self.shape(*p).0).ok_or(Error::EmptyInput)?;
        if parts.iter().any(|p| self.shape(*p).0 != rows) {
            return Err(Error::shape("concat_cols: row counts differ"));
        }
        let cols: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let x = self.value(*p);
            for i in 0..rows {
                out.row_mut(i)[off..off + x.cols()].copy_from_slice(x.row(i));
            }
            off += x.cols();
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out, parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map(|p| self.shape(*p).1).ok_or(Error::EmptyInput)?;
        if parts.iter().any(|p| self.shape(*p).1 != cols) {
            return Err(Error::shape("concat_rows: column counts differ"));
        }
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let x = self.value(*p);
            data.extend_from_slice(x.as_slice());
            rows += x.rows();
        }
        let out = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), out, parts))
    }

    /// Output row `i` is input row `idx[i]`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(a);
        if idx.iter().any(|&i| i >= r) {
            return Err(Error::shape("gather_rows: index out of range"));
        }
        let x = self.value(a);
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(x.row(i));
        }
        let out = Matrix::from_vec(idx.len(), c, data)?;
        Ok(self.push(Op::GatherRows { a, idx: idx.to_vec() }, out, &[a]))
    }

    /// Flat gather into a `rows x cols` result: `out[k] = a[idx[k]]`.
    pub fn gather(&mut self, a: Var, idx: Vec<usize>, rows: usize, cols: usize) -> Result<Var> {
        let x = self.value(a);
        if idx.len() != rows * cols || idx.iter().any(|&i| i >= x.len()) {
            return Err(Error::shape("gather: index table does not fit"));
        }
        let data = idx.iter().map(|&i| x.as_slice()[i]).collect();
        let out = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(Op::Gather { a, idx }, out, &[a]))
    }

    /// Same elements, new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let n = self.value(a).len();
        if rows * cols != n {
            return Err(Error::shape(alloc::format!("reshape of {n} values to {rows}x{cols}")));
        }
        self.gather(a, (0..n).collect(), rows, cols)
    }

    /// Mean of all elements as a `1 x 1` value.
    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = if x.is_empty() { 0.0 } else { x.sum() / x.len() as f64 };
        self.push(Op::Mean(a), Matrix::filled(1, 1, m), &[a])
    }

    /// Sum of `1 x 1` scalars weighted by `weights`.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for &(v, w) in terms {
            let s = self.scale(v, w);
            acc = Some(match acc {
                None => s,
                Some(prev) => self.add(prev, s)?,
            });
        }
        acc.ok_or(Error::EmptyInput)
    }

    /// 3x3, stride-1, zero-padded patch extraction. `a` is `channels x (height*width)`;
    /// the result is `(channels*9) x (height*width)` with row `c*9 + ky*3 + kx`.
    pub fn im2col3(&mut self, a: Var, height: usize, width: usize) -> Result<Var> {
        let (ch, hw) = self.shape(a);
        if hw != height * width {
            return Err(Error::shape(alloc::format!("im2col: {hw} columns for {height}x{width}")));
        }
        let x = self.value(a);
        let mut out = Matrix::zeros(ch * 9, hw);
        for c in 0..ch {
            let src = x.row(c);
            for ky in 0..3 {
                for kx in 0..3 {
                    let dst = out.row_mut(c * 9 + ky * 3 + kx);
                    for y in 0..height {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= height as isize {
                            continue;
                        }
                        let sy = sy as usize;
                        for xx in 0..width {
                            let sx = xx as isize + kx as isize - 1;
                            if sx < 0 || sx >= width as isize {
                                continue;
                            }
                            dst[y * width + xx] = src[sy * width + sx as usize];
                        }
                    }
                }
            }
        }
        Ok(self.push(Op::Im2Col { a, height, width }, out, &[a]))
    }

    /// 2x2 max pooling, stride 2, ceil mode (trailing odd rows/cols form
    /// clipped windows). Returns the pooled node and its spatial size.
    pub fn max_pool2(&mut self, a: Var, height: usize, width: usize) -> Result<(Var, usize, usize)> {
        let (ch, hw) = self.shape(a);
        if hw != height * width || height == 0 || width == 0 {
            return Err(Error::shape(alloc::format!("max_pool: {hw} columns for {height}x{width}")));
        }
        let (oh, ow) = (height.div_ceil(2), width.div_ceil(2));
        let x = self.value(a);
        let mut out = Matrix::zeros(ch, oh * ow);
        let mut argmax = Vec::with_capacity(ch * oh * ow);
        for c in 0..ch {
            let src = x.row(c);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let (y, xx) = (oy * 2 + dy, ox * 2 + dx);
                            if y < height && xx < width {
                                let v = src[y * width + xx];
                                if v > best {
                                    best = v;
                                    best_i = y * width + xx;
                                }
                            }
                        }
                    }
                    out.set(c, oy * ow + ox, best);
                    argmax.push(c * hw + best_i);
                }
            }
        }
        Ok((self.push(Op::MaxPool { a, argmax }, out, &[a]), oh, ow))
    }

    /// Stacks `scales.len()` affine copies of a single-row input:
    /// output row `k` is `a * scales[k] + shifts[k]`.
    pub fn channel_affine(&mut self, a: Var, scales: &[f64], shifts: &[f64]) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r != 1 || scales.len() != shifts.len() {
            return Err(Error::shape("channel_affine expects a single-row input"));
        }
        let x = self.value(a).as_slice();
        let out = Matrix::from_fn(scales.len(), c, |k, j| x[j] * scales[k] + shifts[k]);
        Ok(self.push(Op::ChannelAffine { a, scales: scales.to_vec() }, out, &[a]))
    }

    /// Reverse sweep from `loss`, seeded with ones.
    pub fn backward(&self, loss: Var) -> Gradients {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        if !self.needs(loss) {
            return self.finish(grads);
        }
        let (r, c) = self.shape(loss);
        grads[loss.0] = Some(Matrix::filled(r, c, 1.0));
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.propagate(i, &gy, &mut grads);
            }
            grads[i] = Some(gy);
        }
        self.finish(grads)
    }

    fn finish(&self, grads: Vec<Option<Matrix>>) -> Gradients {
        let params = self
            .param_vars
            .iter()
            .map(|v| v.and_then(|v| grads[v.0].clone()))
            .collect();
        Gradients {
            nodes: grads,
            params: ParamGrads::from_vec(params),
        }
    }

    fn buf<'g>(&self, grads: &'g mut [Option<Matrix>], v: Var) -> Option<&'g mut Matrix> {
        if !self.needs(v) {
            return None;
        }
        let (r, c) = self.shape(v);
        Some(grads[v.0].get_or_insert_with(|| Matrix::zeros(r, c)))
    }

    fn propagate(&self, i: usize, gy: &Matrix, grads: &mut [Option<Matrix>]) {
        let y = self.value(Var(i));
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (self.value(a), self.value(b));
                if let Some(ga) = self.buf(grads, a) {
                    if ta {
                        gemm(bv, tb, gy, true, ga, true);
                    } else {
                        gemm(gy, false, bv, !tb, ga, true);
                    }
                }
                if let Some(gb) = self.buf(grads, b) {
                    if tb {
                        gemm(gy, true, av, ta, gb, true);
                    } else {
                        gemm(av, !ta, gy, false, gb, true);
                    }
                }
            }
            &Op::Add(a, b) => {
                if let Some(ga) = self.buf(grads, a) {
                    ga.add_assign(gy);
                }
                if let Some(gb) = self.buf(grads, b) {
                    gb.add_assign(gy);
                }
            }
            &Op::Sub(a, b) => {
                if let Some(ga) = self.buf(grads, a) {
                    ga.add_assign(gy);
                }
                if let Some(gb) = self.buf(grads, b) {
                    for (d, g) in gb.as_mut_slice().iter_mut().zip(gy.as_slice()) {
                        *d -= g;
                    }
                }
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                if let Some(ga) = self.buf(grads, a) {
                    for ((d, g), q) in ga.as_mut_slice().iter_mut().zip(gy.as_slice()).zip(bv.as_slice()) {
                        *d += g * q;
                    }
                }
                if let Some(gb) = self.buf(grads, b) {
                    for ((d, g), p) in gb.as_mut_slice().iter_mut().zip(gy.as_slice()).zip(av.as_slice()) {
                        *d += g * p;
                    }
                }
            }
            &Op::AddRow { a, bias } => {
                if let Some(ga) = self.buf(grads, a) {
                    ga.add_assign(gy);
                }
                if let Some(gb) = self.buf(grads, bias) {
                    let gbs = gb.as_mut_slice();
                    for r in 0..gy.rows() {
                        for (d, g) in gbs.iter_mut().zip(gy.row(r)) {
                            *d += g;
                        }
                    }
                }
            }
            &Op::AddCol { a, bias } => {
                if let Some(ga) = self.buf(grads, a) {
                    ga.add_assign(gy);
                }
                if let Some(gb) = self.buf(grads, bias) {
                    let gbs = gb.as_mut_slice();
                    for r in 0..gy.rows() {
                        gbs[r] += gy.row(r).iter().sum::<f64>();
                    }
                }
            }
            &Op::Scale(a, s) => {
                if let Some(ga) = self.buf(grads, a) {
                    for (d, g) in ga.as_mut_slice().iter_mut().zip(gy.as_slice()) {
                        *d += s * g;
                    }
                }
            }
            &Op::Relu(a) => {
                if let Some(ga) = self.buf(grads, a) {
                    for ((d, g), o) in ga.as_mut_slice().iter_mut().zip(gy.as_slice()).zip(y.as_slice()) {
                        if *o > 0.0 {
                            *d += g;
                        }
                    }
                }
            }
            &Op::Gelu(a) => {
                let x = self.value(a);
                if let Some(ga) = self.buf(grads, a) {
                    let inv_sqrt_2pi = 0.5 * core::f64::consts::FRAC_2_SQRT_PI * core::f64::consts::FRAC_1_SQRT_2;
                    for ((d, g), xv) in ga.as_mut_slice().iter_mut().zip(gy.as_slice()).zip(x.as_slice()) {
                        let cdf = 0.5 * (1.0 + libm::erf(xv * core::f64::consts::FRAC_1_SQRT_2));
                        let pdf = inv_sqrt_2pi * libm::exp(-0.5 * xv * xv);
                        *d += g * (cdf + xv * pdf);
                    }
                }
            }
            &Op::Abs(a) => {
                let x = self.value(a);
                if let Some(ga) = self.buf(grads, a) {
                    for ((d, g), xv) in ga.as_mut_slice().iter_mut().zip(gy.as_slice()).zip(x.as_slice()) {
                        if *xv > 0.0 {
                            *d += g;
                        } else if *xv < 0.0 {
                            *d -= g;
                        }
                    }
                }
            }
            &Op::Square(a) => {
                let x = self.value(a);
                if let Some(ga) = self.buf(grads, a) {
                    for ((d, g), xv) in ga.as_mut_slice().iter_mut().zip(gy.as_slice()).zip(x.as_slice()) {
                        *d += 2.0 * xv * g;
                    }
                }
            }
            &Op::Softmax(a) => {
                if let Some(ga) = self.buf(grads, a) {
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), gy.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for ((d, p), q) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *d += p * (q - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { a, gain, bias, xhat, rstd } => {
                let (a, gain, bias) = (*a, *gain, *bias);
                let gv = self.value(gain).as_slice();
                let c = xhat.cols();
                if let Some(gg) = self.buf(grads, gain) {
                    let gs = gg.as_mut_slice();
                    for r in 0..xhat.rows() {
                        for ((d, g), xh) in gs.iter_mut().zip(gy.row(r)).zip(xhat.row(r)) {
                            *d += g * xh;
                        }
                    }
                }
                if let Some(gb) = self.buf(grads, bias) {
                    let bs = gb.as_mut_slice();
                    for r in 0..gy.rows() {
                        for (d, g) in bs.iter_mut().zip(gy.row(r)) {
                            *d += g;
                        }
                    }
                }
                if let Some(ga) = self.buf(grads, a) {
                    let mut dxhat = vec![0.0; c];
                    for r in 0..xhat.rows() {
                        let (gr, xr) = (gy.row(r), xhat.row(r));
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..c {
                            dxhat[j] = gr[j] * gv[j];
                            mean_d += dxhat[j];
                            mean_dx += dxhat[j] * xr[j];
                        }
                        mean_d /= c as f64;
                        mean_dx /= c as f64;
                        let rs = rstd[r];
                        for (j, d) in ga.row_mut(r).iter_mut().enumerate() {
                            *d += rs * (dxhat[j] - mean_d - xr[j] * mean_dx);
                        }
                    }
                }
            }
            &Op::SliceCols { a, start } => {
                if let Some(ga) = self.buf(grads, a) {
                    for r in 0..gy.rows() {
                        let dst = &mut ga.row_mut(r)[start..start + gy.cols()];
                        for (d, g) in dst.iter_mut().zip(gy.row(r)) {
                            *d += g;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if let Some(gp) = self.buf(grads, p) {
                        for r in 0..gy.rows() {
                            for (d, g) in gp.row_mut(r).iter_mut().zip(&gy.row(r)[off..off + w]) {
                                *d += g;
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                let c = gy.cols();
                for &p in parts {
                    let h = self.shape(p).0;
                    if let Some(gp) = self.buf(grads, p) {
                        let src = &gy.as_slice()[off * c..(off + h) * c];
                        for (d, g) in gp.as_mut_slice().iter_mut().zip(src) {
                            *d += g;
                        }
                    }
                    off += h;
                }
            }
            Op::GatherRows { a, idx } => {
                if let Some(ga) = self.buf(grads, *a) {
                    for (k, &src) in idx.iter().enumerate() {
                        for (d, g) in ga.row_mut(src).iter_mut().zip(gy.row(k)) {
                            *d += g;
                        }
                    }
                }
            }
            Op::Gather { a, idx } => {
                if let Some(ga) = self.buf(grads, *a) {
                    let gs = ga.as_mut_slice();
                    for (k, &src) in idx.iter().enumerate() {
                        gs[src] += gy.as_slice()[k];
                    }
                }
            }
            &Op::Mean(a) => {
                let n = self.value(a).len();
                if let Some(ga) = self.buf(grads, a) {
                    if n > 0 {
                        let g = gy.as_slice()[0] / n as f64;
                        for d in ga.as_mut_slice() {
                            *d += g;
                        }
                    }
                }
            }
            &Op::Im2Col { a, height, width } => {
                if let Some(ga) = self.buf(grads, a) {
                    for c in 0..ga.rows() {
                        let dst = ga.row_mut(c);
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let src = gy.row(c * 9 + ky * 3 + kx);
                                for yy in 0..height {
                                    let sy = yy as isize + ky as isize - 1;
                                    if sy < 0 || sy >= height as isize {
                                        continue;
                                    }
                                    for xx in 0..width {
                                        let sx = xx as isize + kx as isize - 1;
                                        if sx < 0 || sx >= width as isize {
                                            continue;
                                        }
                                        dst[sy as usize * width + sx as usize] += src[yy * width + xx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::MaxPool { a, argmax } => {
                if let Some(ga) = self.buf(grads, *a) {
                    let gs = ga.as_mut_slice();
                    for (k, &src) in argmax.iter().enumerate() {
                        gs[src] += gy.as_slice()[k];
                    }
                }
            }
            Op::ChannelAffine { a, scales } => {
                if let Some(ga) = self.buf(grads, *a) {
                    let gs = ga.as_mut_slice();
                    for (k, s) in scales.iter().enumerate() {
                        for (d, g) in gs.iter_mut().zip(gy.row(k)) {
                            *d += s * g;
                        }
                    }
                }
            }
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    nodes: Vec<Option<Matrix>>,
    params: ParamGrads,
}

impl Gradients {
    /// Gradient of the loss with respect to any node that required one.
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn params(&self) -> &ParamGrads {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads {
        self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_grad(f: impl Fn(&Matrix) -> f64, x: &Matrix) -> Matrix {
        let h = 1e-6;
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[k] += h;
            let mut xm = x.clone();
            xm.as_mut_slice()[k] -= h;
            out.as_mut_slice()[k] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        out
    }

    fn check(build: impl Fn(&mut Graph, Var) -> Var, x: Matrix) {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let v = g.variable(x.clone());
        let out = build(&mut g, v);
        let loss = g.mean(out);
        let analytic = g.backward(loss).wrt(v).unwrap().clone();
        let numeric = numeric_grad(
            |m| {
                let mut g = Graph::new(&store);
                let v = g.variable(m.clone());
                let out = build(&mut g, v);
                let loss = g.mean(out);
                g.value(loss).get(0, 0)
            },
            &x,
        );
        for (a, n) in analytic.as_slice().iter().zip(numeric.as_slice()) {
            assert!((a - n).abs() <= 1e-6 + 1e-4 * n.abs(), "analytic {a} numeric {n}");
        }
    }

    fn sample(rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |i, j| libm::sin((i * 13 + j * 7) as f64 * 0.37) * 1.3)
    }

    #[test]
    fn unary_ops_have_correct_gradients() {
        check(|g, v| g.gelu(v), sample(3, 4));
        check(|g, v| g.softmax(v), sample(3, 5));
        check(|g, v| g.square(v), sample(2, 3));
        check(
            |g, v| {
                let w = g.input(sample(4, 2));
                g.matmul(v, w).unwrap()
            },
            sample(3, 4),
        );
        check(
            |g, v| {
                let s = g.square(v);
                g.matmul_t(v, true, s, false).unwrap()
            },
            sample(3, 4),
        );
        check(
            |g, v| {
                let s = g.gelu(v);
                g.matmul_t(s, false, v, true).unwrap()
            },
            sample(3, 4),
        );
    }

    #[test]
    fn layer_norm_gradient() {
        check(
            |g, v| {
                let gain = g.input(Matrix::from_fn(1, 5, |_, j| 0.5 + j as f64 * 0.2));
                let bias = g.input(Matrix::from_fn(1, 5, |_, j| j as f64 * 0.1));
                let y = g.layer_norm(v, gain, bias, 1e-5).unwrap();
                let w = g.input(sample(5, 5));
                let z = g.matmul(y, w).unwrap();
                g.square(z)
            },
            sample(4, 5),
        );
    }

    #[test]
    fn structural_ops_gradient() {
        check(
            |g, v| {
                let a = g.slice_cols(v, 1, 2).unwrap();
                let b = g.gather_rows(v, &[2, 0, 2]).unwrap();
                let b2 = g.slice_cols(b, 0, 2).unwrap();
                let c = g.concat_rows(&[a, b2]).unwrap();
                let d = g.concat_cols(&[c, c]).unwrap();
                g.square(d)
            },
            sample(3, 4),
        );
    }

    #[test]
    fn conv_path_gradient() {
        check(
            |g, v| {
                let x = g.channel_affine(v, &[1.0, -0.5], &[0.1, 0.2]).unwrap();
                let cols = g.im2col3(x, 4, 5).unwrap();
                let w = g.input(Matrix::from_fn(3, 18, |i, j| libm::cos((i * 5 + j) as f64)));
                let y = g.matmul(w, cols).unwrap();
                let bias = g.input(Matrix::from_fn(3, 1, |i, _| i as f64 * 0.1));
                let y = g.add_col(y, bias).unwrap();
                let r = g.relu(y);
                let (p, _, _) = g.max_pool2(r, 4, 5).unwrap();
                g.square(p)
            },
            sample(1, 20),
        );
    }

    #[test]
    fn inference_graph_produces_no_gradients() {
        let mut store = ParamStore::new();
        let id = store.add("w", sample(2, 2), false);
        let mut g = Graph::inference(&store);
        let w = g.param(id);
        let l = g.mean(w);
        let grads = g.backward(l);
        assert!(grads.params().get(id).is_none());
    }

    #[test]
    fn repeated_param_use_accumulates() {
        let mut store = ParamStore::new();
        let id = store.add("w", Matrix::filled(1, 1, 3.0), false);
        let mut g = Graph::new(&store);
        let a = g.param(id);
        let b = g.param(id);
        let p = g.mul(a, b).unwrap();
        let grads = g.backward(p);
        assert_eq!(grads.params().get(id).unwrap().get(0, 0), 6.0);
    }
}
