//! Reverse-mode automatic differentiation over row-major `f64` matrices.
//!
//! A [`Tape`] records one forward evaluation. Parameters are read in place
//! from a borrowed [`ParamStore`]; everything else is owned by the tape.
//! Vectors are `1 × n` matrices.

use super::params::{Gradients, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl Conv2dSpec {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

enum Op {
    Constant,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
    RepeatRows(Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    RowDot(Var, Var),
    Softmax(Var),
    WeightedSum(Var, Var),
    SumRows(Var),
    Sum(Var),
    Conv2d { x: Var, w: Var, b: Var, spec: Conv2dSpec, cols: Vec<f64> },
    GlobalAvgPool(Var),
}

struct Node {
    op: Op,
    value: Vec<f64>,
    rows: usize,
    cols: usize,
    needs_grad: bool,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

/// Gradients of one backward pass, indexed by tape variable.
pub struct Grads {
    data: Vec<Vec<f64>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        let g = &self.data[v.0];
        (!g.is_empty()).then_some(g.as_slice())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// C = A·B + beta·C with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: strides and extents are derived from slice lengths checked by
    // the callers; C is row-major m × n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(x: &[f64], s: &Conv2dSpec) -> Vec<f64> {
    let (oh, ow) = (s.out_h(), s.out_w());
    let npix = oh * ow;
    let mut cols = vec![0.0; s.patch() * npix];
    for c in 0..s.in_channels {
        for ky in 0..s.kernel {
            for kx in 0..s.kernel {
                let r = (c * s.kernel + ky) * s.kernel + kx;
                let dst = &mut cols[r * npix..(r + 1) * npix];
                for oy in 0..oh {
                    let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                    if iy < 0 || iy >= s.in_h as isize {
                        continue;
                    }
                    let src = &x[(c * s.in_h + iy as usize) * s.in_w..];
                    for ox in 0..ow {
                        let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                        if ix >= 0 && ix < s.in_w as isize {
                            dst[oy * ow + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add(dcols: &[f64], s: &Conv2dSpec, dx: &mut [f64]) {
    let (oh, ow) = (s.out_h(), s.out_w());
    let npix = oh * ow;
    for c in 0..s.in_channels {
        for ky in 0..s.kernel {
            for kx in 0..s.kernel {
                let r = (c * s.kernel + ky) * s.kernel + kx;
                let src = &dcols[r * npix..(r + 1) * npix];
                for oy in 0..oh {
                    let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                    if iy < 0 || iy >= s.in_h as isize {
                        continue;
                    }
                    let base = (c * s.in_h + iy as usize) * s.in_w;
                    for ox in 0..ow {
                        let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                        if ix >= 0 && ix < s.in_w as isize {
                            dx[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(512),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Vec<f64>, rows: usize, cols: usize, needs_grad: bool) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == rows * cols);
        self.nodes.push(Node {
            op,
            value,
            rows,
            cols,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match self.nodes[v.0].op {
            Op::Param(id) => self.params.get(id),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    pub fn numel(&self, v: Var) -> usize {
        let (r, c) = self.shape(v);
        r * c
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Vec<f64>, rows: usize, cols: usize) -> Var {
        assert_eq!(value.len(), rows * cols, "constant shape mismatch");
        self.push(Op::Constant, value, rows, cols, false)
    }

    pub fn vector(&mut self, value: Vec<f64>) -> Var {
        let n = value.len();
        self.constant(value, 1, n)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.constant(vec![0.0; rows * cols], rows, cols)
    }

    /// Leaf for a stored parameter; repeated calls return the same variable.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let shape = &self.params.tensor(id).shape;
        let (rows, cols) = match shape.len() {
            1 => (1, shape[0]),
            _ => (shape[0], shape[1..].iter().product()),
        };
        let v = self.push(Op::Param(id), Vec::new(), rows, cols, true);
        self.param_vars[id.0] = Some(v);
        v
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "elementwise shape mismatch");
        let value: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let (r, c) = self.shape(a);
        let needs = self.needs(a) || self.needs(b);
        self.push(op, value, r, c, needs)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value: Vec<f64> = self.value(a).iter().map(|&x| f(x)).collect();
        let (r, c) = self.shape(a);
        let needs = self.needs(a);
        self.push(op, value, r, c, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `scale · a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        self.unary(a, |x| scale * x + shift, Op::Affine(a, scale))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// Column-wise concatenation; all parts must have the same row count.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.shape(parts[0]).0;
        assert!(parts.iter().all(|&p| self.shape(p).0 == rows), "concat row mismatch");
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let c = self.shape(p).1;
                value.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(Op::Concat(parts.to_vec()), value, rows, cols, needs)
    }

    /// Columns `start..start+len` of every row.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (rows, cols) = self.shape(a);
        assert!(start + len <= cols, "slice out of range");
        let src = self.value(a);
        let mut value = Vec::with_capacity(rows * len);
        for r in 0..rows {
            value.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let needs = self.needs(a);
        self.push(Op::SliceCols(a, start), value, rows, len, needs)
    }

    /// Same values viewed as `rows × cols`.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        assert_eq!(self.numel(a), rows * cols, "reshape size mismatch");
        let value = self.value(a).to_vec();
        let needs = self.needs(a);
        self.push(Op::Reshape(a), value, rows, cols, needs)
    }

    /// Stacks `n` copies of a single-row variable.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Var {
        let (rows, cols) = self.shape(a);
        assert_eq!(rows, 1, "repeat_rows needs a single row");
        let value = self.value(a).repeat(n);
        let needs = self.needs(a);
        self.push(Op::RepeatRows(a), value, n, cols, needs)
    }

    /// `x · Wᵀ + b` for `x: n × in`, `W: out × in`, `b: 1 × out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (n, inp) = self.shape(x);
        let (out, w_in) = self.shape(w);
        assert_eq!(inp, w_in, "linear input width mismatch");
        let mut y = vec![0.0; n * out];
        {
            let xv = self.value(x);
            let wv = self.value(w);
            if n == 1 {
                for (o, yo) in y.iter_mut().enumerate() {
                    *yo = dot(&wv[o * inp..(o + 1) * inp], xv);
                }
            } else {
                gemm(n, inp, out, xv, inp, 1, wv, 1, inp, 0.0, &mut y);
            }
            if let Some(b) = b {
                let bv = self.value(b);
                assert_eq!(bv.len(), out, "bias width mismatch");
                for row in y.chunks_mut(out) {
                    for (yo, bo) in row.iter_mut().zip(bv) {
                        *yo += bo;
                    }
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(Op::Linear { x, w, b }, y, n, out, needs)
    }

    /// Row-wise dot products of `m: n × e` with `v: 1 × e`, giving `1 × n`.
    pub fn row_dot(&mut self, m: Var, v: Var) -> Var {
        let (n, e) = self.shape(m);
        assert_eq!(self.numel(v), e, "row_dot width mismatch");
        let mv = self.value(m);
        let vv = self.value(v);
        let value: Vec<f64> = (0..n).map(|j| dot(&mv[j * e..(j + 1) * e], vv)).collect();
        let needs = self.needs(m) || self.needs(v);
        self.push(Op::RowDot(m, v), value, 1, n, needs)
    }

    /// Softmax over all elements.
    pub fn softmax(&mut self, a: Var) -> Var {
        let src = self.value(a);
        assert!(!src.is_empty(), "softmax of an empty vector");
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut value: Vec<f64> = src.iter().map(|&x| (x - max).exp()).collect();
        let total: f64 = value.iter().sum();
        value.iter_mut().for_each(|v| *v /= total);
        let (r, c) = self.shape(a);
        let needs = self.needs(a);
        self.push(Op::Softmax(a), value, r, c, needs)
    }

    /// `Σ_j w_j · m_j` for weights `1 × n` and rows `m: n × e`.
    pub fn weighted_sum(&mut self, w: Var, m: Var) -> Var {
        let (n, e) = self.shape(m);
        assert_eq!(self.numel(w), n, "weighted_sum length mismatch");
        let mut value = vec![0.0; e];
        let wv = self.value(w);
        let mv = self.value(m);
        for j in 0..n {
            axpy(wv[j], &mv[j * e..(j + 1) * e], &mut value);
        }
        let needs = self.needs(w) || self.needs(m);
        self.push(Op::WeightedSum(w, m), value, 1, e, needs)
    }

    pub fn sum_rows(&mut self, m: Var) -> Var {
        let (n, e) = self.shape(m);
        let mut value = vec![0.0; e];
        let mv = self.value(m);
        for j in 0..n {
            axpy(1.0, &mv[j * e..(j + 1) * e], &mut value);
        }
        let needs = self.needs(m);
        self.push(Op::SumRows(m), value, 1, e, needs)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).iter().sum();
        let needs = self.needs(a);
        self.push(Op::Sum(a), vec![s], 1, 1, needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.numel(a) as f64;
        let s = self.sum(a);
        self.affine(s, 1.0 / n, 0.0)
    }

    /// 2-D convolution of `x: C × (H·W)` with `w: O × (C·k·k)` and bias `1 × O`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: Conv2dSpec) -> Var {
        assert_eq!(self.shape(x), (spec.in_channels, spec.in_h * spec.in_w), "conv input shape");
        assert_eq!(self.shape(w), (spec.out_channels, spec.patch()), "conv kernel shape");
        let cols = im2col(self.value(x), &spec);
        let npix = spec.out_h() * spec.out_w();
        let mut out = vec![0.0; spec.out_channels * npix];
        gemm(
            spec.out_channels,
            spec.patch(),
            npix,
            self.value(w),
            spec.patch(),
            1,
            &cols,
            npix,
            1,
            0.0,
            &mut out,
        );
        let bv = self.value(b);
        for (o, row) in out.chunks_mut(npix).enumerate() {
            row.iter_mut().for_each(|v| *v += bv[o]);
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(
            Op::Conv2d { x, w, b, spec, cols },
            out,
            spec.out_channels,
            npix,
            needs,
        )
    }

    /// Mean over columns of each row: `C × P → 1 × C`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (c, p) = self.shape(x);
        let xv = self.value(x);
        let value: Vec<f64> = (0..c)
            .map(|i| xv[i * p..(i + 1) * p].iter().sum::<f64>() / p as f64)
            .collect();
        let needs = self.needs(x);
        self.push(Op::GlobalAvgPool(x), value, 1, c, needs)
    }

    /// Reverse pass from a scalar `loss` seeded with `seed`.
    pub fn backward_with_seed(&self, loss: Var, seed: f64) -> Grads {
        assert_eq!(self.numel(loss), 1, "backward needs a scalar");
        let mut g: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        g[loss.0] = vec![seed];
        for i in (0..=loss.0).rev() {
            if g[i].is_empty() || !self.nodes[i].needs_grad {
                continue;
            }
            let dy = std::mem::take(&mut g[i]);
            self.propagate(i, &dy, &mut g);
            g[i] = dy;
        }
        Grads { data: g }
    }

    pub fn backward(&self, loss: Var) -> Grads {
        self.backward_with_seed(loss, 1.0)
    }

    /// Adds parameter gradients from `grads` into `out`.
    pub fn accumulate(&self, grads: &Grads, out: &mut Gradients) {
        for (pid, v) in self.param_vars.iter().enumerate() {
            if let Some(v) = v {
                if let Some(g) = grads.get(*v) {
                    axpy(1.0, g, &mut out.data[pid]);
                }
            }
        }
    }

    fn slot<'g>(&self, g: &'g mut [Vec<f64>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let slot = &mut g[v.0];
        if slot.is_empty() {
            *slot = vec![0.0; self.numel(v)];
        }
        Some(slot)
    }

    fn propagate(&self, i: usize, dy: &[f64], g: &mut [Vec<f64>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::Add(a, b) => {
                if let Some(ga) = self.slot(g, *a) {
                    axpy(1.0, dy, ga);
                }
                if let Some(gb) = self.slot(g, *b) {
                    axpy(1.0, dy, gb);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(g, *a) {
                    axpy(1.0, dy, ga);
                }
                if let Some(gb) = self.slot(g, *b) {
                    axpy(-1.0, dy, gb);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.slot(g, *a) {
                    for k in 0..dy.len() {
                        ga[k] += dy[k] * bv[k];
                    }
                }
                if let Some(gb) = self.slot(g, *b) {
                    for k in 0..dy.len() {
                        gb[k] += dy[k] * av[k];
                    }
                }
            }
            Op::Affine(a, scale) => {
                if let Some(ga) = self.slot(g, *a) {
                    axpy(*scale, dy, ga);
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.slot(g, *a) {
                    for k in 0..dy.len() {
                        ga[k] += dy[k] * (1.0 - y[k] * y[k]);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.slot(g, *a) {
                    for k in 0..dy.len() {
                        ga[k] += dy[k] * y[k] * (1.0 - y[k]);
                    }
                }
            }
            Op::Relu(a) => {
                if let Some(ga) = self.slot(g, *a) {
                    for k in 0..dy.len() {
                        if y[k] > 0.0 {
                            ga[k] += dy[k];
                        }
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(ga) = self.slot(g, *a) {
                    for k in 0..dy.len() {
                        ga[k] += dy[k] * y[k];
                    }
                }
            }
            Op::Clamp(a, lo, hi) => {
                let av = self.value(*a);
                if let Some(ga) = self.slot(g, *a) {
                    for k in 0..dy.len() {
                        if av[k] >= *lo && av[k] <= *hi {
                            ga[k] += dy[k];
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let rows = node.rows;
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p).1;
                    if let Some(gp) = self.slot(g, p) {
                        for r in 0..rows {
                            axpy(
                                1.0,
                                &dy[r * node.cols + offset..r * node.cols + offset + c],
                                &mut gp[r * c..(r + 1) * c],
                            );
                        }
                    }
                    offset += c;
                }
            }
            Op::SliceCols(a, start) => {
                let cols = self.shape(*a).1;
                let len = node.cols;
                if let Some(ga) = self.slot(g, *a) {
                    for r in 0..node.rows {
                        axpy(
                            1.0,
                            &dy[r * len..(r + 1) * len],
                            &mut ga[r * cols + start..r * cols + start + len],
                        );
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.slot(g, *a) {
                    axpy(1.0, dy, ga);
                }
            }
            Op::RepeatRows(a) => {
                if let Some(ga) = self.slot(g, *a) {
                    for row in dy.chunks(node.cols) {
                        axpy(1.0, row, ga);
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (n, inp) = self.shape(*x);
                let out = node.cols;
                let xv = self.value(*x);
                let wv = self.value(*w);
                if let Some(gx) = self.slot(g, *x) {
                    if n == 1 {
                        for o in 0..out {
                            axpy(dy[o], &wv[o * inp..(o + 1) * inp], gx);
                        }
                    } else {
                        gemm(n, out, inp, dy, out, 1, wv, inp, 1, 1.0, gx);
                    }
                }
                if let Some(gw) = self.slot(g, *w) {
                    if n == 1 {
                        for o in 0..out {
                            axpy(dy[o], xv, &mut gw[o * inp..(o + 1) * inp]);
                        }
                    } else {
                        gemm(out, n, inp, dy, 1, out, xv, inp, 1, 1.0, gw);
                    }
                }
                if let Some(b) = b {
                    if let Some(gb) = self.slot(g, *b) {
                        for row in dy.chunks(out) {
                            axpy(1.0, row, gb);
                        }
                    }
                }
            }
            Op::RowDot(m, v) => {
                let (n, e) = self.shape(*m);
                let mv = self.value(*m);
                let vv = self.value(*v);
                if let Some(gm) = self.slot(g, *m) {
                    for j in 0..n {
                        axpy(dy[j], vv, &mut gm[j * e..(j + 1) * e]);
                    }
                }
                if let Some(gv) = self.slot(g, *v) {
                    for j in 0..n {
                        axpy(dy[j], &mv[j * e..(j + 1) * e], gv);
                    }
                }
            }
            Op::Softmax(a) => {
                if let Some(ga) = self.slot(g, *a) {
                    let s = dot(y, dy);
                    for k in 0..dy.len() {
                        ga[k] += y[k] * (dy[k] - s);
                    }
                }
            }
            Op::WeightedSum(w, m) => {
                let (n, e) = self.shape(*m);
                let wv = self.value(*w);
                let mv = self.value(*m);
                if let Some(gw) = self.slot(g, *w) {
                    for j in 0..n {
                        gw[j] += dot(&mv[j * e..(j + 1) * e], dy);
                    }
                }
                if let Some(gm) = self.slot(g, *m) {
                    for j in 0..n {
                        axpy(wv[j], dy, &mut gm[j * e..(j + 1) * e]);
                    }
                }
            }
            Op::SumRows(m) => {
                let (n, e) = self.shape(*m);
                if let Some(gm) = self.slot(g, *m) {
                    for j in 0..n {
                        axpy(1.0, dy, &mut gm[j * e..(j + 1) * e]);
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.slot(g, *a) {
                    ga.iter_mut().for_each(|v| *v += dy[0]);
                }
            }
            Op::Conv2d { x, w, b, spec, cols } => {
                let npix = spec.out_h() * spec.out_w();
                if let Some(gw) = self.slot(g, *w) {
                    gemm(
                        spec.out_channels,
                        npix,
                        spec.patch(),
                        dy,
                        npix,
                        1,
                        cols,
                        1,
                        npix,
                        1.0,
                        gw,
                    );
                }
                if let Some(gb) = self.slot(g, *b) {
                    for (o, row) in dy.chunks(npix).enumerate() {
                        gb[o] += row.iter().sum::<f64>();
                    }
                }
                if self.needs(*x) {
                    let mut dcols = vec![0.0; spec.patch() * npix];
                    gemm(
                        spec.patch(),
                        spec.out_channels,
                        npix,
                        self.value(*w),
                        1,
                        spec.patch(),
                        dy,
                        npix,
                        1,
                        0.0,
                        &mut dcols,
                    );
                    if let Some(gx) = self.slot(g, *x) {
                        col2im_add(&dcols, spec, gx);
                    }
                }
            }
            Op::GlobalAvgPool(x) => {
                let (c, p) = self.shape(*x);
                if let Some(gx) = self.slot(g, *x) {
                    for i in 0..c {
                        let d = dy[i] / p as f64;
                        gx[i * p..(i + 1) * p].iter_mut().for_each(|v| *v += d);
                    }
                }
            }
        }
    }
}
