//! A small reverse-mode tape over dense tensors.
//!
//! The tape is generic over its scalar. With [`Dual`] scalars, running the
//! reverse pass on dual-valued inputs differentiates a gradient once more in
//! a chosen direction (forward-over-reverse), which is how the R1 penalty's
//! parameter gradient is obtained without a second tape.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Real:
    Copy
    + Debug
    + Default
    + PartialEq
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
{
    fn from_f64(v: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn scale(self, k: f64) -> Self {
        self * Self::from_f64(k)
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn scale(self, k: f64) -> Self {
        self * k
    }
}

/// First-order dual number `re + eps·ε`, `ε² = 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub fn new(re: f64, eps: f64) -> Self {
        Self { re, eps }
    }
}

impl Add for Dual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl Sub for Dual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl Mul for Dual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Dual::new(self.re * o.re, self.eps * o.re + self.re * o.eps)
    }
}

impl Div for Dual {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        Dual::new(self.re / o.re, (self.eps * o.re - self.re * o.eps) / (o.re * o.re))
    }
}

impl Neg for Dual {
    type Output = Self;
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.eps)
    }
}

impl AddAssign for Dual {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl SubAssign for Dual {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl MulAssign for Dual {
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl Sum for Dual {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Dual::default(), |a, b| a + b)
    }
}

impl Real for Dual {
    fn from_f64(v: f64) -> Self {
        Dual::new(v, 0.0)
    }
    fn value(self) -> f64 {
        self.re
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, self.eps * e)
    }
    fn ln(self) -> Self {
        Dual::new(self.re.ln(), self.eps / self.re)
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Dual::new(s, self.eps / (2.0 * s))
    }
    fn scale(self, k: f64) -> Self {
        Dual::new(self.re * k, self.eps * k)
    }
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<R> {
    pub shape: Vec<usize>,
    pub data: Vec<R>,
}

impl<R: Real> Tensor<R> {
    pub fn new(shape: Vec<usize>, data: Vec<R>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape {shape:?} does not match data");
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![R::zero(); n],
        }
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Self {
        Self::new(shape, data.iter().map(|&v| R::from_f64(v)).collect())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.value()).collect()
    }

    /// Rows and columns when viewed as a matrix over the last axis.
    fn as_matrix(&self) -> (usize, usize) {
        let cols = *self.shape.last().unwrap_or(&1);
        (self.data.len() / cols.max(1), cols)
    }
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// `x [.., N] + b [N]`.
    AddRowBias(Var, Var),
    /// `x [C, ..] + b [C]`.
    AddChannelBias(Var, Var),
    MatMul(Var, Var),
    /// `a [M, K] · b[N, K]ᵀ`.
    MatMulNt(Var, Var),
    Transpose(Var),
    LeakyRelu(Var, f64),
    Softplus(Var),
    Sum(Var),
    Reshape(Var),
    /// Column-wise concatenation of matrices with equal row counts.
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    SoftmaxRows(Var),
    Conv2d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    },
    Upsample2x(Var),
    Modulate {
        w: Var,
        s: Var,
        demod: bool,
    },
}

#[derive(Debug, Clone)]
struct Node<R> {
    op: Op,
    value: Tensor<R>,
}

/// Records operations and replays them backwards.
#[derive(Debug, Clone, Default)]
pub struct Tape<R> {
    nodes: Vec<Node<R>>,
}

/// Demodulation epsilon added to the squared weight norm.
pub const DEMOD_EPS: f64 = 1e-8;

fn sigmoid<R: Real>(x: R) -> R {
    let one = R::from_f64(1.0);
    if x.value() >= 0.0 {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

fn softplus<R: Real>(x: R) -> R {
    let one = R::from_f64(1.0);
    if x.value() > 0.0 {
        x + (one + (-x).exp()).ln()
    } else {
        (one + x.exp()).ln()
    }
}

fn conv_out(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

/// Bilinear source taps for 2x upsampling with half-pixel centers.
fn upsample_taps(out: usize, n: usize) -> (usize, usize, f64) {
    let src = (out as f64 + 0.5) / 2.0 - 0.5;
    let lo = src.floor();
    let f = src - lo;
    let clamp = |i: f64| i.max(0.0).min(n as f64 - 1.0) as usize;
    (clamp(lo), clamp(lo + 1.0), f)
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor<R>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn leaf(&mut self, t: Tensor<R>) -> Var {
        self.push(Op::Leaf, t)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape, y.shape, "add shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| *p + *q).collect();
        let shape = x.shape.clone();
        self.push(Op::Add(a, b), Tensor::new(shape, data))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape, y.shape, "mul shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| *p * *q).collect();
        let shape = x.shape.clone();
        self.push(Op::Mul(a, b), Tensor::new(shape, data))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.shape.clone(), x.data.iter().map(|v| v.scale(k)).collect());
        self.push(Op::Scale(a, k), t)
    }

    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(b));
        let (_, cols) = xv.as_matrix();
        assert_eq!(bv.len(), cols, "row bias length mismatch");
        let data = xv.data.iter().enumerate().map(|(i, v)| *v + bv.data[i % cols]).collect();
        let shape = xv.shape.clone();
        self.push(Op::AddRowBias(x, b), Tensor::new(shape, data))
    }

    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(b));
        let c = xv.shape[0];
        assert_eq!(bv.len(), c, "channel bias length mismatch");
        let per = xv.len() / c;
        let data = xv.data.iter().enumerate().map(|(i, v)| *v + bv.data[i / per]).collect();
        let shape = xv.shape.clone();
        self.push(Op::AddChannelBias(x, b), Tensor::new(shape, data))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        let (m, k) = x.as_matrix();
        let (k2, n) = y.as_matrix();
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let mut out = vec![R::zero(); m * n];
        for i in 0..m {
            for p in 0..k {
                let a_ip = x.data[i * k + p];
                let row = &y.data[p * n..(p + 1) * n];
                for (o, bv) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                    *o += a_ip * *bv;
                }
            }
        }
        self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], out))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        let (m, k) = x.as_matrix();
        let (n, k2) = (y.shape[0], y.len() / y.shape[0]);
        assert_eq!(k, k2, "matmul_nt inner dimension mismatch");
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = &x.data[i * k..(i + 1) * k];
            for j in 0..n {
                let col = &y.data[j * k..(j + 1) * k];
                out.push(row.iter().zip(col).map(|(p, q)| *p * *q).sum());
            }
        }
        self.push(Op::MatMulNt(a, b), Tensor::new(vec![m, n], out))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (m, n) = x.as_matrix();
        let mut out = Vec::with_capacity(m * n);
        for j in 0..n {
            for i in 0..m {
                out.push(x.data[i * n + j]);
            }
        }
        self.push(Op::Transpose(a), Tensor::new(vec![n, m], out))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let x = self.value(a);
        let data = x.data.iter().map(|v| if v.value() > 0.0 { *v } else { v.scale(slope) }).collect();
        let shape = x.shape.clone();
        self.push(Op::LeakyRelu(a, slope), Tensor::new(shape, data))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data.iter().map(|v| softplus(*v)).collect();
        let shape = x.shape.clone();
        self.push(Op::Softplus(a), Tensor::new(shape, data))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().copied().sum();
        self.push(Op::Sum(a), Tensor::new(vec![1], vec![s]))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let x = self.value(a);
        assert_eq!(shape.iter().product::<usize>(), x.len(), "reshape size mismatch");
        let t = Tensor::new(shape, x.data.clone());
        self.push(Op::Reshape(a), t)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).as_matrix().0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.value(p).as_matrix();
                assert_eq!(r, rows, "concat row mismatch");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data[i * w..(i + 1) * w]);
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()), Tensor::new(vec![rows, total], out))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        let (m, n) = x.as_matrix();
        assert!(start < end && end <= n, "column slice out of range");
        let mut out = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            out.extend_from_slice(&x.data[i * n + start..i * n + end]);
        }
        self.push(Op::SliceCols(a, start, end), Tensor::new(vec![m, end - start], out))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (m, n) = x.as_matrix();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = &x.data[i * n..(i + 1) * n];
            let max = row.iter().map(|v| v.value()).fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<R> = row.iter().map(|v| (*v - R::from_f64(max)).exp()).collect();
            let s: R = e.iter().copied().sum();
            out.extend(e.into_iter().map(|v| v / s));
        }
        let shape = x.shape.clone();
        self.push(Op::SoftmaxRows(a), Tensor::new(shape, out))
    }

    /// `x [Cin, H, W]` convolved with `w [Cout, Cin, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let (cin, h, wd) = (xv.shape[0], xv.shape[1], xv.shape[2]);
        let (cout, cin2, k) = (wv.shape[0], wv.shape[1], wv.shape[2]);
        assert_eq!(cin, cin2, "conv channel mismatch");
        let (ho, wo) = (conv_out(h, k, stride, pad), conv_out(wd, k, stride, pad));
        let mut out = vec![R::zero(); cout * ho * wo];
        for o in 0..cout {
            for c in 0..cin {
                for u in 0..k {
                    for v in 0..k {
                        let wt = wv.data[((o * cin + c) * k + u) * k + v];
                        for i in 0..ho {
                            let y = (i * stride + u) as isize - pad as isize;
                            if y < 0 || y >= h as isize {
                                continue;
                            }
                            let xrow = &xv.data[(c * h + y as usize) * wd..(c * h + y as usize + 1) * wd];
                            let orow = &mut out[(o * ho + i) * wo..(o * ho + i + 1) * wo];
                            for (j, ov) in orow.iter_mut().enumerate() {
                                let xx = (j * stride + v) as isize - pad as isize;
                                if xx >= 0 && xx < wd as isize {
                                    *ov += wt * xrow[xx as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        self.push(Op::Conv2d { x, w, stride, pad }, Tensor::new(vec![cout, ho, wo], out))
    }

    /// Bilinear 2x upsampling of `x [C, H, W]`.
    pub fn upsample2x(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
        let mut out = Vec::with_capacity(c * 4 * h * w);
        for ch in 0..c {
            let plane = &x.data[ch * h * w..(ch + 1) * h * w];
            for i in 0..2 * h {
                let (y0, y1, fy) = upsample_taps(i, h);
                for j in 0..2 * w {
                    let (x0, x1, fx) = upsample_taps(j, w);
                    let top = plane[y0 * w + x0].scale(1.0 - fx) + plane[y0 * w + x1].scale(fx);
                    let bot = plane[y1 * w + x0].scale(1.0 - fx) + plane[y1 * w + x1].scale(fx);
                    out.push(top.scale(1.0 - fy) + bot.scale(fy));
                }
            }
        }
        self.push(Op::Upsample2x(a), Tensor::new(vec![c, 2 * h, 2 * w], out))
    }

    /// Scales `w [Cout, Cin, ..]` by `s [Cin]` along its input axis and,
    /// with `demod`, renormalizes every output filter to unit norm.
    pub fn modulate(&mut self, w: Var, s: Var, demod: bool) -> Var {
        let (wv, sv) = (self.value(w), self.value(s));
        let (cout, cin) = (wv.shape[0], wv.shape[1]);
        assert_eq!(sv.len(), cin, "style length mismatch");
        let per_out = wv.len() / cout;
        let taps = per_out / cin;
        let mut out: Vec<R> = wv.data.iter().enumerate().map(|(i, v)| *v * sv.data[(i % per_out) / taps]).collect();
        if demod {
            for row in out.chunks_exact_mut(per_out) {
                let ss: R = row.iter().map(|v| *v * *v).sum();
                let d = R::from_f64(1.0) / (ss + R::from_f64(DEMOD_EPS)).sqrt();
                row.iter_mut().for_each(|v| *v *= d);
            }
        }
        let shape = wv.shape.clone();
        self.push(Op::Modulate { w, s, demod }, Tensor::new(shape, out))
    }

    /// Reverse pass from `output`, seeded with `seed` (same shape).
    pub fn backward(&self, output: Var, seed: Vec<R>) -> Grads<R> {
        self.backward_many(vec![(output, seed)])
    }

    /// Reverse pass seeded at several nodes at once.
    pub fn backward_many(&self, seeds: Vec<(Var, Vec<R>)>) -> Grads<R> {
        let mut grads: Vec<Option<Vec<R>>> = vec![None; self.nodes.len()];
        let mut last = 0;
        for (v, seed) in seeds {
            assert_eq!(seed.len(), self.value(v).len(), "seed length mismatch");
            last = last.max(v.0);
            match &mut grads[v.0] {
                Some(g) => g.iter_mut().zip(&seed).for_each(|(a, b)| *a += *b),
                slot => *slot = Some(seed),
            }
        }
        for idx in (0..=last).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn accumulate(grads: &mut [Option<Vec<R>>], v: Var, len: usize, f: impl FnOnce(&mut [R])) {
        let slot = grads[v.0].get_or_insert_with(|| vec![R::zero(); len]);
        f(slot);
    }

    fn propagate(&self, op: &Op, out: &Tensor<R>, g: &[R], grads: &mut [Option<Vec<R>>]) {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    Self::accumulate(grads, v, g.len(), |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += *y));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                Self::accumulate(grads, *a, g.len(), |d| {
                    for i in 0..g.len() {
                        d[i] += g[i] * bv[i];
                    }
                });
                Self::accumulate(grads, *b, g.len(), |d| {
                    for i in 0..g.len() {
                        d[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(a, k) => Self::accumulate(grads, *a, g.len(), |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y.scale(*k))),
            Op::AddRowBias(x, b) => {
                Self::accumulate(grads, *x, g.len(), |d| d.iter_mut().zip(g).for_each(|(p, q)| *p += *q));
                let cols = self.value(*b).len();
                Self::accumulate(grads, *b, cols, |d| {
                    for (i, v) in g.iter().enumerate() {
                        d[i % cols] += *v;
                    }
                });
            }
            Op::AddChannelBias(x, b) => {
                Self::accumulate(grads, *x, g.len(), |d| d.iter_mut().zip(g).for_each(|(p, q)| *p += *q));
                let c = self.value(*b).len();
                let per = g.len() / c;
                Self::accumulate(grads, *b, c, |d| {
                    for (i, v) in g.iter().enumerate() {
                        d[i / per] += *v;
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (m, k) = x.as_matrix();
                let n = y.as_matrix().1;
                Self::accumulate(grads, *a, m * k, |d| {
                    for i in 0..m {
                        for p in 0..k {
                            let row = &y.data[p * n..(p + 1) * n];
                            d[i * k + p] += g[i * n..(i + 1) * n].iter().zip(row).map(|(u, v)| *u * *v).sum::<R>();
                        }
                    }
                });
                Self::accumulate(grads, *b, k * n, |d| {
                    for i in 0..m {
                        for p in 0..k {
                            let a_ip = x.data[i * k + p];
                            for j in 0..n {
                                d[p * n + j] += a_ip * g[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::MatMulNt(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (m, k) = x.as_matrix();
                let n = y.shape[0];
                Self::accumulate(grads, *a, m * k, |d| {
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            for p in 0..k {
                                d[i * k + p] += gij * y.data[j * k + p];
                            }
                        }
                    }
                });
                Self::accumulate(grads, *b, n * k, |d| {
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            for p in 0..k {
                                d[j * k + p] += gij * x.data[i * k + p];
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (n, m) = (out.shape[0], out.shape[1]);
                Self::accumulate(grads, *a, g.len(), |d| {
                    for j in 0..n {
                        for i in 0..m {
                            d[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::LeakyRelu(a, slope) => {
                let x = &self.value(*a).data;
                Self::accumulate(grads, *a, g.len(), |d| {
                    for i in 0..g.len() {
                        d[i] += if x[i].value() > 0.0 { g[i] } else { g[i].scale(*slope) };
                    }
                });
            }
            Op::Softplus(a) => {
                let x = &self.value(*a).data;
                Self::accumulate(grads, *a, g.len(), |d| {
                    for i in 0..g.len() {
                        d[i] += g[i] * sigmoid(x[i]);
                    }
                });
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                Self::accumulate(grads, *a, n, |d| d.iter_mut().for_each(|x| *x += g[0]));
            }
            Op::Reshape(a) => Self::accumulate(grads, *a, g.len(), |d| d.iter_mut().zip(g).for_each(|(p, q)| *p += *q)),
            Op::ConcatCols(parts) => {
                let total = out.shape[1];
                let rows = out.shape[0];
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).as_matrix().1;
                    Self::accumulate(grads, p, rows * w, |d| {
                        for i in 0..rows {
                            for j in 0..w {
                                d[i * w + j] += g[i * total + offset + j];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                let (m, n) = self.value(*a).as_matrix();
                let w = end - start;
                Self::accumulate(grads, *a, m * n, |d| {
                    for i in 0..m {
                        for j in 0..w {
                            d[i * n + start + j] += g[i * w + j];
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let (m, n) = out.as_matrix();
                Self::accumulate(grads, *a, m * n, |d| {
                    for i in 0..m {
                        let y = &out.data[i * n..(i + 1) * n];
                        let gr = &g[i * n..(i + 1) * n];
                        let dot: R = y.iter().zip(gr).map(|(p, q)| *p * *q).sum();
                        for j in 0..n {
                            d[i * n + j] += y[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Conv2d { x, w, stride, pad } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (cin, h, wd) = (xv.shape[0], xv.shape[1], xv.shape[2]);
                let (cout, k) = (wv.shape[0], wv.shape[2]);
                let (ho, wo) = (out.shape[1], out.shape[2]);
                let (stride, pad) = (*stride, *pad);
                let mut dx = vec![R::zero(); xv.len()];
                let mut dw = vec![R::zero(); wv.len()];
                for o in 0..cout {
                    for c in 0..cin {
                        for u in 0..k {
                            for v in 0..k {
                                let wi = ((o * cin + c) * k + u) * k + v;
                                let wt = wv.data[wi];
                                let mut acc = R::zero();
                                for i in 0..ho {
                                    let y = (i * stride + u) as isize - pad as isize;
                                    if y < 0 || y >= h as isize {
                                        continue;
                                    }
                                    let base = (c * h + y as usize) * wd;
                                    for j in 0..wo {
                                        let xx = (j * stride + v) as isize - pad as isize;
                                        if xx >= 0 && xx < wd as isize {
                                            let gv = g[(o * ho + i) * wo + j];
                                            acc += gv * xv.data[base + xx as usize];
                                            dx[base + xx as usize] += gv * wt;
                                        }
                                    }
                                }
                                dw[wi] += acc;
                            }
                        }
                    }
                }
                Self::accumulate(grads, *x, dx.len(), |d| d.iter_mut().zip(&dx).for_each(|(p, q)| *p += *q));
                Self::accumulate(grads, *w, dw.len(), |d| d.iter_mut().zip(&dw).for_each(|(p, q)| *p += *q));
            }
            Op::Upsample2x(a) => {
                let x = self.value(*a);
                let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
                Self::accumulate(grads, *a, x.len(), |d| {
                    let mut idx = 0;
                    for ch in 0..c {
                        let base = ch * h * w;
                        for i in 0..2 * h {
                            let (y0, y1, fy) = upsample_taps(i, h);
                            for j in 0..2 * w {
                                let (x0, x1, fx) = upsample_taps(j, w);
                                let gv = g[idx];
                                idx += 1;
                                d[base + y0 * w + x0] += gv.scale((1.0 - fy) * (1.0 - fx));
                                d[base + y0 * w + x1] += gv.scale((1.0 - fy) * fx);
                                d[base + y1 * w + x0] += gv.scale(fy * (1.0 - fx));
                                d[base + y1 * w + x1] += gv.scale(fy * fx);
                            }
                        }
                    }
                });
            }
            Op::Modulate { w, s, demod } => {
                let (wv, sv) = (self.value(*w), self.value(*s));
                let (cout, cin) = (wv.shape[0], wv.shape[1]);
                let per_out = wv.len() / cout;
                let taps = per_out / cin;
                // gradient w.r.t. the modulated (pre-demodulation) weights
                let mut d_mod = g.to_vec();
                if *demod {
                    for o in 0..cout {
                        let row = o * per_out..(o + 1) * per_out;
                        let w1: Vec<R> = (row.clone()).map(|i| wv.data[i] * sv.data[(i % per_out) / taps]).collect();
                        let ss: R = w1.iter().map(|v| *v * *v).sum();
                        let dinv = R::from_f64(1.0) / (ss + R::from_f64(DEMOD_EPS)).sqrt();
                        let gw: R = g[row.clone()].iter().zip(&w1).map(|(p, q)| *p * *q).sum();
                        let d3 = dinv * dinv * dinv;
                        for (k, i) in row.enumerate() {
                            d_mod[i] = g[i] * dinv - d3 * w1[k] * gw;
                        }
                    }
                }
                Self::accumulate(grads, *w, wv.len(), |d| {
                    for i in 0..d.len() {
                        d[i] += d_mod[i] * sv.data[(i % per_out) / taps];
                    }
                });
                Self::accumulate(grads, *s, cin, |d| {
                    for (i, dm) in d_mod.iter().enumerate() {
                        d[(i % per_out) / taps] += *dm * wv.data[i];
                    }
                });
            }
        }
    }
}

/// Gradients of one reverse pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Grads<R> {
    grads: Vec<Option<Vec<R>>>,
}

impl<R: Real> Grads<R> {
    pub fn get(&self, v: Var) -> Option<&[R]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zeros when it did not influence the output.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<R> {
        self.get(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![R::zero(); len])
    }
}
