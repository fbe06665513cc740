//! Differentiable operations: forward methods on [`Graph`] and the matching
//! backward rules.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Node, Var};
use crate::kernels::{col2im, gemm, im2col, Window};
use crate::real::Real;
use crate::tensor::numel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    /// Exact `x * Phi(x)`.
    Gelu,
    Sigmoid,
    Tanh,
    Abs,
    LogSigmoid,
    Exp,
}

/// Backward rule of a user-defined op: `(input values, output value,
/// upstream gradient) -> gradient per input`.
pub type CustomRule<F> = Box<dyn Fn(&[&[F]], &[F], &[F]) -> Vec<Vec<F>>>;

pub(crate) enum Op<F: Real> {
    Leaf,
    Binary { a: Var, b: Var, kind: BinaryKind },
    Scale { a: Var, c: F },
    MatMul { a: Var, b: Var },
    Transpose { a: Var },
    Reshape { a: Var },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { a: Var, axis: usize, start: usize },
    Sum { a: Var },
    Mean { a: Var },
    MeanAxis0 { a: Var },
    Unary { a: Var, kind: UnaryKind },
    Softmax { a: Var },
    LogSoftmax { a: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, stats: Vec<F> },
    Conv1d { x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize, groups: usize },
    ConvTranspose1d { x: Var, w: Var, b: Option<Var>, stride: usize },
    CosineRows { a: Var, b: Var, eps: F },
    Custom { inputs: Vec<Var>, rule: CustomRule<F> },
}

impl<F: Real> Op<F> {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Binary { a, b, .. } | Op::MatMul { a, b } | Op::CosineRows { a, b, .. } => {
                vec![*a, *b]
            }
            Op::Scale { a, .. }
            | Op::Transpose { a }
            | Op::Reshape { a }
            | Op::Slice { a, .. }
            | Op::Sum { a }
            | Op::Mean { a }
            | Op::MeanAxis0 { a }
            | Op::Unary { a, .. }
            | Op::Softmax { a }
            | Op::LogSoftmax { a } => vec![*a],
            Op::Concat { parts, .. } => parts.clone(),
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Conv1d { x, w, b, .. } | Op::ConvTranspose1d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

fn std_normal_cdf<F: Real>(x: F) -> F {
    F::lit(0.5) * (F::one() + (x * F::lit(FRAC_1_SQRT_2)).erf())
}

fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn unary_forward<F: Real>(kind: UnaryKind, x: F) -> F {
    match kind {
        UnaryKind::Gelu => x * std_normal_cdf(x),
        UnaryKind::Sigmoid => sigmoid(x),
        UnaryKind::Tanh => x.tanh(),
        UnaryKind::Abs => x.abs(),
        UnaryKind::LogSigmoid => x.min(F::zero()) - (-x.abs()).exp().ln_1p(),
        UnaryKind::Exp => x.exp(),
    }
}

fn unary_derivative<F: Real>(kind: UnaryKind, x: F, y: F) -> F {
    match kind {
        UnaryKind::Gelu => std_normal_cdf(x) + x * F::lit(std_normal_pdf(x.to_f64())),
        UnaryKind::Sigmoid => y * (F::one() - y),
        UnaryKind::Tanh => F::one() - y * y,
        UnaryKind::Abs => {
            if x > F::zero() {
                F::one()
            } else if x < F::zero() {
                -F::one()
            } else {
                F::zero()
            }
        }
        UnaryKind::LogSigmoid => sigmoid(-x),
        UnaryKind::Exp => y,
    }
}

/// Split of a shape around `axis`: (outer, axis length, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

fn fold_suffix<F: Real>(g: &[F], inner: usize) -> Vec<F> {
    let mut out = vec![F::zero(); inner];
    for chunk in g.chunks(inner) {
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
}

fn row_sums<F: Real>(g: &[F], rows: usize) -> Vec<F> {
    let len = g.len() / rows;
    g.chunks(len).map(|r| r.iter().copied().sum()).collect()
}

impl<F: Real> Graph<F> {
    fn binary(&mut self, name: &'static str, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !sa.ends_with(sb) {
            return Err(TensorError::shape(name, sa, sb));
        }
        let inner = numel(sb).max(1);
        let shape = sa.to_vec();
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(va.len());
        for chunk in va.chunks(inner) {
            match kind {
                BinaryKind::Add => out.extend(chunk.iter().zip(vb).map(|(&x, &y)| x + y)),
                BinaryKind::Sub => out.extend(chunk.iter().zip(vb).map(|(&x, &y)| x - y)),
                BinaryKind::Mul => out.extend(chunk.iter().zip(vb).map(|(&x, &y)| x * y)),
            }
        }
        self.push(name, shape, out, Op::Binary { a, b, kind })
    }

    /// Elementwise sum. `b` broadcasts when its shape is a suffix of `a`'s.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, BinaryKind::Mul)
    }

    pub fn scale(&mut self, a: Var, c: F) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let out = self.value(a).iter().map(|&x| x * c).collect();
        self.push("scale", shape, out, Op::Scale { a, c })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        gemm(false, false, m, n, k, self.value(a), self.value(b), &mut out, F::zero());
        self.push("matmul", vec![m, n], out, Op::MatMul { a, b })
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(TensorError::invalid("transpose", format!("expected rank 2, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let out = transpose2(self.value(a), r, c);
        self.push("transpose", vec![c, r], out, Op::Transpose { a })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != numel(self.shape(a)) {
            return Err(TensorError::shape("reshape", self.shape(a), shape));
        }
        let out = self.value(a).to_vec();
        self.push("reshape", shape.to_vec(), out, Op::Reshape { a })
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::invalid("concat", "no inputs"));
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::invalid("concat", format!("axis {axis} out of range")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(TensorError::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p)[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push("concat", shape, out, Op::Concat { parts: parts.to_vec(), axis })
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || start + len > s[axis] || len == 0 {
            return Err(TensorError::invalid(
                "slice",
                format!("range {start}..{} on axis {axis} of {s:?}", start + len),
            ));
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let v = self.value(a);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&v[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        self.push("slice", shape, out, Op::Slice { a, axis, start })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: F = self.value(a).iter().copied().sum();
        self.push("sum", vec![], vec![s], Op::Sum { a })
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let s: F = v.iter().copied().sum::<F>() / F::lit(v.len() as f64);
        self.push("mean", vec![], vec![s], Op::Mean { a })
    }

    /// Mean over the leading axis: `[m, ..] -> [..]`.
    pub fn mean_axis0(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.is_empty() || s[0] == 0 {
            return Err(TensorError::invalid("mean_axis0", format!("shape {s:?}")));
        }
        let m = s[0];
        let inner = numel(&s[1..]);
        let mut out = fold_suffix(self.value(a), inner);
        let inv = F::lit(1.0 / m as f64);
        out.iter_mut().for_each(|x| *x *= inv);
        self.push("mean_axis0", s[1..].to_vec(), out, Op::MeanAxis0 { a })
    }

    pub fn unary(&mut self, a: Var, kind: UnaryKind) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let out = self.value(a).iter().map(|&x| unary_forward(kind, x)).collect();
        let name = match kind {
            UnaryKind::Gelu => "gelu",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Tanh => "tanh",
            UnaryKind::Abs => "abs",
            UnaryKind::LogSigmoid => "log_sigmoid",
            UnaryKind::Exp => "exp",
        };
        self.push(name, shape, out, Op::Unary { a, kind })
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, UnaryKind::Gelu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, UnaryKind::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, UnaryKind::Tanh)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, UnaryKind::Abs)
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, UnaryKind::LogSigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, UnaryKind::Exp)
    }

    fn last_axis(&self, name: &'static str, a: Var) -> Result<usize> {
        match self.shape(a).last() {
            Some(&n) if n > 0 => Ok(n),
            _ => Err(TensorError::invalid(name, "needs a non-empty last axis")),
        }
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let n = self.last_axis("softmax", a)?;
        let shape = self.shape(a).to_vec();
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut z = F::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                z += *x;
            }
            row.iter_mut().for_each(|x| *x /= z);
        }
        self.push("softmax", shape, out, Op::Softmax { a })
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let n = self.last_axis("log_softmax", a)?;
        let shape = self.shape(a).to_vec();
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<F>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.push("log_softmax", shape, out, Op::LogSoftmax { a })
    }

    /// Normalizes over the last axis, then applies `gamma * x + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let d = self.last_axis("layer_norm", x)?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(TensorError::shape("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let shape = self.shape(x).to_vec();
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let inv_d = F::lit(1.0 / d as f64);
        let mut out = Vec::with_capacity(xv.len());
        let mut stats = Vec::with_capacity(2 * xv.len() / d);
        for row in xv.chunks(d) {
            let mu = row.iter().copied().sum::<F>() * inv_d;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<F>() * inv_d;
            let rstd = F::one() / (var + F::lit(eps)).sqrt();
            out.extend(row.iter().zip(gv.iter().zip(bv)).map(|(&v, (&g, &b))| (v - mu) * rstd * g + b));
            stats.push(mu);
            stats.push(rstd);
        }
        self.push("layer_norm", shape, out, Op::LayerNorm { x, gamma, beta, stats })
    }

    /// 1-D convolution (cross-correlation) of `x: [C_in, L]` with
    /// `w: [C_out, C_in / groups, K]`, zero padding on both ends.
    /// Output length is `(L + 2*padding - K) / stride + 1`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 2 || sw.len() != 3 || groups == 0 {
            return Err(TensorError::shape("conv1d", &sx, &sw));
        }
        let (c_in, len) = (sx[0], sx[1]);
        let (c_out, cpg, k) = (sw[0], sw[1], sw[2]);
        if c_in % groups != 0 || c_out % groups != 0 || cpg * groups != c_in {
            return Err(TensorError::shape("conv1d", &sx, &sw));
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(TensorError::shape("conv1d", &sw, self.shape(b)));
            }
        }
        let win = Window::sweep(len, k, stride, padding).ok_or(TensorError::KernelTooLarge {
            op: "conv1d",
            kernel: k,
            len: len + 2 * padding,
        })?;
        let cog = c_out / groups;
        let l_out = win.positions;
        let mut out = vec![F::zero(); c_out * l_out];
        let (xv, wv) = (self.value(x), self.value(w));
        for g in 0..groups {
            let cols = im2col(xv, g * cpg, cpg, &win);
            gemm(
                false,
                false,
                cog,
                l_out,
                cpg * k,
                &wv[g * cog * cpg * k..(g + 1) * cog * cpg * k],
                &cols,
                &mut out[g * cog * l_out..(g + 1) * cog * l_out],
                F::zero(),
            );
        }
        if let Some(b) = b {
            for (row, &bias) in out.chunks_mut(l_out).zip(self.value(b)) {
                row.iter_mut().for_each(|v| *v += bias);
            }
        }
        self.push("conv1d", vec![c_out, l_out], out, Op::Conv1d { x, w, b, stride, padding, groups })
    }

    /// Transposed 1-D convolution of `x: [C_in, L]` with
    /// `w: [C_in, C_out, K]`; output is `[C_out, (L - 1) * stride + K]`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 2 || sw.len() != 3 || sx[0] != sw[0] || stride == 0 || sw[2] == 0 || sx[1] == 0 {
            return Err(TensorError::shape("conv_transpose1d", &sx, &sw));
        }
        let (c_in, len) = (sx[0], sx[1]);
        let (c_out, k) = (sw[1], sw[2]);
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(TensorError::shape("conv_transpose1d", &sw, self.shape(b)));
            }
        }
        let l_out = (len - 1) * stride + k;
        let win = Window::sweep(l_out, k, stride, 0).expect("valid transposed geometry");
        debug_assert_eq!(win.positions, len);
        let mut cols = vec![F::zero(); c_out * k * len];
        gemm(true, false, c_out * k, len, c_in, self.value(w), self.value(x), &mut cols, F::zero());
        let mut out = vec![F::zero(); c_out * l_out];
        col2im(&cols, &mut out, 0, c_out, &win);
        if let Some(b) = b {
            for (row, &bias) in out.chunks_mut(l_out).zip(self.value(b)) {
                row.iter_mut().for_each(|v| *v += bias);
            }
        }
        self.push("conv_transpose1d", vec![c_out, l_out], out, Op::ConvTranspose1d { x, w, b, stride })
    }

    /// Row-wise cosine similarity of two `[T, d]` tensors, giving `[T]`.
    /// Norms are floored at `eps`.
    pub fn cosine_rows(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb || sa.len() != 2 || sa[1] == 0 {
            return Err(TensorError::shape("cosine_rows", sa, sb));
        }
        let (t, d) = (sa[0], sa[1]);
        let eps = F::lit(eps);
        let (va, vb) = (self.value(a), self.value(b));
        let out = (0..t)
            .map(|i| {
                let (ra, rb) = (&va[i * d..(i + 1) * d], &vb[i * d..(i + 1) * d]);
                let dot: F = ra.iter().zip(rb).map(|(&x, &y)| x * y).sum();
                let na = ra.iter().map(|&x| x * x).sum::<F>().sqrt().max(eps);
                let nb = rb.iter().map(|&x| x * x).sum::<F>().sqrt().max(eps);
                dot / (na * nb)
            })
            .collect();
        self.push("cosine_rows", vec![t], out, Op::CosineRows { a, b, eps })
    }

    /// Registers an op with a caller-supplied forward value and backward
    /// rule.
    pub fn custom(&mut self, inputs: &[Var], shape: Vec<usize>, value: Vec<F>, rule: CustomRule<F>) -> Result<Var> {
        if numel(&shape) != value.len() {
            return Err(TensorError::shape("custom", &shape, &[value.len()]));
        }
        self.push("custom", shape, value, Op::Custom { inputs: inputs.to_vec(), rule })
    }
}

fn transpose2<F: Real>(v: &[F], r: usize, c: usize) -> Vec<F> {
    let mut out = vec![F::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = v[i * c + j];
        }
    }
    out
}

/// Gradient contributions of node `i` to its inputs, given the upstream
/// gradient `g` of its output. Inputs that do not require grad are skipped.
pub(crate) fn backward<F: Real>(nodes: &[Node<F>], i: usize, g: &[F]) -> Vec<(Var, Vec<F>)> {
    let node = &nodes[i];
    let needs = |v: &Var| nodes[v.0].requires_grad;
    let val = |v: &Var| nodes[v.0].value.as_slice();
    let shape = |v: &Var| nodes[v.0].shape.as_slice();
    let mut out = Vec::new();
    match &node.op {
        Op::Leaf => {}
        Op::Binary { a, b, kind } => {
            let inner = numel(shape(b)).max(1);
            match kind {
                BinaryKind::Add | BinaryKind::Sub => {
                    if needs(a) {
                        out.push((*a, g.to_vec()));
                    }
                    if needs(b) {
                        let mut db = fold_suffix(g, inner);
                        if *kind == BinaryKind::Sub {
                            db.iter_mut().for_each(|x| *x = -*x);
                        }
                        out.push((*b, db));
                    }
                }
                BinaryKind::Mul => {
                    let (va, vb) = (val(a), val(b));
                    if needs(a) {
                        let da = g.chunks(inner).flat_map(|gc| gc.iter().zip(vb).map(|(&x, &y)| x * y)).collect();
                        out.push((*a, da));
                    }
                    if needs(b) {
                        let prod: Vec<F> = g.iter().zip(va).map(|(&x, &y)| x * y).collect();
                        out.push((*b, fold_suffix(&prod, inner)));
                    }
                }
            }
        }
        Op::Scale { a, c } => out.push((*a, g.iter().map(|&x| x * *c).collect())),
        Op::MatMul { a, b } => {
            let (m, k) = (shape(a)[0], shape(a)[1]);
            let n = shape(b)[1];
            if needs(a) {
                let mut da = vec![F::zero(); m * k];
                gemm(false, true, m, k, n, g, val(b), &mut da, F::zero());
                out.push((*a, da));
            }
            if needs(b) {
                let mut db = vec![F::zero(); k * n];
                gemm(true, false, k, n, m, val(a), g, &mut db, F::zero());
                out.push((*b, db));
            }
        }
        Op::Transpose { a } => {
            let (r, c) = (shape(a)[0], shape(a)[1]);
            out.push((*a, transpose2(g, c, r)));
        }
        Op::Reshape { a } => out.push((*a, g.to_vec())),
        Op::Concat { parts, axis } => {
            let (outer, total, inner) = split_axis(&node.shape, *axis);
            let mut offset = 0;
            for p in parts {
                let n = shape(p)[*axis];
                if needs(p) {
                    let mut dp = Vec::with_capacity(outer * n * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        dp.extend_from_slice(&g[base..base + n * inner]);
                    }
                    out.push((*p, dp));
                }
                offset += n;
            }
        }
        Op::Slice { a, axis, start } => {
            let (outer, n, inner) = split_axis(shape(a), *axis);
            let len = node.shape[*axis];
            let mut da = vec![F::zero(); numel(shape(a))];
            for o in 0..outer {
                let dst = (o * n + start) * inner;
                da[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            out.push((*a, da));
        }
        Op::Sum { a } => out.push((*a, vec![g[0]; val(a).len()])),
        Op::Mean { a } => {
            let n = val(a).len();
            out.push((*a, vec![g[0] / F::lit(n as f64); n]));
        }
        Op::MeanAxis0 { a } => {
            let m = shape(a)[0];
            let inv = F::lit(1.0 / m as f64);
            let row: Vec<F> = g.iter().map(|&x| x * inv).collect();
            out.push((*a, row.repeat(m)));
        }
        Op::Unary { a, kind } => {
            let da = g
                .iter()
                .zip(val(a).iter().zip(&node.value))
                .map(|(&gi, (&x, &y))| gi * unary_derivative(*kind, x, y))
                .collect();
            out.push((*a, da));
        }
        Op::Softmax { a } => {
            let n = *node.shape.last().unwrap();
            let mut da = Vec::with_capacity(g.len());
            for (gr, yr) in g.chunks(n).zip(node.value.chunks(n)) {
                let dot: F = gr.iter().zip(yr).map(|(&x, &y)| x * y).sum();
                da.extend(gr.iter().zip(yr).map(|(&x, &y)| y * (x - dot)));
            }
            out.push((*a, da));
        }
        Op::LogSoftmax { a } => {
            let n = *node.shape.last().unwrap();
            let mut da = Vec::with_capacity(g.len());
            for (gr, yr) in g.chunks(n).zip(node.value.chunks(n)) {
                let total: F = gr.iter().copied().sum();
                da.extend(gr.iter().zip(yr).map(|(&x, &y)| x - y.exp() * total));
            }
            out.push((*a, da));
        }
        Op::LayerNorm { x, gamma, beta, stats } => {
            let d = *node.shape.last().unwrap();
            let (xv, gv) = (val(x), val(gamma));
            let inv_d = F::lit(1.0 / d as f64);
            let mut dx = Vec::with_capacity(xv.len());
            let mut dgamma = vec![F::zero(); d];
            let mut dbeta = vec![F::zero(); d];
            for (r, (xr, gr)) in xv.chunks(d).zip(g.chunks(d)).enumerate() {
                let (mu, rstd) = (stats[2 * r], stats[2 * r + 1]);
                let xhat: Vec<F> = xr.iter().map(|&v| (v - mu) * rstd).collect();
                let dxhat: Vec<F> = gr.iter().zip(gv).map(|(&a, &b)| a * b).collect();
                let mean_d = dxhat.iter().copied().sum::<F>() * inv_d;
                let mean_dx = dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<F>() * inv_d;
                dx.extend(dxhat.iter().zip(&xhat).map(|(&dh, &h)| rstd * (dh - mean_d - h * mean_dx)));
                for j in 0..d {
                    dgamma[j] += gr[j] * xhat[j];
                    dbeta[j] += gr[j];
                }
            }
            if needs(x) {
                out.push((*x, dx));
            }
            if needs(gamma) {
                out.push((*gamma, dgamma));
            }
            if needs(beta) {
                out.push((*beta, dbeta));
            }
        }
        Op::Conv1d { x, w, b, stride, padding, groups } => {
            let (c_in, len) = (shape(x)[0], shape(x)[1]);
            let (c_out, cpg, k) = (shape(w)[0], shape(w)[1], shape(w)[2]);
            let win = Window::sweep(len, k, *stride, *padding).expect("validated in forward");
            let l_out = win.positions;
            let cog = c_out / groups;
            let (xv, wv) = (val(x), val(w));
            let mut dx = needs(x).then(|| vec![F::zero(); c_in * len]);
            let mut dw = needs(w).then(|| vec![F::zero(); wv.len()]);
            for grp in 0..*groups {
                let g_out = &g[grp * cog * l_out..(grp + 1) * cog * l_out];
                let w_rng = grp * cog * cpg * k..(grp + 1) * cog * cpg * k;
                if let Some(dw) = dw.as_mut() {
                    let cols = im2col(xv, grp * cpg, cpg, &win);
                    gemm(false, true, cog, cpg * k, l_out, g_out, &cols, &mut dw[w_rng.clone()], F::zero());
                }
                if let Some(dx) = dx.as_mut() {
                    let mut dcols = vec![F::zero(); cpg * k * l_out];
                    gemm(true, false, cpg * k, l_out, cog, &wv[w_rng], g_out, &mut dcols, F::zero());
                    col2im(&dcols, dx, grp * cpg, cpg, &win);
                }
            }
            if let Some(dx) = dx {
                out.push((*x, dx));
            }
            if let Some(dw) = dw {
                out.push((*w, dw));
            }
            if let Some(b) = b.filter(needs) {
                out.push((b, row_sums(g, c_out)));
            }
        }
        Op::ConvTranspose1d { x, w, b, stride } => {
            let (c_in, len) = (shape(x)[0], shape(x)[1]);
            let (c_out, k) = (shape(w)[1], shape(w)[2]);
            let l_out = node.shape[1];
            let win = Window::sweep(l_out, k, *stride, 0).expect("validated in forward");
            let dcols = im2col(g, 0, c_out, &win);
            if needs(x) {
                let mut dx = vec![F::zero(); c_in * len];
                gemm(false, false, c_in, len, c_out * k, val(w), &dcols, &mut dx, F::zero());
                out.push((*x, dx));
            }
            if needs(w) {
                let mut dw = vec![F::zero(); c_in * c_out * k];
                gemm(false, true, c_in, c_out * k, len, val(x), &dcols, &mut dw, F::zero());
                out.push((*w, dw));
            }
            if let Some(b) = b.filter(needs) {
                out.push((b, row_sums(g, c_out)));
            }
        }
        Op::CosineRows { a, b, eps } => {
            let d = shape(a)[1];
            let (va, vb) = (val(a), val(b));
            let mut da = Vec::with_capacity(va.len());
            let mut db = Vec::with_capacity(vb.len());
            for (t, &gt) in g.iter().enumerate() {
                let (ra, rb) = (&va[t * d..(t + 1) * d], &vb[t * d..(t + 1) * d]);
                let c = node.value[t];
                let na_raw = ra.iter().map(|&x| x * x).sum::<F>().sqrt();
                let nb_raw = rb.iter().map(|&x| x * x).sum::<F>().sqrt();
                let (na, nb) = (na_raw.max(*eps), nb_raw.max(*eps));
                // A clamped norm is locally constant, so its radial term vanishes.
                let ka = if na_raw > *eps { c / (na * na) } else { F::zero() };
                let kb = if nb_raw > *eps { c / (nb * nb) } else { F::zero() };
                let inv = F::one() / (na * nb);
                da.extend(ra.iter().zip(rb).map(|(&x, &y)| gt * (y * inv - x * ka)));
                db.extend(ra.iter().zip(rb).map(|(&x, &y)| gt * (x * inv - y * kb)));
            }
            if needs(a) {
                out.push((*a, da));
            }
            if needs(b) {
                out.push((*b, db));
            }
        }
        Op::Custom { inputs, rule } => {
            let values: Vec<&[F]> = inputs.iter().map(val).collect();
            for (v, d) in inputs.iter().zip(rule(&values, &node.value, g)) {
                if needs(v) {
                    out.push((*v, d));
                }
            }
        }
    }
    out
}
